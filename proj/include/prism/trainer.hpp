#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "prism/losses.hpp"
#include "prism/nets.hpp"
#include "prism/phantom.hpp"

namespace prism::trainer {

struct TrainConfig {
  int steps = 500;
  int batch_size = 8;
  float learning_rate = 2e-4f;
  float adam_beta1 = 0.5f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  uint64_t seed = 42;
  losses::LossWeights weights;
  losses::NceConfig nce;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  uint64_t perceptual_seed = 7777;
  std::filesystem::path perceptual_weights;  // optional pretrained features

  void validate() const;
};

struct TrainHistory {
  std::vector<losses::LossReport> steps;
  std::vector<double> wall_ms;
};

// Local training of one site's model. Touches only this site's dataset.
std::pair<nets::ModelParams, TrainHistory> train_site(const phantom::SiteDataset& dataset,
                                                      const nets::ModelHyper& hyper,
                                                      const TrainConfig& cfg);

// Checkpoints reuse the exchange container with the full tensor set plus the
// recorded history; round-trips are bit-exact.
void save_checkpoint(const nets::ModelParams& params, const TrainHistory& history,
                     const std::filesystem::path& path);
std::pair<nets::ModelParams, TrainHistory> load_checkpoint(const std::filesystem::path& path);

// CSV: step,rec,perc,nce,kl,cyc_anat,cyc_style,total,wall_ms
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

// Plain Adam; exposed for the probe/segmenter training loops.
class AdamOptimizer {
 public:
  AdamOptimizer(float lr, float beta1, float beta2, float eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::map<std::string, Tensor>& params, const nets::VarBank& bank);

 private:
  float lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> state_;  // m, v
};

}  // namespace prism::trainer
