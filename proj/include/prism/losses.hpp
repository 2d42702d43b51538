#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prism/autodiff.hpp"
#include "prism/nets.hpp"
#include "prism/rng.hpp"

namespace prism::losses {

struct NceConfig {
  int patches_per_image = 128;
  int embed_dim = 64;
  float temperature = 0.07f;
  bool include_raw_image_negatives = true;

  void validate() const;
};

struct LossWeights {
  float rec = 10.0f;
  float perc = 1.0f;
  float nce = 1.0f;
  float kl = 0.01f;
  float cyc_anat = 1.0f;
  float cyc_style = 1.0f;

  void validate() const;
};

struct LossTerms {
  ad::Var rec, perc, nce, kl, cyc_anat, cyc_style;
};

struct LossReport {
  double rec = 0, perc = 0, nce = 0, kl = 0, cyc_anat = 0, cyc_style = 0;
  double total = 0;
};

struct TotalLoss {
  ad::Var value;  // weighted sum, scalar
  LossReport report;
};

ad::Var l1_loss(const ad::Var& x, const ad::Var& y);

// Mean over batch of 1/2 sum_d (mu^2 + e^logvar - 1 - logvar); inputs [N,2].
ad::Var kl_divergence(const ad::Var& mu, const ad::Var& logvar);
double kl_divergence(const nets::StyleDist& dist);

// Uniform sample of `count` spatial positions without replacement,
// deterministic from seed; returns row-major flat indices.
std::vector<int> sample_patch_locations(int height, int width, int count, uint64_t seed);

// Frozen random conv stack standing in for a pretrained feature extractor;
// can be persisted/loaded through the exchange container format.
struct PerceptualExtractor {
  uint64_t seed = 0;
  std::map<std::string, Tensor> tensors;
  int blocks = 0;

  static PerceptualExtractor random(uint64_t seed);
  static PerceptualExtractor from_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

ad::Var perceptual_loss(const PerceptualExtractor& extractor, const ad::Var& x, const ad::Var& y);

// PatchNCE over projected patch embeddings. Per feature layer, per image:
// queries come from the augmented-image rep, positives from the source rep
// at the same locations; negatives are other locations of the same source
// rep, all patches of other images' source reps, and (optionally) raw
// source-image intensity patches pushed through the same projection head.
struct NceLayerBatch {
  int layer_index = 0;              // projection head key
  std::vector<ad::Var> queries;     // per image [L,C]
  std::vector<ad::Var> positives;   // per image [L,C]
  std::vector<ad::Var> raw;         // per image [L,1]; empty if unused
};

ad::Var patchnce_loss(const nets::VarBank& projection, const std::vector<NceLayerBatch>& layers,
                      const NceConfig& cfg);

// Projection head used by patchnce_loss (exposed for the unit-norm checks).
ad::Var nce_project(const nets::VarBank& projection, int layer_index, const ad::Var& feats);

struct CycleLosses {
  ad::Var anat;
  ad::Var style;
};

// Re-encodes the reconstruction through both encoders and penalizes drift
// from the original representations.
CycleLosses cycle_losses(const nets::VarBank& bank, const nets::ModelHyper& hyper,
                         const ad::Var& recon, const ad::Var& anatomy_values, const ad::Var& mu);

TotalLoss total_loss(const LossWeights& weights, const LossTerms& terms);

}  // namespace prism::losses
