#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/exchange.hpp"
#include "prism/nets.hpp"
#include "prism/phantom.hpp"

namespace prism::evalsuite {

// ---- image-quality metrics (data range 1.0) ----

double mse(const Tensor& x, const Tensor& y);
// -10 log10(MSE); +infinity when MSE is exactly zero.
double psnr(const Tensor& x, const Tensor& y);
// Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03.
double ssim(const Tensor& x, const Tensor& y);

// Overlap metrics on binary masks; two empty masks count as perfect overlap.
double dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);
double iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

struct MetricRow {
  std::string site_id;
  std::string condition;  // recon | anatomy_preservation
  double ssim = 0, psnr_db = 0, mse = 0;
};

// Deterministic reconstruction (eps = 0) on the test split.
MetricRow eval_reconstruction(const nets::ModelParams& params,
                              const phantom::SiteDataset& dataset);
// Harmonized test images vs their un-harmonized sources.
MetricRow eval_anatomy_preservation(const nets::ModelParams& source,
                                    const exchange::ExchangePackage& target,
                                    const phantom::SiteDataset& dataset,
                                    exchange::StyleMode mode = exchange::StyleMode::encode);

// ---- site-classification probe ----

struct ProbeParams {
  std::map<std::string, Tensor> tensors;
  uint64_t seed = 0;
  int num_classes = 0;
  int image_size = 0;
  std::vector<std::vector<int>> trained_indices;  // per site, for the leakage audit
};

ProbeParams train_site_classifier(const std::vector<const phantom::SiteDataset*>& datasets,
                                  uint64_t seed, int steps = 300, int batch_size = 16,
                                  float learning_rate = 1e-3f);
int probe_predict(const ProbeParams& probe, const Tensor& image);
double probe_train_accuracy(const ProbeParams& probe,
                            const std::vector<const phantom::SiteDataset*>& datasets);

struct SiteClassReport {
  std::vector<std::string> site_ids;
  std::vector<double> recall_pre, recall_post;
  double weighted_f1_pre = 0, weighted_f1_post = 0;
  std::vector<std::vector<double>> confusion_pre, confusion_post;  // [true][pred]
  double target_capture_post = 0;  // non-target test images predicted as target
};

SiteClassReport eval_site_classification(const ProbeParams& probe,
                                         const std::vector<const phantom::SiteDataset*>& pre,
                                         const std::vector<const phantom::SiteDataset*>& post,
                                         const std::string& target_id);
SiteClassReport average_class_reports(const std::vector<SiteClassReport>& reports);

double weighted_f1(const std::vector<std::vector<double>>& confusion);

// ---- latent style distributions ----

struct GaussianFit {
  std::array<double, 2> mean{};
  std::array<std::array<double, 2>, 2> cov{};
};

GaussianFit fit_gaussian(const std::vector<std::array<double, 2>>& points);
double wasserstein2_gaussian(const GaussianFit& a, const GaussianFit& b);

struct StyleSiteEntry {
  std::string site_id;
  std::vector<std::array<double, 2>> points_pre, points_post;
  GaussianFit fit_pre, fit_post;
  double w2_pre_to_target = 0, w2_post_to_target = 0;
};

struct StyleLatentSummary {
  std::string target_id;
  std::vector<StyleSiteEntry> sites;
};

// Pre: each site's own style encoder on its own test images. Post: the
// target's style encoder on the harmonized test images.
StyleLatentSummary style_latent_summary(const std::vector<const nets::ModelParams*>& models,
                                        const exchange::ExchangePackage& target_package,
                                        const std::vector<const phantom::SiteDataset*>& pre,
                                        const std::vector<const phantom::SiteDataset*>& post,
                                        const std::string& target_id);

// ---- downstream tissue segmentation ----

struct SegmenterParams {
  std::map<std::string, Tensor> tensors;
  uint64_t seed = 0;
  int image_size = 0;
  std::vector<int> trained_indices;
};

SegmenterParams train_segmenter(const phantom::SiteDataset& target_dataset, uint64_t seed,
                                int steps = 400, int batch_size = 8,
                                float learning_rate = 1e-3f);
std::vector<uint8_t> segment_image(const SegmenterParams& segmenter, const Tensor& image);

struct SegRow {
  std::string site_id;
  std::string tissue;  // gm | wm | csf
  double dice_pre = 0, iou_pre = 0, dice_post = 0, iou_post = 0;
};

struct SegReport {
  std::vector<SegRow> rows;
};

SegReport eval_segmentation(const SegmenterParams& segmenter,
                            const std::vector<const phantom::SiteDataset*>& pre,
                            const std::vector<const phantom::SiteDataset*>& post,
                            const std::string& target_id);
SegReport average_seg_reports(const std::vector<SegReport>& reports);

// ---- report emission ----

nlohmann::json to_json(const MetricRow& row);
nlohmann::json to_json(const SiteClassReport& report);
nlohmann::json to_json(const StyleLatentSummary& summary);
nlohmann::json to_json(const SegReport& report);

// Encodes non-finite metric values as the string "inf".
nlohmann::json json_metric(double value);
double metric_from_json(const nlohmann::json& value);

// Writes summary.json plus whichever of table1/2/3.csv and the style
// scatter SVGs have their sections present in `summary`.
std::vector<std::filesystem::path> emit_report(const nlohmann::json& summary,
                                               const std::filesystem::path& out_dir);

}  // namespace prism::evalsuite
