#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prism/tensor.hpp"

namespace prism::phantom {

// Tissue labels. Background must stay 0; styled/preprocessed images keep
// background pixels at exactly zero intensity.
enum Tissue : uint8_t { kBackground = 0, kCsf = 1, kGm = 2, kWm = 3 };
inline constexpr int kTissueCount = 4;
const char* tissue_name(int label);

struct Image {
  Tensor pixels;  // [H,W], values in [0,1]
  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }
};

struct LabelMask {
  std::vector<uint8_t> labels;  // row-major, values in {0,1,2,3}
  int height = 0;
  int width = 0;
};

struct BrainMask {
  std::vector<uint8_t> mask;  // 1 = brain
  int height = 0;
  int width = 0;
};

struct SiteProfile {
  std::string site_id;
  // Indexed by Tissue (index 0 unused).
  std::array<float, kTissueCount> tissue_means{0.0f, 0.85f, 0.55f, 0.35f};
  std::array<float, kTissueCount> tissue_stds{0.0f, 0.03f, 0.03f, 0.03f};
  float gamma = 1.0f;
  float bias_field_amplitude = 0.1f;
  float bias_field_smoothness = 12.0f;  // correlation length in pixels
  float noise_std = 0.01f;
  float contrast_scale = 1.0f;
  int image_count = 100;

  void validate() const;
};

struct AugmentationSpec {
  std::vector<float> gammas = {0.5f, 1.5f};
};

struct SiteItem {
  Image image;
  LabelMask labels;
  BrainMask mask;
  std::vector<Image> augmented;
};

struct SiteDataset {
  std::string site_id;
  SiteProfile profile;
  AugmentationSpec augmentations;
  int image_size = 0;
  uint64_t seed = 0;
  std::vector<SiteItem> items;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

// Deterministic pseudo-brain: deformed outer ellipse (CSF ring), cortical
// band (GM), central core (WM); base intensity 1.0 inside the head.
std::pair<Image, LabelMask> generate_phantom(uint64_t seed, int size);

BrainMask brain_mask_from_labels(const LabelMask& labels);

Image apply_site_style(const Image& img, const LabelMask& labels, const SiteProfile& profile,
                       uint64_t seed);

Image gamma_augment(const Image& img, float gamma);

// Rescales so the 99th percentile inside the mask maps to 1 (nearest-rank),
// forces background to 0, resizes to out_size if needed.
Image preprocess(const Image& raw, const BrainMask& brain, int out_size);

SiteDataset build_site_dataset(const SiteProfile& profile, const AugmentationSpec& aug,
                               uint64_t seed, int image_size);

// Default three-site experiment profiles (skewed counts 319/185/77;
// site_a is the low-noise target analog).
std::vector<SiteProfile> default_site_profiles();

// Directory layout under parent: site_<id>/{images,labels,masks,aug}/...,
// split.txt, profile.txt.
std::filesystem::path dataset_dir(const std::filesystem::path& parent, const std::string& site_id);
std::vector<std::filesystem::path> save_dataset(const SiteDataset& dataset,
                                                const std::filesystem::path& parent);
SiteDataset load_dataset(const std::filesystem::path& parent, const std::string& site_id);

}  // namespace prism::phantom
