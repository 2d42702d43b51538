#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prism/io.hpp"
#include "prism/nets.hpp"
#include "prism/phantom.hpp"

namespace prism::exchange {

// How the style code is chosen at harmonization time: pass the source image
// through the target's style encoder, or condition on the prior mean z = 0.
enum class StyleMode { encode, prior_mean };

const char* to_string(StyleMode mode);
StyleMode style_mode_from_string(const std::string& text);

// The broadcastable unit of the protocol: a target site's style encoder and
// decoder, and nothing else. Never contains anatomy-encoder tensors or
// image data.
struct ExchangePackage {
  uint32_t format_version = io::kContainerVersion;
  std::string site_id;
  nets::ModelHyper hyper;
  std::map<std::string, Tensor> style_encoder_tensors;
  std::map<std::string, Tensor> decoder_tensors;
  uint32_t content_checksum = 0;
};

std::vector<uint8_t> export_package(const nets::ModelParams& params);
ExchangePackage import_package(const std::vector<uint8_t>& bytes);

void save_package(const nets::ModelParams& params, const std::filesystem::path& path);
ExchangePackage load_package(const std::filesystem::path& path);

// Source anatomy + target style/decoder. Deterministic inference: z = mu.
Tensor harmonize(const nets::ModelParams& source_params, const ExchangePackage& target,
                 const Tensor& image, StyleMode mode = StyleMode::encode);

// Harmonizes every image (train and test), keeps labels/masks/split intact,
// regenerates gamma augmentations from the harmonized images, and writes the
// phantom dataset layout under out_parent. Partial output is removed on
// failure.
std::vector<std::filesystem::path> harmonize_dataset(const nets::ModelParams& source_params,
                                                     const ExchangePackage& target,
                                                     const phantom::SiteDataset& dataset,
                                                     const std::filesystem::path& out_parent,
                                                     StyleMode mode = StyleMode::encode);

// In-memory variant used by the evaluation suite.
phantom::SiteDataset harmonize_dataset_mem(const nets::ModelParams& source_params,
                                           const ExchangePackage& target,
                                           const phantom::SiteDataset& dataset,
                                           StyleMode mode = StyleMode::encode);

// Multi-site bookkeeping: site_id -> package path, recorded with a logical
// import ordinal (wall-clock stamps would break reproducible re-runs).
struct SiteRegistry {
  struct Entry {
    std::string site_id;
    std::string package_path;
    uint64_t import_ordinal = 0;
  };
  std::vector<Entry> entries;

  static SiteRegistry load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  void add(const std::string& site_id, const std::string& package_path);
  const Entry* find(const std::string& site_id) const;
};

// Shared header helpers (packages and checkpoints carry the same hyper
// metadata).
void hyper_to_header(const nets::ModelHyper& hyper, io::Container& container);
nets::ModelHyper hyper_from_header(const io::Container& container);

}  // namespace prism::exchange
