#include "prism/exchange.hpp"

#include <zlib.h>

#include <algorithm>
#include <sstream>

#include "prism/error.hpp"

namespace prism::exchange {
namespace {

constexpr const char* kStylePrefix = "style_encoder/";
constexpr const char* kDecoderPrefix = "decoder/";

bool has_prefix(const std::string& name, const char* prefix) {
  return name.rfind(prefix, 0) == 0;
}

// Shim that lets the package run through the exact forward paths used by a
// full model, so self-harmonization reproduces reconstruction bit-for-bit.
nets::ModelParams package_as_params(const ExchangePackage& package) {
  nets::ModelParams params;
  params.hyper = package.hyper;
  params.site_id = package.site_id;
  params.tensors = package.style_encoder_tensors;
  for (const auto& [name, tensor] : package.decoder_tensors) params.tensors[name] = tensor;
  return params;
}

}  // namespace

const char* to_string(StyleMode mode) {
  return mode == StyleMode::encode ? "encode" : "prior_mean";
}

StyleMode style_mode_from_string(const std::string& text) {
  if (text == "encode") return StyleMode::encode;
  if (text == "prior_mean") return StyleMode::prior_mean;
  fail(ErrorKind::invalid_argument, "style_mode must be 'encode' or 'prior_mean', got '" + text + "'");
}

void hyper_to_header(const nets::ModelHyper& hyper, io::Container& container) {
  container.set_header("image_size", std::to_string(hyper.image_size));
  container.set_header("anatomy_channels", std::to_string(hyper.anatomy_channels));
  container.set_header("anatomy_unet_depth", std::to_string(hyper.anatomy_unet_depth));
  container.set_header("base_width", std::to_string(hyper.base_width));
  container.set_header("style_dim", std::to_string(hyper.style_dim));
  container.set_header("style_conv_blocks", std::to_string(hyper.style_conv_blocks));
  container.set_header("decoder_unet_depth", std::to_string(hyper.decoder_unet_depth));
  std::string layers;
  for (size_t i = 0; i < hyper.nce_feature_layers.size(); ++i) {
    if (i) layers += ",";
    layers += std::to_string(hyper.nce_feature_layers[i]);
  }
  container.set_header("nce_feature_layers", layers);
}

nets::ModelHyper hyper_from_header(const io::Container& container) {
  nets::ModelHyper hyper;
  hyper.image_size = std::stoi(container.header_value("image_size"));
  hyper.anatomy_channels = std::stoi(container.header_value("anatomy_channels"));
  hyper.anatomy_unet_depth = std::stoi(container.header_value("anatomy_unet_depth"));
  hyper.base_width = std::stoi(container.header_value("base_width"));
  hyper.style_dim = std::stoi(container.header_value("style_dim"));
  hyper.style_conv_blocks = std::stoi(container.header_value("style_conv_blocks"));
  hyper.decoder_unet_depth = std::stoi(container.header_value("decoder_unet_depth"));
  hyper.nce_feature_layers.clear();
  std::istringstream in(container.header_value("nce_feature_layers"));
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (!tok.empty()) hyper.nce_feature_layers.push_back(std::stoi(tok));
  }
  hyper.validate();
  return hyper;
}

std::vector<uint8_t> export_package(const nets::ModelParams& params) {
  io::Container container;
  container.set_header("kind", "package");
  container.set_header("site_id", params.site_id);
  hyper_to_header(params.hyper, container);

  int count = 0;
  for (const auto& [name, tensor] : params.tensors) {
    if (has_prefix(name, kStylePrefix) || has_prefix(name, kDecoderPrefix)) {
      container.tensors.push_back({name, tensor});
      ++count;
    }
  }
  container.set_header("tensor_count", std::to_string(count));

  // Privacy audit: only the two broadcastable tensor sets may leave a site.
  for (const auto& entry : container.tensors)
    require(has_prefix(entry.name, kStylePrefix) || has_prefix(entry.name, kDecoderPrefix),
            ErrorKind::invalid_argument, "package would leak tensor " + entry.name);
  return io::serialize_container(container);
}

ExchangePackage import_package(const std::vector<uint8_t>& bytes) {
  const io::Container container = io::parse_container(bytes);
  require(container.header_value("kind") == "package", ErrorKind::format,
          "container is not an exchange package");

  ExchangePackage package;
  package.format_version = container.version;
  package.site_id = container.header_value("site_id");
  package.hyper = hyper_from_header(container);
  package.content_checksum = static_cast<uint32_t>(
      crc32(0L, bytes.data() + 8, static_cast<uInt>(bytes.size() - 12)));

  const auto expected = nets::expected_shapes(package.hyper);
  for (const auto& entry : container.tensors) {
    auto it = expected.find(entry.name);
    require(it != expected.end(), ErrorKind::format,
            "package carries unexpected tensor " + entry.name);
    require(it->second == entry.tensor.shape(), ErrorKind::format,
            "package tensor " + entry.name + " disagrees with embedded hyper");
    if (has_prefix(entry.name, kStylePrefix)) {
      package.style_encoder_tensors[entry.name] = entry.tensor;
    } else if (has_prefix(entry.name, kDecoderPrefix)) {
      package.decoder_tensors[entry.name] = entry.tensor;
    } else {
      fail(ErrorKind::format, "package carries non-broadcastable tensor " + entry.name);
    }
  }
  require(!package.style_encoder_tensors.empty() && !package.decoder_tensors.empty(),
          ErrorKind::format, "package is missing a tensor set");
  return package;
}

void save_package(const nets::ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = export_package(params);
  io::write_file(path, bytes.data(), bytes.size());
}

ExchangePackage load_package(const std::filesystem::path& path) {
  return import_package(io::read_file(path));
}

Tensor harmonize(const nets::ModelParams& source_params, const ExchangePackage& target,
                 const Tensor& image, StyleMode mode) {
  require(source_params.hyper.image_size == target.hyper.image_size, ErrorKind::incompatible,
          "source and target were trained at different image sizes");
  require(source_params.hyper.anatomy_channels == target.hyper.anatomy_channels,
          ErrorKind::incompatible, "source and target disagree on anatomy channels");
  require(image.rank() == 2 && image.dim(0) == source_params.hyper.image_size &&
              image.dim(1) == source_params.hyper.image_size,
          ErrorKind::incompatible, "image does not match the trained image size");

  const nets::ModelParams target_params = package_as_params(target);
  const nets::AnatomyRep anatomy = nets::encode_anatomy(source_params, image);
  nets::StyleCode code;
  if (mode == StyleMode::encode) {
    const nets::StyleDist dist = nets::encode_style(target_params, image);
    code = nets::reparameterize(dist, {0.0f, 0.0f});
  } else {
    code.z = {0.0f, 0.0f};
  }
  return nets::decode(target_params, anatomy.values, code);
}

phantom::SiteDataset harmonize_dataset_mem(const nets::ModelParams& source_params,
                                           const ExchangePackage& target,
                                           const phantom::SiteDataset& dataset,
                                           StyleMode mode) {
  phantom::SiteDataset out;
  out.site_id = dataset.site_id;
  out.profile = dataset.profile;
  out.augmentations = dataset.augmentations;
  out.image_size = dataset.image_size;
  out.seed = dataset.seed;
  out.train_indices = dataset.train_indices;
  out.test_indices = dataset.test_indices;
  out.items.reserve(dataset.items.size());
  for (const auto& item : dataset.items) {
    phantom::SiteItem harmonized;
    harmonized.image.pixels = harmonize(source_params, target, item.image.pixels, mode);
    harmonized.labels = item.labels;
    harmonized.mask = item.mask;
    for (float g : dataset.augmentations.gammas)
      harmonized.augmented.push_back(phantom::gamma_augment(harmonized.image, g));
    out.items.push_back(std::move(harmonized));
  }
  return out;
}

std::vector<std::filesystem::path> harmonize_dataset(const nets::ModelParams& source_params,
                                                     const ExchangePackage& target,
                                                     const phantom::SiteDataset& dataset,
                                                     const std::filesystem::path& out_parent,
                                                     StyleMode mode) {
  const auto dir = phantom::dataset_dir(out_parent, dataset.site_id);
  try {
    const phantom::SiteDataset harmonized =
        harmonize_dataset_mem(source_params, target, dataset, mode);
    return phantom::save_dataset(harmonized, out_parent);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    throw;
  }
}

SiteRegistry SiteRegistry::load(const std::filesystem::path& path) {
  SiteRegistry registry;
  if (!std::filesystem::exists(path)) return registry;
  const auto bytes = io::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = line.rfind('\t');
    require(t1 != std::string::npos && t2 != t1, ErrorKind::format,
            "malformed registry line: " + line);
    Entry entry;
    entry.site_id = line.substr(0, t1);
    entry.package_path = line.substr(t1 + 1, t2 - t1 - 1);
    entry.import_ordinal = std::stoull(line.substr(t2 + 1));
    registry.entries.push_back(std::move(entry));
  }
  return registry;
}

void SiteRegistry::save(const std::filesystem::path& path) const {
  std::string text;
  for (const auto& entry : entries)
    text += entry.site_id + "\t" + entry.package_path + "\t" +
            std::to_string(entry.import_ordinal) + "\n";
  io::write_file(path, text.data(), text.size());
}

void SiteRegistry::add(const std::string& site_id, const std::string& package_path) {
  uint64_t next = 1;
  for (const auto& entry : entries) next = std::max(next, entry.import_ordinal + 1);
  for (auto& entry : entries) {
    if (entry.site_id == site_id) {
      entry.package_path = package_path;
      entry.import_ordinal = next;
      return;
    }
  }
  entries.push_back({site_id, package_path, next});
}

const SiteRegistry::Entry* SiteRegistry::find(const std::string& site_id) const {
  for (const auto& entry : entries)
    if (entry.site_id == site_id) return &entry;
  return nullptr;
}

}  // namespace prism::exchange
