#include "prism/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "prism/error.hpp"
#include "prism/io.hpp"
#include "prism/rng.hpp"

namespace prism::phantom {
namespace {

constexpr double kPi = 3.14159265358979323846;
// One 16-bit quantization step: keeps brain support strictly positive after
// PGM round-trips, so mask background remains exactly the zero-intensity set.
constexpr float kBrainFloor = 1.0f / 65535.0f;

uint64_t derive_seed(uint64_t base, uint64_t stream) { return Rng(base).derive(stream).root_seed(); }

std::string format_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

uint16_t quantize16(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint16_t>(std::lround(c * 65535.0f));
}

void check_shapes(int h1, int w1, int h2, int w2, const char* what) {
  require(h1 == h2 && w1 == w2, ErrorKind::invalid_argument,
          std::string(what) + ": shape mismatch");
}

// Bilinear sample with edge clamping; `grid` is gh x gw row-major.
double bilinear(const std::vector<double>& grid, int gh, int gw, double y, double x) {
  const double cy = std::min(std::max(y, 0.0), static_cast<double>(gh - 1));
  const double cx = std::min(std::max(x, 0.0), static_cast<double>(gw - 1));
  const int y0 = std::min(static_cast<int>(cy), gh - 2 >= 0 ? gh - 2 : 0);
  const int x0 = std::min(static_cast<int>(cx), gw - 2 >= 0 ? gw - 2 : 0);
  const int y1 = std::min(y0 + 1, gh - 1);
  const int x1 = std::min(x0 + 1, gw - 1);
  const double fy = cy - y0;
  const double fx = cx - x0;
  const double top = grid[static_cast<size_t>(y0) * gw + x0] * (1.0 - fx) +
                     grid[static_cast<size_t>(y0) * gw + x1] * fx;
  const double bot = grid[static_cast<size_t>(y1) * gw + x0] * (1.0 - fx) +
                     grid[static_cast<size_t>(y1) * gw + x1] * fx;
  return top * (1.0 - fy) + bot * fy;
}

Image resize_bilinear(const Image& src, int out_size) {
  const int H = src.height(), W = src.width();
  Image out{Tensor({out_size, out_size})};
  const float* s = src.pixels.data();
  float* d = out.pixels.data();
  const double sy = static_cast<double>(H) / out_size;
  const double sx = static_cast<double>(W) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const double y = (i + 0.5) * sy - 0.5;
    for (int j = 0; j < out_size; ++j) {
      const double x = (j + 0.5) * sx - 0.5;
      const double cy = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
      const double cx = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
      const int y0 = std::min(static_cast<int>(cy), H - 2);
      const int x0 = std::min(static_cast<int>(cx), W - 2);
      const double fy = cy - y0;
      const double fx = cx - x0;
      const double top = s[y0 * W + x0] * (1.0 - fx) + s[y0 * W + x0 + 1] * fx;
      const double bot = s[(y0 + 1) * W + x0] * (1.0 - fx) + s[(y0 + 1) * W + x0 + 1] * fx;
      d[static_cast<int64_t>(i) * out_size + j] = static_cast<float>(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

BrainMask resize_nearest(const BrainMask& src, int out_size) {
  BrainMask out;
  out.height = out.width = out_size;
  out.mask.resize(static_cast<size_t>(out_size) * out_size);
  const double sy = static_cast<double>(src.height) / out_size;
  const double sx = static_cast<double>(src.width) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const int yi = std::min(src.height - 1, static_cast<int>((i + 0.5) * sy));
    for (int j = 0; j < out_size; ++j) {
      const int xj = std::min(src.width - 1, static_cast<int>((j + 0.5) * sx));
      out.mask[static_cast<size_t>(i) * out_size + j] =
          src.mask[static_cast<size_t>(yi) * src.width + xj];
    }
  }
  return out;
}

}  // namespace

const char* tissue_name(int label) {
  switch (label) {
    case kBackground: return "background";
    case kCsf: return "csf";
    case kGm: return "gm";
    case kWm: return "wm";
  }
  return "unknown";
}

void SiteProfile::validate() const {
  require(!site_id.empty(), ErrorKind::invalid_argument, "site_id must be non-empty");
  for (int t = 1; t < kTissueCount; ++t) {
    require(tissue_means[static_cast<size_t>(t)] > 0.0f && tissue_means[static_cast<size_t>(t)] < 1.0f,
            ErrorKind::invalid_argument, "tissue means must lie in (0,1)");
    require(tissue_stds[static_cast<size_t>(t)] >= 0.0f, ErrorKind::invalid_argument,
            "tissue stds must be >= 0");
    for (int u = t + 1; u < kTissueCount; ++u) {
      require(tissue_means[static_cast<size_t>(t)] != tissue_means[static_cast<size_t>(u)],
              ErrorKind::invalid_argument, "tissue means must be pairwise distinct");
    }
  }
  require(gamma > 0.0f, ErrorKind::invalid_argument, "profile gamma must be > 0");
  require(bias_field_amplitude >= 0.0f, ErrorKind::invalid_argument, "bias amplitude must be >= 0");
  require(bias_field_smoothness > 0.0f, ErrorKind::invalid_argument, "bias smoothness must be > 0");
  require(noise_std >= 0.0f, ErrorKind::invalid_argument, "noise std must be >= 0");
  require(contrast_scale > 0.0f, ErrorKind::invalid_argument, "contrast scale must be > 0");
  require(image_count > 0, ErrorKind::invalid_argument, "image_count must be positive");
}

std::pair<Image, LabelMask> generate_phantom(uint64_t seed, int size) {
  require(size >= 32, ErrorKind::invalid_argument, "phantom size must be >= 32");
  Rng rng(seed);
  const double cx = 0.5 + rng.uniform(-0.03, 0.03);
  const double cy = 0.5 + rng.uniform(-0.03, 0.03);
  const double ax = 0.38 * (1.0 + rng.uniform(-0.08, 0.08));
  const double ay = 0.32 * (1.0 + rng.uniform(-0.08, 0.08));
  // Low-frequency boundary perturbation.
  std::array<double, 4> amp{}, phase{};
  for (int k = 0; k < 4; ++k) {
    amp[static_cast<size_t>(k)] = rng.uniform(0.0, 0.03);
    phase[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * kPi);
  }

  Image img{Tensor({size, size})};
  LabelMask labels;
  labels.height = labels.width = size;
  labels.labels.assign(static_cast<size_t>(size) * size, kBackground);
  float* px = img.pixels.data();
  for (int i = 0; i < size; ++i) {
    const double y = (i + 0.5) / size;
    for (int j = 0; j < size; ++j) {
      const double x = (j + 0.5) / size;
      const double dx = (x - cx) / ax;
      const double dy = (y - cy) / ay;
      const double rho0 = std::sqrt(dx * dx + dy * dy);
      const double theta = std::atan2(dy, dx);
      double perturb = 1.0;
      for (int k = 0; k < 4; ++k)
        perturb += amp[static_cast<size_t>(k)] * std::sin((k + 2) * theta + phase[static_cast<size_t>(k)]);
      const double rho = rho0 / perturb;
      uint8_t label = kBackground;
      if (rho <= 1.0) {
        if (rho > 0.86) label = kCsf;
        else if (rho > 0.52) label = kGm;
        else label = kWm;
      }
      labels.labels[static_cast<size_t>(i) * size + j] = label;
      px[static_cast<int64_t>(i) * size + j] = label == kBackground ? 0.0f : 1.0f;
    }
  }
  return {std::move(img), std::move(labels)};
}

BrainMask brain_mask_from_labels(const LabelMask& labels) {
  BrainMask mask;
  mask.height = labels.height;
  mask.width = labels.width;
  mask.mask.resize(labels.labels.size());
  for (size_t i = 0; i < labels.labels.size(); ++i)
    mask.mask[i] = labels.labels[i] != kBackground ? 1 : 0;
  return mask;
}

Image apply_site_style(const Image& img, const LabelMask& labels, const SiteProfile& profile,
                       uint64_t seed) {
  check_shapes(img.height(), img.width(), labels.height, labels.width, "apply_site_style");
  profile.validate();
  const int H = img.height(), W = img.width();
  Rng rng(seed);

  // One intensity draw per tissue per image.
  std::array<double, kTissueCount> tissue_value{};
  for (int t = 1; t < kTissueCount; ++t)
    tissue_value[static_cast<size_t>(t)] =
        rng.normal(profile.tissue_means[static_cast<size_t>(t)], profile.tissue_stds[static_cast<size_t>(t)]);

  // Smooth multiplicative bias: coarse random grid, bilinear upsample.
  const int gw = std::max(2, static_cast<int>(std::ceil(W / profile.bias_field_smoothness)) + 1);
  const int gh = std::max(2, static_cast<int>(std::ceil(H / profile.bias_field_smoothness)) + 1);
  std::vector<double> grid(static_cast<size_t>(gw) * gh);
  for (auto& g : grid) g = 1.0 + profile.bias_field_amplitude * rng.uniform(-1.0, 1.0);

  Image out{Tensor({H, W})};
  float* dst = out.pixels.data();
  const double gamma = profile.gamma;
  const double contrast = profile.contrast_scale;
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const size_t idx = static_cast<size_t>(i) * W + j;
      const double noise = profile.noise_std > 0.0f ? rng.normal(0.0, profile.noise_std) : 0.0;
      const uint8_t label = labels.labels[idx];
      if (label == kBackground) {
        dst[idx] = 0.0f;
        continue;
      }
      double v = tissue_value[label] * img.pixels.data()[idx];
      v *= bilinear(grid, gh, gw, i / profile.bias_field_smoothness, j / profile.bias_field_smoothness);
      v = std::pow(std::max(v, 0.0), gamma);
      v = 0.5 + contrast * (v - 0.5);
      v += noise;
      dst[idx] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
  }
  return out;
}

Image gamma_augment(const Image& img, float gamma) {
  require(gamma > 0.0f, ErrorKind::invalid_argument, "gamma must be > 0");
  Image out{Tensor({img.height(), img.width()})};
  const float* src = img.pixels.data();
  float* dst = out.pixels.data();
  const int64_t n = img.pixels.numel();
  if (gamma == 1.0f) {
    std::copy(src, src + n, dst);
    return out;
  }
  for (int64_t i = 0; i < n; ++i)
    dst[i] = static_cast<float>(std::pow(static_cast<double>(src[i]), static_cast<double>(gamma)));
  return out;
}

Image preprocess(const Image& raw, const BrainMask& brain, int out_size) {
  check_shapes(raw.height(), raw.width(), brain.height, brain.width, "preprocess");
  std::vector<float> inside;
  inside.reserve(brain.mask.size());
  const float* src = raw.pixels.data();
  for (size_t i = 0; i < brain.mask.size(); ++i)
    if (brain.mask[i]) inside.push_back(src[i]);
  require(!inside.empty(), ErrorKind::degenerate_input, "preprocess: empty brain mask");

  // Nearest-rank 99th percentile.
  std::sort(inside.begin(), inside.end());
  const auto n = static_cast<int64_t>(inside.size());
  int64_t idx = static_cast<int64_t>(std::ceil(0.99 * static_cast<double>(n))) - 1;
  idx = std::min(n - 1, std::max<int64_t>(0, idx));
  const double p99 = inside[static_cast<size_t>(idx)];
  require(p99 > 0.0, ErrorKind::degenerate_input, "preprocess: brain region has no intensity");

  const double scale = 1.0 / p99;
  Image scaled{Tensor({raw.height(), raw.width()})};
  float* dst = scaled.pixels.data();
  for (size_t i = 0; i < brain.mask.size(); ++i) {
    if (!brain.mask[i]) {
      dst[i] = 0.0f;
      continue;
    }
    const double v = std::min(1.0, std::max(0.0, src[i] * scale));
    dst[i] = std::max(kBrainFloor, static_cast<float>(v));
  }

  if (raw.height() == out_size && raw.width() == out_size) return scaled;

  Image resized = resize_bilinear(scaled, out_size);
  const BrainMask mask_rs = resize_nearest(brain, out_size);
  float* rp = resized.pixels.data();
  for (size_t i = 0; i < mask_rs.mask.size(); ++i) {
    if (!mask_rs.mask[i]) rp[i] = 0.0f;
    else rp[i] = std::max(kBrainFloor, std::min(1.0f, rp[i]));
  }
  return resized;
}

SiteDataset build_site_dataset(const SiteProfile& profile, const AugmentationSpec& aug,
                               uint64_t seed, int image_size) {
  profile.validate();
  require(profile.image_count >= 10, ErrorKind::invalid_argument,
          "image_count must be >= 10 (90/10 split degenerates)");
  for (float g : aug.gammas)
    require(g > 0.0f, ErrorKind::invalid_argument, "augmentation gammas must be > 0");

  SiteDataset ds;
  ds.site_id = profile.site_id;
  ds.profile = profile;
  ds.augmentations = aug;
  ds.image_size = image_size;
  ds.seed = seed;
  ds.items.reserve(static_cast<size_t>(profile.image_count));

  for (int i = 0; i < profile.image_count; ++i) {
    auto [base, labels] = generate_phantom(derive_seed(seed, 0x1000 + static_cast<uint64_t>(i)),
                                           image_size);
    const Image styled = apply_site_style(base, labels, profile,
                                          derive_seed(seed, 0x2000'0000 + static_cast<uint64_t>(i)));
    BrainMask mask = brain_mask_from_labels(labels);
    SiteItem item;
    item.image = preprocess(styled, mask, image_size);
    item.labels = std::move(labels);
    item.mask = std::move(mask);
    for (float g : aug.gammas) item.augmented.push_back(gamma_augment(item.image, g));
    ds.items.push_back(std::move(item));
  }

  const int n = profile.image_count;
  const int n_test = static_cast<int>(std::lround(0.1 * n));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng split_rng(derive_seed(seed, 0xA11));
  split_rng.shuffle(order);
  ds.test_indices.assign(order.begin(), order.begin() + n_test);
  ds.train_indices.assign(order.begin() + n_test, order.end());
  std::sort(ds.test_indices.begin(), ds.test_indices.end());
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  return ds;
}

std::vector<SiteProfile> default_site_profiles() {
  SiteProfile a;
  a.site_id = "site_a";
  a.tissue_means = {0.0f, 0.85f, 0.55f, 0.30f};
  a.tissue_stds = {0.0f, 0.02f, 0.02f, 0.02f};
  a.gamma = 1.0f;
  a.bias_field_amplitude = 0.05f;
  a.bias_field_smoothness = 16.0f;
  a.noise_std = 0.005f;
  a.contrast_scale = 1.0f;
  a.image_count = 319;

  SiteProfile b;
  b.site_id = "site_b";
  b.tissue_means = {0.0f, 0.80f, 0.62f, 0.45f};
  b.tissue_stds = {0.0f, 0.04f, 0.04f, 0.04f};
  b.gamma = 0.80f;
  b.bias_field_amplitude = 0.10f;
  b.bias_field_smoothness = 12.0f;
  b.noise_std = 0.010f;
  b.contrast_scale = 0.9f;
  b.image_count = 185;

  SiteProfile c;
  c.site_id = "site_c";
  c.tissue_means = {0.0f, 0.90f, 0.45f, 0.20f};
  c.tissue_stds = {0.0f, 0.05f, 0.05f, 0.05f};
  c.gamma = 1.30f;
  c.bias_field_amplitude = 0.15f;
  c.bias_field_smoothness = 10.0f;
  c.noise_std = 0.015f;
  c.contrast_scale = 1.1f;
  c.image_count = 77;

  return {a, b, c};
}

std::filesystem::path dataset_dir(const std::filesystem::path& parent, const std::string& site_id) {
  return parent / ("site_" + site_id);
}

namespace {

void write_image_pgm(const std::filesystem::path& path, const Image& img,
                     std::vector<std::filesystem::path>& manifest) {
  std::vector<uint16_t> q(static_cast<size_t>(img.pixels.numel()));
  const float* src = img.pixels.data();
  for (size_t i = 0; i < q.size(); ++i) q[i] = quantize16(src[i]);
  io::write_pgm16(path, q.data(), img.height(), img.width());
  manifest.push_back(path);
}

Image read_image_pgm(const std::filesystem::path& path, int expect_size) {
  const io::PgmImage pgm = io::read_pgm16(path);
  require(pgm.height == expect_size && pgm.width == expect_size, ErrorKind::format,
          "unexpected image size in " + path.string());
  Image img{Tensor({pgm.height, pgm.width})};
  float* dst = img.pixels.data();
  for (size_t i = 0; i < pgm.values.size(); ++i)
    dst[i] = static_cast<float>(pgm.values[i]) / 65535.0f;
  return img;
}

}  // namespace

std::vector<std::filesystem::path> save_dataset(const SiteDataset& dataset,
                                                const std::filesystem::path& parent) {
  const auto dir = dataset_dir(parent, dataset.site_id);
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  std::filesystem::create_directories(dir / "masks");
  std::filesystem::create_directories(dir / "aug");

  std::vector<std::filesystem::path> manifest;
  for (size_t i = 0; i < dataset.items.size(); ++i) {
    const auto& item = dataset.items[i];
    const std::string idx = std::to_string(i);
    write_image_pgm(dir / "images" / (idx + ".pgm"), item.image, manifest);

    std::vector<uint16_t> lab(item.labels.labels.begin(), item.labels.labels.end());
    io::write_pgm16(dir / "labels" / (idx + ".pgm"), lab.data(), item.labels.height,
                    item.labels.width);
    manifest.push_back(dir / "labels" / (idx + ".pgm"));

    std::vector<uint16_t> msk(item.mask.mask.begin(), item.mask.mask.end());
    io::write_pgm16(dir / "masks" / (idx + ".pgm"), msk.data(), item.mask.height, item.mask.width);
    manifest.push_back(dir / "masks" / (idx + ".pgm"));

    for (size_t k = 0; k < item.augmented.size(); ++k)
      write_image_pgm(dir / "aug" / (idx + "_" + std::to_string(k) + ".pgm"), item.augmented[k],
                      manifest);
  }

  std::string split;
  std::vector<char> role(dataset.items.size(), 'x');
  for (int i : dataset.train_indices) role[static_cast<size_t>(i)] = 't';
  for (int i : dataset.test_indices) role[static_cast<size_t>(i)] = 'e';
  for (size_t i = 0; i < role.size(); ++i) {
    require(role[i] != 'x', ErrorKind::invalid_argument, "split does not cover all items");
    split += (role[i] == 't' ? "train " : "test ") + std::to_string(i) + "\n";
  }
  io::write_file(dir / "split.txt", split.data(), split.size());
  manifest.push_back(dir / "split.txt");

  const auto& p = dataset.profile;
  std::string prof;
  prof += "site_id=" + p.site_id + "\n";
  prof += "image_size=" + std::to_string(dataset.image_size) + "\n";
  prof += "image_count=" + std::to_string(p.image_count) + "\n";
  prof += "seed=" + std::to_string(dataset.seed) + "\n";
  prof += "tissue_mean_csf=" + format_float(p.tissue_means[kCsf]) + "\n";
  prof += "tissue_mean_gm=" + format_float(p.tissue_means[kGm]) + "\n";
  prof += "tissue_mean_wm=" + format_float(p.tissue_means[kWm]) + "\n";
  prof += "tissue_std_csf=" + format_float(p.tissue_stds[kCsf]) + "\n";
  prof += "tissue_std_gm=" + format_float(p.tissue_stds[kGm]) + "\n";
  prof += "tissue_std_wm=" + format_float(p.tissue_stds[kWm]) + "\n";
  prof += "gamma=" + format_float(p.gamma) + "\n";
  prof += "bias_field_amplitude=" + format_float(p.bias_field_amplitude) + "\n";
  prof += "bias_field_smoothness=" + format_float(p.bias_field_smoothness) + "\n";
  prof += "noise_std=" + format_float(p.noise_std) + "\n";
  prof += "contrast_scale=" + format_float(p.contrast_scale) + "\n";
  std::string gammas;
  for (size_t k = 0; k < dataset.augmentations.gammas.size(); ++k) {
    if (k) gammas += ",";
    gammas += format_float(dataset.augmentations.gammas[k]);
  }
  prof += "augment_gammas=" + gammas + "\n";
  io::write_file(dir / "profile.txt", prof.data(), prof.size());
  manifest.push_back(dir / "profile.txt");
  return manifest;
}

SiteDataset load_dataset(const std::filesystem::path& parent, const std::string& site_id) {
  const auto dir = dataset_dir(parent, site_id);
  const auto profile_bytes = io::read_file(dir / "profile.txt");
  std::map<std::string, std::string> kv;
  {
    std::string text(profile_bytes.begin(), profile_bytes.end());
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      require(eq != std::string::npos, ErrorKind::format, "malformed profile.txt line: " + line);
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto get = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    require(it != kv.end(), ErrorKind::format, "profile.txt missing key " + key);
    return it->second;
  };

  SiteDataset ds;
  ds.site_id = get("site_id");
  ds.image_size = std::stoi(get("image_size"));
  ds.seed = std::stoull(get("seed"));
  SiteProfile& p = ds.profile;
  p.site_id = ds.site_id;
  p.image_count = std::stoi(get("image_count"));
  p.tissue_means = {0.0f, std::stof(get("tissue_mean_csf")), std::stof(get("tissue_mean_gm")),
                    std::stof(get("tissue_mean_wm"))};
  p.tissue_stds = {0.0f, std::stof(get("tissue_std_csf")), std::stof(get("tissue_std_gm")),
                   std::stof(get("tissue_std_wm"))};
  p.gamma = std::stof(get("gamma"));
  p.bias_field_amplitude = std::stof(get("bias_field_amplitude"));
  p.bias_field_smoothness = std::stof(get("bias_field_smoothness"));
  p.noise_std = std::stof(get("noise_std"));
  p.contrast_scale = std::stof(get("contrast_scale"));

  ds.augmentations.gammas.clear();
  {
    std::istringstream in(get("augment_gammas"));
    std::string tok;
    while (std::getline(in, tok, ',')) {
      if (!tok.empty()) ds.augmentations.gammas.push_back(std::stof(tok));
    }
  }

  const auto split_bytes = io::read_file(dir / "split.txt");
  {
    std::string text(split_bytes.begin(), split_bytes.end());
    std::istringstream in(text);
    std::string role;
    int idx;
    while (in >> role >> idx) {
      if (role == "train") ds.train_indices.push_back(idx);
      else if (role == "test") ds.test_indices.push_back(idx);
      else fail(ErrorKind::format, "split.txt has unknown role '" + role + "'");
    }
  }

  for (int i = 0; i < p.image_count; ++i) {
    const std::string idx = std::to_string(i);
    SiteItem item;
    item.image = read_image_pgm(dir / "images" / (idx + ".pgm"), ds.image_size);

    const io::PgmImage lab = io::read_pgm16(dir / "labels" / (idx + ".pgm"));
    require(lab.height == ds.image_size && lab.width == ds.image_size, ErrorKind::format,
            "label size mismatch");
    item.labels.height = lab.height;
    item.labels.width = lab.width;
    item.labels.labels.resize(lab.values.size());
    for (size_t k = 0; k < lab.values.size(); ++k) {
      require(lab.values[k] < kTissueCount, ErrorKind::format, "label value out of range");
      item.labels.labels[k] = static_cast<uint8_t>(lab.values[k]);
    }

    const io::PgmImage msk = io::read_pgm16(dir / "masks" / (idx + ".pgm"));
    require(msk.height == ds.image_size && msk.width == ds.image_size, ErrorKind::format,
            "mask size mismatch");
    item.mask.height = msk.height;
    item.mask.width = msk.width;
    item.mask.mask.resize(msk.values.size());
    for (size_t k = 0; k < msk.values.size(); ++k)
      item.mask.mask[k] = msk.values[k] ? 1 : 0;

    for (size_t k = 0; k < ds.augmentations.gammas.size(); ++k)
      item.augmented.push_back(
          read_image_pgm(dir / "aug" / (idx + "_" + std::to_string(k) + ".pgm"), ds.image_size));
    ds.items.push_back(std::move(item));
  }
  require(ds.train_indices.size() + ds.test_indices.size() == ds.items.size(), ErrorKind::format,
          "split.txt does not cover dataset");
  return ds;
}

}  // namespace prism::phantom
