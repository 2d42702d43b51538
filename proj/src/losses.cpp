#include "prism/losses.hpp"

#include <algorithm>
#include <cmath>

#include "prism/error.hpp"
#include "prism/io.hpp"

namespace prism::losses {
namespace {

constexpr int kPerceptualBlocks = 4;
constexpr int kPerceptualWidths[kPerceptualBlocks] = {8, 16, 32, 64};

}  // namespace

void NceConfig::validate() const {
  require(patches_per_image >= 1, ErrorKind::invalid_argument, "patches_per_image must be >= 1");
  require(embed_dim >= 1, ErrorKind::invalid_argument, "embed_dim must be >= 1");
  require(temperature > 0.0f, ErrorKind::invalid_argument, "temperature must be > 0");
}

void LossWeights::validate() const {
  require(rec >= 0 && perc >= 0 && nce >= 0 && kl >= 0 && cyc_anat >= 0 && cyc_style >= 0,
          ErrorKind::invalid_argument, "loss weights must be >= 0");
}

ad::Var l1_loss(const ad::Var& x, const ad::Var& y) { return ad::mean_abs_diff(x, y); }

ad::Var kl_divergence(const ad::Var& mu, const ad::Var& logvar) {
  require(mu->value.rank() == 2 && mu->value.same_shape(logvar->value),
          ErrorKind::invalid_argument, "kl_divergence: mu/logvar must both be [N,D]");
  const int batch = mu->value.dim(0);
  // 1/2 (mu^2 + e^lv - 1 - lv), summed over dims, averaged over the batch.
  const ad::Var terms =
      ad::add(ad::add(ad::square(mu), ad::exp(logvar)), ad::add_scalar(ad::neg(logvar), -1.0f));
  return ad::mul_scalar(ad::sum(terms), 0.5f / static_cast<float>(batch));
}

double kl_divergence(const nets::StyleDist& dist) {
  double acc = 0.0;
  for (int d = 0; d < 2; ++d) {
    const double mu = dist.mu[static_cast<size_t>(d)];
    const double lv = dist.logvar[static_cast<size_t>(d)];
    acc += mu * mu + std::exp(lv) - 1.0 - lv;
  }
  return 0.5 * acc;
}

std::vector<int> sample_patch_locations(int height, int width, int count, uint64_t seed) {
  const int total = height * width;
  require(count >= 1 && count <= total, ErrorKind::invalid_argument,
          "patch count exceeds available spatial positions");
  std::vector<int> pool(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) pool[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample
  // without replacement.
  for (int i = 0; i < count; ++i) {
    const int j = i + rng.uniform_int(total - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(count));
  return pool;
}

PerceptualExtractor PerceptualExtractor::random(uint64_t seed) {
  PerceptualExtractor ext;
  ext.seed = seed;
  ext.blocks = kPerceptualBlocks;
  Rng rng(seed);
  int ch = 1;
  for (int b = 0; b < kPerceptualBlocks; ++b) {
    nets::init_conv(ext.tensors, "perceptual/block" + std::to_string(b), kPerceptualWidths[b], ch,
                    3, rng);
    ch = kPerceptualWidths[b];
  }
  return ext;
}

PerceptualExtractor PerceptualExtractor::from_file(const std::filesystem::path& path) {
  const io::Container container = io::load_container(path);
  require(container.header_value("kind") == "perceptual", ErrorKind::format,
          "not a perceptual-extractor container");
  PerceptualExtractor ext;
  ext.seed = std::stoull(container.header_value("seed"));
  ext.blocks = std::stoi(container.header_value("blocks"));
  for (const auto& entry : container.tensors) ext.tensors[entry.name] = entry.tensor;
  return ext;
}

void PerceptualExtractor::save(const std::filesystem::path& path) const {
  io::Container container;
  container.set_header("kind", "perceptual");
  container.set_header("seed", std::to_string(seed));
  container.set_header("blocks", std::to_string(blocks));
  container.set_header("tensor_count", std::to_string(tensors.size()));
  for (const auto& [name, tensor] : tensors) container.tensors.push_back({name, tensor});
  io::save_container(path, container);
}

ad::Var perceptual_loss(const PerceptualExtractor& extractor, const ad::Var& x, const ad::Var& y) {
  require(x->value.same_shape(y->value), ErrorKind::invalid_argument,
          "perceptual_loss: shape mismatch");
  require(x->value.rank() == 4 && x->value.dim(1) == 1, ErrorKind::invalid_argument,
          "perceptual_loss: expects [N,1,H,W]");
  const nets::VarBank bank = nets::VarBank::from_tensors(extractor.tensors, false);
  ad::Var fx = x;
  ad::Var fy = y;
  std::vector<ad::Var> layer_terms;
  for (int b = 0; b < extractor.blocks; ++b) {
    const std::string name = "perceptual/block" + std::to_string(b);
    fx = ad::leaky_relu(nets::conv_layer(bank, name, fx, 2), nets::kLeakySlope);
    fy = ad::leaky_relu(nets::conv_layer(bank, name, fy, 2), nets::kLeakySlope);
    layer_terms.push_back(ad::mean_abs_diff(fx, fy));
  }
  ad::Var total = layer_terms[0];
  for (size_t i = 1; i < layer_terms.size(); ++i) total = ad::add(total, layer_terms[i]);
  return ad::mul_scalar(total, 1.0f / static_cast<float>(layer_terms.size()));
}

ad::Var nce_project(const nets::VarBank& projection, int layer_index, const ad::Var& feats) {
  const std::string prefix = "nce_projection/layer" + std::to_string(layer_index);
  ad::Var h = nets::linear_layer(projection, prefix + "/fc1", feats);
  h = ad::relu(h);
  h = nets::linear_layer(projection, prefix + "/fc2", h);
  return ad::l2_normalize_rows(h);
}

ad::Var patchnce_loss(const nets::VarBank& projection, const std::vector<NceLayerBatch>& layers,
                      const NceConfig& cfg) {
  cfg.validate();
  require(!layers.empty(), ErrorKind::invalid_argument, "patchnce_loss: no feature layers");
  const float inv_tau = 1.0f / cfg.temperature;

  std::vector<ad::Var> layer_losses;
  for (const auto& layer : layers) {
    const size_t batch = layer.queries.size();
    require(batch > 0 && layer.positives.size() == batch, ErrorKind::invalid_argument,
            "patchnce_loss: query/positive batch mismatch");
    const bool with_raw = !layer.raw.empty();
    if (with_raw)
      require(layer.raw.size() == batch, ErrorKind::invalid_argument,
              "patchnce_loss: raw batch mismatch");

    std::vector<ad::Var> projected_q(batch), projected_p(batch), projected_r;
    if (with_raw) projected_r.resize(batch);
    const int channels = layer.queries[0]->value.dim(1);
    for (size_t n = 0; n < batch; ++n) {
      require(layer.queries[n]->value.same_shape(layer.positives[n]->value),
              ErrorKind::invalid_argument, "patchnce_loss: query/positive shape mismatch");
      projected_q[n] = nce_project(projection, layer.layer_index, layer.queries[n]);
      projected_p[n] = nce_project(projection, layer.layer_index, layer.positives[n]);
      if (with_raw) {
        // Raw 1-channel intensity patches enter the same head by channel
        // replication.
        projected_r[n] = nce_project(projection, layer.layer_index,
                                     ad::tile_cols(layer.raw[n], channels));
      }
    }

    std::vector<ad::Var> image_losses;
    for (size_t n = 0; n < batch; ++n) {
      const int L = projected_q[n]->value.dim(0);
      std::vector<ad::Var> blocks;
      // [L,L]: diagonal entries are the positives, off-diagonal entries are
      // other-location negatives from the same source rep.
      blocks.push_back(ad::matmul_nt(projected_q[n], projected_p[n]));
      std::vector<ad::Var> others;
      for (size_t m = 0; m < batch; ++m)
        if (m != n) others.push_back(projected_p[m]);
      if (!others.empty()) blocks.push_back(ad::matmul_nt(projected_q[n], ad::concat_rows(others)));
      if (with_raw) blocks.push_back(ad::matmul_nt(projected_q[n], projected_r[n]));

      int negatives = L - 1;
      for (size_t b = 1; b < blocks.size(); ++b) negatives += blocks[b]->value.dim(1);
      require(negatives >= 1, ErrorKind::invalid_argument,
              "patchnce_loss: every query needs at least one negative");

      const ad::Var logits = ad::mul_scalar(ad::concat_cols(blocks), inv_tau);
      std::vector<int> labels(static_cast<size_t>(L));
      for (int i = 0; i < L; ++i) labels[static_cast<size_t>(i)] = i;
      image_losses.push_back(ad::mean(ad::softmax_cross_entropy_rows(logits, labels)));
    }

    ad::Var layer_loss = image_losses[0];
    for (size_t n = 1; n < image_losses.size(); ++n)
      layer_loss = ad::add(layer_loss, image_losses[n]);
    layer_losses.push_back(
        ad::mul_scalar(layer_loss, 1.0f / static_cast<float>(image_losses.size())));
  }

  ad::Var total = layer_losses[0];
  for (size_t i = 1; i < layer_losses.size(); ++i) total = ad::add(total, layer_losses[i]);
  return ad::mul_scalar(total, 1.0f / static_cast<float>(layer_losses.size()));
}

CycleLosses cycle_losses(const nets::VarBank& bank, const nets::ModelHyper& hyper,
                         const ad::Var& recon, const ad::Var& anatomy_values, const ad::Var& mu) {
  const nets::AnatomyHeads re_anatomy = nets::encode_anatomy_batch(bank, hyper, recon);
  const nets::StyleHeads re_style = nets::encode_style_batch(bank, hyper, recon);
  CycleLosses out;
  out.anat = ad::mean_abs_diff(re_anatomy.values, anatomy_values);
  out.style = ad::mean_abs_diff(re_style.mu, mu);
  return out;
}

TotalLoss total_loss(const LossWeights& weights, const LossTerms& terms) {
  weights.validate();
  const struct {
    const char* name;
    const ad::Var& var;
    float weight;
  } entries[] = {
      {"rec", terms.rec, weights.rec},           {"perc", terms.perc, weights.perc},
      {"nce", terms.nce, weights.nce},           {"kl", terms.kl, weights.kl},
      {"cyc_anat", terms.cyc_anat, weights.cyc_anat},
      {"cyc_style", terms.cyc_style, weights.cyc_style},
  };

  LossReport report;
  double total = 0.0;
  for (const auto& e : entries) {
    require(e.var != nullptr && e.var->value.numel() == 1, ErrorKind::invalid_argument,
            "total_loss: terms must be scalars");
    const double v = e.var->value.item();
    require(std::isfinite(v), ErrorKind::numeric_failure,
            std::string("loss term '") + e.name + "' is not finite");
    total += static_cast<double>(e.weight) * v;
  }
  report.rec = terms.rec->value.item();
  report.perc = terms.perc->value.item();
  report.nce = terms.nce->value.item();
  report.kl = terms.kl->value.item();
  report.cyc_anat = terms.cyc_anat->value.item();
  report.cyc_style = terms.cyc_style->value.item();
  report.total = total;

  TotalLoss out;
  out.report = report;
  out.value = ad::add(
      ad::add(ad::add(ad::mul_scalar(terms.rec, weights.rec), ad::mul_scalar(terms.perc, weights.perc)),
              ad::add(ad::mul_scalar(terms.nce, weights.nce), ad::mul_scalar(terms.kl, weights.kl))),
      ad::add(ad::mul_scalar(terms.cyc_anat, weights.cyc_anat),
              ad::mul_scalar(terms.cyc_style, weights.cyc_style)));
  return out;
}

}  // namespace prism::losses
