#include "prism/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "prism/error.hpp"
#include "prism/exchange.hpp"
#include "prism/io.hpp"

namespace prism::trainer {
namespace {

uint64_t derive_seed(uint64_t base, uint64_t stream) { return Rng(base).derive(stream).root_seed(); }

Tensor batch_images(const phantom::SiteDataset& dataset, const std::vector<int>& indices,
                    bool augmented, const std::vector<int>& aug_choice) {
  const int size = dataset.image_size;
  const int B = static_cast<int>(indices.size());
  Tensor batch({B, 1, size, size});
  for (int n = 0; n < B; ++n) {
    const auto& item = dataset.items[static_cast<size_t>(indices[static_cast<size_t>(n)])];
    const Tensor& src =
        augmented ? item.augmented[static_cast<size_t>(aug_choice[static_cast<size_t>(n)])].pixels
                  : item.image.pixels;
    std::copy(src.data(), src.data() + src.numel(),
              batch.data() + static_cast<int64_t>(n) * size * size);
  }
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  require(steps >= 1, ErrorKind::invalid_argument, "steps must be >= 1");
  require(batch_size >= 2, ErrorKind::invalid_argument,
          "batch_size must be >= 2 (cross-subject negatives)");
  require(learning_rate > 0.0f, ErrorKind::invalid_argument, "learning_rate must be > 0");
  require(checkpoint_every >= 0, ErrorKind::invalid_argument, "checkpoint_every must be >= 0");
  weights.validate();
  nce.validate();
}

void AdamOptimizer::step(std::map<std::string, Tensor>& params, const nets::VarBank& bank) {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (auto& [name, tensor] : params) {
    auto it = bank.vars.find(name);
    require(it != bank.vars.end(), ErrorKind::invalid_argument, "optimizer missing var " + name);
    const Tensor& grad = it->second->grad;
    auto state = state_.find(name);
    if (state == state_.end()) {
      state = state_
                  .emplace(name, std::make_pair(Tensor::zeros(tensor.shape()),
                                                Tensor::zeros(tensor.shape())))
                  .first;
    }
    float* m = state->second.first.data();
    float* v = state->second.second.data();
    float* p = tensor.data();
    const int64_t n = tensor.numel();
    const float* g = grad.defined() ? grad.data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      const float gi = g ? g[i] : 0.0f;
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * gi * gi;
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::pair<nets::ModelParams, TrainHistory> train_site(const phantom::SiteDataset& dataset,
                                                      const nets::ModelHyper& hyper,
                                                      const TrainConfig& cfg) {
  cfg.validate();
  hyper.validate();
  require(!dataset.train_indices.empty(), ErrorKind::invalid_argument, "train split is empty");
  require(cfg.batch_size <= static_cast<int>(dataset.train_indices.size()),
          ErrorKind::invalid_argument, "batch_size exceeds train split size");
  require(dataset.image_size == hyper.image_size, ErrorKind::invalid_argument,
          "dataset and hyper image sizes differ");
  require(!dataset.items.empty() && !dataset.items[0].augmented.empty(),
          ErrorKind::invalid_argument, "dataset has no augmentations for the NCE queries");

  nets::ModelParams params =
      nets::init_model(hyper, dataset.site_id, cfg.seed, cfg.nce.embed_dim);
  const losses::PerceptualExtractor extractor =
      cfg.perceptual_weights.empty() ? losses::PerceptualExtractor::random(cfg.perceptual_seed)
                                     : losses::PerceptualExtractor::from_file(cfg.perceptual_weights);

  AdamOptimizer adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainHistory history;
  history.steps.reserve(static_cast<size_t>(cfg.steps));
  const Rng root(cfg.seed);
  const int n_aug = static_cast<int>(dataset.items[0].augmented.size());
  const int size = hyper.image_size;

  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = root.derive(0xB000 + static_cast<uint64_t>(step));

    std::vector<int> pool = dataset.train_indices;
    rng.shuffle(pool);
    std::vector<int> batch(pool.begin(), pool.begin() + cfg.batch_size);

    std::vector<int> aug_choice(static_cast<size_t>(cfg.batch_size));
    for (auto& a : aug_choice) a = rng.uniform_int(n_aug);
    Tensor eps({cfg.batch_size, hyper.style_dim});
    for (int64_t i = 0; i < eps.numel(); ++i) eps.data()[i] = static_cast<float>(rng.normal());

    const nets::VarBank bank = nets::VarBank::from(params, true);
    const ad::Var images = ad::constant(batch_images(dataset, batch, false, aug_choice));
    const ad::Var aug_images = ad::constant(batch_images(dataset, batch, true, aug_choice));

    const nets::AutoencodeHeads fwd =
        nets::forward_autoencode_batch(bank, hyper, images, ad::constant(eps));
    const nets::AnatomyHeads aug_heads = nets::encode_anatomy_batch(bank, hyper, aug_images);

    // PatchNCE assembly: queries from augmented reps, positives from source
    // reps at shared locations; raw-pixel negatives on the finest layer.
    const int finest = *std::min_element(hyper.nce_feature_layers.begin(),
                                         hyper.nce_feature_layers.end());
    std::vector<losses::NceLayerBatch> nce_layers;
    for (size_t li = 0; li < hyper.nce_feature_layers.size(); ++li) {
      const int level = hyper.nce_feature_layers[li];
      const int fs = size >> level;
      const int count = std::min(cfg.nce.patches_per_image, fs * fs);
      losses::NceLayerBatch layer;
      layer.layer_index = level;
      ad::Var raw_pooled;
      if (cfg.nce.include_raw_image_negatives && level == finest) {
        raw_pooled = images;
        for (int p = 0; p < level; ++p) raw_pooled = ad::avg_pool2(raw_pooled);
      }
      for (int n = 0; n < cfg.batch_size; ++n) {
        const std::vector<int> locs = losses::sample_patch_locations(
            fs, fs, count,
            derive_seed(root.derive(0xC000 + static_cast<uint64_t>(step)).root_seed(),
                        static_cast<uint64_t>(level) * 1024 + static_cast<uint64_t>(n)));
        layer.queries.push_back(ad::gather_patches(aug_heads.features[li], n, locs));
        layer.positives.push_back(ad::gather_patches(fwd.anatomy.features[li], n, locs));
        if (raw_pooled) layer.raw.push_back(ad::gather_patches(raw_pooled, n, locs));
      }
      nce_layers.push_back(std::move(layer));
    }

    losses::LossTerms terms;
    terms.rec = losses::l1_loss(fwd.recon, images);
    terms.perc = losses::perceptual_loss(extractor, fwd.recon, images);
    terms.nce = losses::patchnce_loss(bank, nce_layers, cfg.nce);
    terms.kl = losses::kl_divergence(fwd.style.mu, fwd.style.logvar);
    const losses::CycleLosses cyc =
        losses::cycle_losses(bank, hyper, fwd.recon, fwd.anatomy.values, fwd.style.mu);
    terms.cyc_anat = cyc.anat;
    terms.cyc_style = cyc.style;

    losses::TotalLoss total;
    try {
      total = losses::total_loss(cfg.weights, terms);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::numeric_failure)
        fail(ErrorKind::numeric_failure,
             "step " + std::to_string(step) + ": " + std::string(e.what()));
      throw;
    }

    ad::backward(total.value);
    adam.step(params.tensors, bank);

    const auto t1 = std::chrono::steady_clock::now();
    history.steps.push_back(total.report);
    history.wall_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (step + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(params, history,
                      cfg.checkpoint_dir / (dataset.site_id + "_step" + std::to_string(step + 1) +
                                            ".ckpt"));
    }
  }
  return {std::move(params), std::move(history)};
}

void save_checkpoint(const nets::ModelParams& params, const TrainHistory& history,
                     const std::filesystem::path& path) {
  io::Container container;
  container.set_header("kind", "checkpoint");
  container.set_header("site_id", params.site_id);
  container.set_header("seed", std::to_string(params.seed));
  exchange::hyper_to_header(params.hyper, container);
  container.set_header("history_steps", std::to_string(history.steps.size()));
  container.set_header("history_columns", "rec,perc,nce,kl,cyc_anat,cyc_style,total,wall_ms");

  int count = 0;
  for (const auto& [name, tensor] : params.tensors) {
    container.tensors.push_back({name, tensor});
    ++count;
  }
  if (!history.steps.empty()) {
    Tensor h({static_cast<int>(history.steps.size()), 8});
    float* p = h.data();
    for (size_t s = 0; s < history.steps.size(); ++s) {
      const auto& r = history.steps[s];
      p[s * 8 + 0] = static_cast<float>(r.rec);
      p[s * 8 + 1] = static_cast<float>(r.perc);
      p[s * 8 + 2] = static_cast<float>(r.nce);
      p[s * 8 + 3] = static_cast<float>(r.kl);
      p[s * 8 + 4] = static_cast<float>(r.cyc_anat);
      p[s * 8 + 5] = static_cast<float>(r.cyc_style);
      p[s * 8 + 6] = static_cast<float>(r.total);
      p[s * 8 + 7] = static_cast<float>(history.wall_ms[s]);
    }
    container.tensors.push_back({"train/history", std::move(h)});
    ++count;
  }
  container.set_header("tensor_count", std::to_string(count));
  io::save_container(path, container);
}

std::pair<nets::ModelParams, TrainHistory> load_checkpoint(const std::filesystem::path& path) {
  const io::Container container = io::load_container(path);
  require(container.header_value("kind") == "checkpoint", ErrorKind::format,
          "container is not a checkpoint");

  nets::ModelParams params;
  params.site_id = container.header_value("site_id");
  params.seed = std::stoull(container.header_value("seed"));
  params.hyper = exchange::hyper_from_header(container);

  TrainHistory history;
  for (const auto& entry : container.tensors) {
    if (entry.name == "train/history") {
      require(entry.tensor.rank() == 2 && entry.tensor.dim(1) == 8, ErrorKind::format,
              "unexpected history tensor shape");
      const float* p = entry.tensor.data();
      for (int s = 0; s < entry.tensor.dim(0); ++s) {
        losses::LossReport r;
        r.rec = p[s * 8 + 0];
        r.perc = p[s * 8 + 1];
        r.nce = p[s * 8 + 2];
        r.kl = p[s * 8 + 3];
        r.cyc_anat = p[s * 8 + 4];
        r.cyc_style = p[s * 8 + 5];
        r.total = p[s * 8 + 6];
        history.steps.push_back(r);
        history.wall_ms.push_back(p[s * 8 + 7]);
      }
      continue;
    }
    params.tensors[entry.name] = entry.tensor;
  }

  // Shape audit against the embedded hyper.
  int embed_dim = nets::kDefaultNceEmbedDim;
  {
    auto it = params.tensors.find("nce_projection/layer" +
                                  std::to_string(params.hyper.nce_feature_layers[0]) + "/fc2/w");
    if (it != params.tensors.end()) embed_dim = it->second.dim(0);
  }
  const auto expected = nets::expected_shapes(params.hyper, embed_dim);
  require(expected.size() == params.tensors.size(), ErrorKind::format,
          "checkpoint tensor set mismatch");
  for (const auto& [name, shape] : expected) {
    auto it = params.tensors.find(name);
    require(it != params.tensors.end(), ErrorKind::format, "checkpoint missing tensor " + name);
    require(it->second.shape() == shape, ErrorKind::format,
            "checkpoint tensor " + name + " has a shape inconsistent with its hyper");
  }
  return {std::move(params), std::move(history)};
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::string csv = "step,rec,perc,nce,kl,cyc_anat,cyc_style,total,wall_ms\n";
  char line[256];
  for (size_t s = 0; s < history.steps.size(); ++s) {
    const auto& r = history.steps[s];
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n", s, r.rec,
                  r.perc, r.nce, r.kl, r.cyc_anat, r.cyc_style, r.total, history.wall_ms[s]);
    csv += line;
  }
  io::write_file(path, csv.data(), csv.size());
}

}  // namespace prism::trainer
