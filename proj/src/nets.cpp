#include "prism/nets.hpp"

#include <algorithm>
#include <cmath>

#include "prism/error.hpp"

namespace prism::nets {
namespace {

bool divisible_by_pow2(int value, int levels) {
  for (int i = 0; i < levels; ++i) {
    if (value % 2 != 0) return false;
    value /= 2;
  }
  return true;
}

int style_block_width(const ModelHyper& hyper, int block) {
  return std::min(hyper.base_width << block, 8 * hyper.base_width);
}

ad::Var image_batch_var(const ModelHyper& hyper, const Tensor& image) {
  require(image.rank() == 2 && image.dim(0) == hyper.image_size && image.dim(1) == hyper.image_size,
          ErrorKind::invalid_argument, "image does not match hyper.image_size");
  return ad::constant(image.reshaped({1, 1, hyper.image_size, hyper.image_size}));
}

}  // namespace

int ModelHyper::level_width(int level) const {
  return std::min(base_width << level, width_cap());
}

void ModelHyper::validate() const {
  require(style_dim == 2, ErrorKind::invalid_argument, "style_dim is fixed at 2");
  require(anatomy_channels >= 1, ErrorKind::invalid_argument, "anatomy_channels must be >= 1");
  require(anatomy_unet_depth >= 2 && decoder_unet_depth >= 2, ErrorKind::invalid_argument,
          "unet depths must be >= 2");
  require(style_conv_blocks >= 1, ErrorKind::invalid_argument, "style_conv_blocks must be >= 1");
  require(base_width >= 1, ErrorKind::invalid_argument, "base_width must be >= 1");
  require(image_size >= 8, ErrorKind::invalid_argument, "image_size too small");
  const int max_depth = std::max(std::max(anatomy_unet_depth, decoder_unet_depth),
                                 style_conv_blocks);
  require(divisible_by_pow2(image_size, max_depth), ErrorKind::invalid_argument,
          "image_size must be divisible by 2^depth");
  require(!nce_feature_layers.empty(), ErrorKind::invalid_argument,
          "nce_feature_layers must be non-empty");
  for (int l : nce_feature_layers)
    require(l >= 1 && l <= anatomy_unet_depth, ErrorKind::invalid_argument,
            "nce_feature_layers entries must lie in [1, anatomy_unet_depth]");
}

int UnetSpec::level_width(int level) const {
  return std::min(base_width << level, width_cap);
}

UnetSpec anatomy_unet_spec(const ModelHyper& hyper) {
  UnetSpec spec;
  spec.prefix = "anatomy_encoder";
  spec.in_channels = 1;
  spec.out_channels = hyper.anatomy_channels;
  spec.base_width = hyper.base_width;
  spec.depth = hyper.anatomy_unet_depth;
  spec.width_cap = hyper.width_cap();
  spec.bounded_output = true;
  return spec;
}

UnetSpec decoder_unet_spec(const ModelHyper& hyper) {
  UnetSpec spec;
  spec.prefix = "decoder";
  spec.in_channels = hyper.anatomy_channels + hyper.style_dim;
  spec.out_channels = 1;
  spec.base_width = hyper.base_width;
  spec.depth = hyper.decoder_unet_depth;
  spec.width_cap = hyper.width_cap();
  spec.bounded_output = true;
  return spec;
}

void init_conv(std::map<std::string, Tensor>& tensors, const std::string& name, int out_ch,
               int in_ch, int kernel, Rng& rng) {
  Tensor w({out_ch, in_ch, kernel, kernel});
  const float bound = std::sqrt(6.0f / static_cast<float>(in_ch * kernel * kernel));
  float* p = w.data();
  for (int64_t i = 0; i < w.numel(); ++i) p[i] = static_cast<float>(rng.uniform(-bound, bound));
  tensors[name + "/w"] = std::move(w);
  tensors[name + "/b"] = Tensor::zeros({out_ch});
}

void init_linear(std::map<std::string, Tensor>& tensors, const std::string& name, int out_dim,
                 int in_dim, Rng& rng) {
  Tensor w({out_dim, in_dim});
  const float bound = std::sqrt(6.0f / static_cast<float>(in_dim));
  float* p = w.data();
  for (int64_t i = 0; i < w.numel(); ++i) p[i] = static_cast<float>(rng.uniform(-bound, bound));
  tensors[name + "/w"] = std::move(w);
  tensors[name + "/b"] = Tensor::zeros({out_dim});
}

ad::Var conv_layer(const VarBank& bank, const std::string& name, const ad::Var& x, int stride) {
  return ad::conv2d(x, bank.at(name + "/w"), bank.at(name + "/b"), stride, 1);
}

ad::Var linear_layer(const VarBank& bank, const std::string& name, const ad::Var& x) {
  return ad::linear(x, bank.at(name + "/w"), bank.at(name + "/b"));
}

void init_unet(std::map<std::string, Tensor>& tensors, const UnetSpec& spec, Rng& rng) {
  init_conv(tensors, spec.prefix + "/stem", spec.level_width(0), spec.in_channels, 3, rng);
  for (int l = 1; l <= spec.depth; ++l)
    init_conv(tensors, spec.prefix + "/down" + std::to_string(l), spec.level_width(l),
              spec.level_width(l - 1), 3, rng);
  for (int l = spec.depth; l >= 1; --l)
    init_conv(tensors, spec.prefix + "/up" + std::to_string(l), spec.level_width(l - 1),
              spec.level_width(l) + spec.level_width(l - 1), 3, rng);
  init_conv(tensors, spec.prefix + "/out", spec.out_channels, spec.level_width(0), 3, rng);
}

ad::Var unet_forward(const VarBank& bank, const UnetSpec& spec, const ad::Var& input,
                     std::vector<ad::Var>* down_features) {
  require(input->value.rank() == 4 && input->value.dim(1) == spec.in_channels,
          ErrorKind::invalid_argument, spec.prefix + ": bad input shape");
  std::vector<ad::Var> skips;
  ad::Var x = ad::leaky_relu(conv_layer(bank, spec.prefix + "/stem", input, 1), kLeakySlope);
  skips.push_back(x);
  for (int l = 1; l <= spec.depth; ++l) {
    x = ad::leaky_relu(conv_layer(bank, spec.prefix + "/down" + std::to_string(l), x, 2),
                       kLeakySlope);
    skips.push_back(x);
    if (down_features) down_features->push_back(x);
  }
  for (int l = spec.depth; l >= 1; --l) {
    x = ad::upsample_nearest2(x);
    x = ad::concat_channels(x, skips[static_cast<size_t>(l - 1)]);
    x = ad::leaky_relu(conv_layer(bank, spec.prefix + "/up" + std::to_string(l), x, 1),
                       kLeakySlope);
  }
  x = conv_layer(bank, spec.prefix + "/out", x, 1);
  return spec.bounded_output ? ad::sigmoid(x) : x;
}

ModelParams init_model(const ModelHyper& hyper, const std::string& site_id, uint64_t seed,
                       int nce_embed_dim) {
  hyper.validate();
  require(nce_embed_dim >= 1, ErrorKind::invalid_argument, "nce_embed_dim must be >= 1");
  ModelParams params;
  params.hyper = hyper;
  params.site_id = site_id;
  params.seed = seed;

  Rng rng(seed);
  init_unet(params.tensors, anatomy_unet_spec(hyper), rng);

  int ch = 1;
  for (int b = 0; b < hyper.style_conv_blocks; ++b) {
    const int width = style_block_width(hyper, b);
    init_conv(params.tensors, "style_encoder/block" + std::to_string(b), width, ch, 3, rng);
    ch = width;
  }
  init_linear(params.tensors, "style_encoder/mu", hyper.style_dim, ch, rng);
  init_linear(params.tensors, "style_encoder/logvar", hyper.style_dim, ch, rng);

  init_unet(params.tensors, decoder_unet_spec(hyper), rng);

  for (int layer : hyper.nce_feature_layers) {
    const std::string prefix = "nce_projection/layer" + std::to_string(layer);
    init_linear(params.tensors, prefix + "/fc1", nce_embed_dim, hyper.level_width(layer), rng);
    init_linear(params.tensors, prefix + "/fc2", nce_embed_dim, nce_embed_dim, rng);
  }
  return params;
}

VarBank VarBank::from(const ModelParams& params, bool trainable) {
  return from_tensors(params.tensors, trainable);
}

VarBank VarBank::from_tensors(const std::map<std::string, Tensor>& tensors, bool trainable) {
  VarBank bank;
  for (const auto& [name, tensor] : tensors) bank.vars[name] = ad::leaf(tensor, trainable);
  return bank;
}

ad::Var VarBank::at(const std::string& name) const {
  auto it = vars.find(name);
  require(it != vars.end(), ErrorKind::invalid_argument, "missing parameter tensor " + name);
  return it->second;
}

AnatomyHeads encode_anatomy_batch(const VarBank& bank, const ModelHyper& hyper,
                                  const ad::Var& images) {
  require(images->value.rank() == 4 && images->value.dim(1) == 1 &&
              images->value.dim(2) == hyper.image_size && images->value.dim(3) == hyper.image_size,
          ErrorKind::invalid_argument, "encode_anatomy: image batch shape mismatch");
  std::vector<ad::Var> all_levels;
  AnatomyHeads heads;
  heads.values = unet_forward(bank, anatomy_unet_spec(hyper), images, &all_levels);
  for (int layer : hyper.nce_feature_layers)
    heads.features.push_back(all_levels[static_cast<size_t>(layer - 1)]);
  return heads;
}

StyleHeads encode_style_batch(const VarBank& bank, const ModelHyper& hyper,
                              const ad::Var& images) {
  require(images->value.rank() == 4 && images->value.dim(1) == 1 &&
              images->value.dim(2) == hyper.image_size && images->value.dim(3) == hyper.image_size,
          ErrorKind::invalid_argument, "encode_style: image batch shape mismatch");
  ad::Var x = images;
  for (int b = 0; b < hyper.style_conv_blocks; ++b) {
    x = ad::leaky_relu(conv_layer(bank, "style_encoder/block" + std::to_string(b), x, 2),
                       kLeakySlope);
  }
  x = ad::global_avg_pool(x);
  StyleHeads heads;
  heads.mu = linear_layer(bank, "style_encoder/mu", x);
  heads.logvar = ad::clamp(linear_layer(bank, "style_encoder/logvar", x), -10.0f, 10.0f);
  return heads;
}

ad::Var decode_batch(const VarBank& bank, const ModelHyper& hyper, const ad::Var& anatomy,
                     const ad::Var& z) {
  require(anatomy->value.rank() == 4 && anatomy->value.dim(1) == hyper.anatomy_channels,
          ErrorKind::invalid_argument, "decode: anatomy shape mismatch");
  require(z->value.rank() == 2 && z->value.dim(1) == hyper.style_dim &&
              z->value.dim(0) == anatomy->value.dim(0),
          ErrorKind::invalid_argument, "decode: style code shape mismatch");
  // Each style dim becomes a constant conditioning plane.
  const ad::Var planes = ad::broadcast_planes(z, anatomy->value.dim(2), anatomy->value.dim(3));
  const ad::Var input = ad::concat_channels(anatomy, planes);
  return unet_forward(bank, decoder_unet_spec(hyper), input, nullptr);
}

AutoencodeHeads forward_autoencode_batch(const VarBank& bank, const ModelHyper& hyper,
                                         const ad::Var& images, const ad::Var& eps) {
  AutoencodeHeads out;
  out.anatomy = encode_anatomy_batch(bank, hyper, images);
  out.style = encode_style_batch(bank, hyper, images);
  require(eps->value.same_shape(out.style.mu->value), ErrorKind::invalid_argument,
          "forward_autoencode: eps shape mismatch");
  const ad::Var sigma = ad::exp(ad::mul_scalar(out.style.logvar, 0.5f));
  out.z = ad::add(out.style.mu, ad::mul(sigma, eps));
  out.recon = decode_batch(bank, hyper, out.anatomy.values, out.z);
  return out;
}

AnatomyRep encode_anatomy(const ModelParams& params, const Tensor& image) {
  const VarBank bank = VarBank::from(params, false);
  const AnatomyHeads heads =
      encode_anatomy_batch(bank, params.hyper, image_batch_var(params.hyper, image));
  AnatomyRep rep;
  const auto& v = heads.values->value;
  rep.values = v.reshaped({v.dim(1), v.dim(2), v.dim(3)}).clone();
  for (const auto& f : heads.features) {
    const auto& fv = f->value;
    rep.features.push_back(fv.reshaped({fv.dim(1), fv.dim(2), fv.dim(3)}).clone());
  }
  return rep;
}

StyleDist encode_style(const ModelParams& params, const Tensor& image) {
  const VarBank bank = VarBank::from(params, false);
  const StyleHeads heads =
      encode_style_batch(bank, params.hyper, image_batch_var(params.hyper, image));
  StyleDist dist;
  dist.mu = {heads.mu->value.data()[0], heads.mu->value.data()[1]};
  dist.logvar = {heads.logvar->value.data()[0], heads.logvar->value.data()[1]};
  return dist;
}

StyleCode reparameterize(const StyleDist& dist, const std::array<float, 2>& eps) {
  StyleCode code;
  for (int d = 0; d < 2; ++d) {
    const float sigma = std::exp(0.5f * dist.logvar[static_cast<size_t>(d)]);
    code.z[static_cast<size_t>(d)] =
        dist.mu[static_cast<size_t>(d)] + sigma * eps[static_cast<size_t>(d)];
  }
  return code;
}

Tensor decode(const ModelParams& params, const Tensor& anatomy_values, const StyleCode& style) {
  const ModelHyper& hyper = params.hyper;
  require(anatomy_values.rank() == 3 && anatomy_values.dim(0) == hyper.anatomy_channels &&
              anatomy_values.dim(1) == hyper.image_size && anatomy_values.dim(2) == hyper.image_size,
          ErrorKind::invalid_argument, "decode: anatomy rep shape mismatch");
  const VarBank bank = VarBank::from(params, false);
  const ad::Var anatomy = ad::constant(anatomy_values.reshaped(
      {1, hyper.anatomy_channels, hyper.image_size, hyper.image_size}));
  const ad::Var z = ad::constant(Tensor::from_data({1, 2}, {style.z[0], style.z[1]}));
  const ad::Var out = decode_batch(bank, hyper, anatomy, z);
  return out->value.reshaped({hyper.image_size, hyper.image_size}).clone();
}

ReconOutput forward_autoencode(const ModelParams& params, const Tensor& image,
                               const std::array<float, 2>& eps) {
  const ModelHyper& hyper = params.hyper;
  const VarBank bank = VarBank::from(params, false);
  const ad::Var eps_var = ad::constant(Tensor::from_data({1, 2}, {eps[0], eps[1]}));
  const AutoencodeHeads heads =
      forward_autoencode_batch(bank, hyper, image_batch_var(hyper, image), eps_var);

  ReconOutput out;
  out.recon = heads.recon->value.reshaped({hyper.image_size, hyper.image_size}).clone();
  const auto& v = heads.anatomy.values->value;
  out.anatomy.values = v.reshaped({v.dim(1), v.dim(2), v.dim(3)}).clone();
  for (const auto& f : heads.anatomy.features) {
    const auto& fv = f->value;
    out.anatomy.features.push_back(fv.reshaped({fv.dim(1), fv.dim(2), fv.dim(3)}).clone());
  }
  out.style.mu = {heads.style.mu->value.data()[0], heads.style.mu->value.data()[1]};
  out.style.logvar = {heads.style.logvar->value.data()[0], heads.style.logvar->value.data()[1]};
  out.style_sample.z = {heads.z->value.data()[0], heads.z->value.data()[1]};
  return out;
}

std::map<std::string, std::vector<int>> expected_shapes(const ModelHyper& hyper,
                                                        int nce_embed_dim) {
  const ModelParams reference = init_model(hyper, "", 0, nce_embed_dim);
  std::map<std::string, std::vector<int>> shapes;
  for (const auto& [name, tensor] : reference.tensors) shapes[name] = tensor.shape();
  return shapes;
}

}  // namespace prism::nets
