#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "prism/autodiff.hpp"
#include "prism/rng.hpp"
#include "prism/tensor.hpp"

namespace prism::nets {

struct ModelHyper {
  int image_size = 64;
  int anatomy_channels = 1;
  int anatomy_unet_depth = 4;
  int base_width = 16;
  int style_dim = 2;  // fixed by design
  int style_conv_blocks = 4;
  int decoder_unet_depth = 4;
  std::vector<int> nce_feature_layers = {1, 2, 3};

  int width_cap() const { return 4 * base_width; }
  // Channel width of anatomy-encoder level `level` (0 = full resolution).
  int level_width(int level) const;
  void validate() const;
};

// Full per-site parameter bundle: anatomy encoder, style encoder, decoder
// and PatchNCE projection heads, all keyed by hierarchical tensor names.
struct ModelParams {
  ModelHyper hyper;
  std::string site_id;
  uint64_t seed = 0;
  std::map<std::string, Tensor> tensors;
};

inline constexpr int kDefaultNceEmbedDim = 64;

ModelParams init_model(const ModelHyper& hyper, const std::string& site_id, uint64_t seed,
                       int nce_embed_dim = kDefaultNceEmbedDim);

// Parameters wrapped as autodiff leaves (trainable or frozen).
struct VarBank {
  std::map<std::string, ad::Var> vars;

  static VarBank from(const ModelParams& params, bool trainable);
  static VarBank from_tensors(const std::map<std::string, Tensor>& tensors, bool trainable);
  ad::Var at(const std::string& name) const;
  bool has(const std::string& name) const { return vars.count(name) != 0; }
};

// ---- batched forward passes (graph-building) ----

struct AnatomyHeads {
  ad::Var values;                 // [N,C_a,H,W], sigmoid-bounded
  std::vector<ad::Var> features;  // one per hyper.nce_feature_layers entry
};

struct StyleHeads {
  ad::Var mu;      // [N,2]
  ad::Var logvar;  // [N,2], clamped to [-10,10]
};

AnatomyHeads encode_anatomy_batch(const VarBank& bank, const ModelHyper& hyper,
                                  const ad::Var& images);
StyleHeads encode_style_batch(const VarBank& bank, const ModelHyper& hyper,
                              const ad::Var& images);
ad::Var decode_batch(const VarBank& bank, const ModelHyper& hyper, const ad::Var& anatomy,
                     const ad::Var& z);

struct AutoencodeHeads {
  ad::Var recon;
  AnatomyHeads anatomy;
  StyleHeads style;
  ad::Var z;  // [N,2]
};

AutoencodeHeads forward_autoencode_batch(const VarBank& bank, const ModelHyper& hyper,
                                         const ad::Var& images, const ad::Var& eps);

// ---- single-image inference (no gradients) ----

struct StyleDist {
  std::array<float, 2> mu{};
  std::array<float, 2> logvar{};
};

struct StyleCode {
  std::array<float, 2> z{};
};

struct AnatomyRep {
  Tensor values;                 // [C_a,H,W]
  std::vector<Tensor> features;  // per nce_feature_layers entry
};

struct ReconOutput {
  Tensor recon;  // [H,W]
  AnatomyRep anatomy;
  StyleDist style;
  StyleCode style_sample;
};

AnatomyRep encode_anatomy(const ModelParams& params, const Tensor& image);
StyleDist encode_style(const ModelParams& params, const Tensor& image);
StyleCode reparameterize(const StyleDist& dist, const std::array<float, 2>& eps);
Tensor decode(const ModelParams& params, const Tensor& anatomy_values, const StyleCode& style);
ReconOutput forward_autoencode(const ModelParams& params, const Tensor& image,
                               const std::array<float, 2>& eps);

// ---- generic U-Net builder (shared with the segmentation model) ----

struct UnetSpec {
  std::string prefix;
  int in_channels = 1;
  int out_channels = 1;
  int base_width = 16;
  int depth = 4;
  int width_cap = 64;
  bool bounded_output = true;

  int level_width(int level) const;
};

UnetSpec anatomy_unet_spec(const ModelHyper& hyper);
UnetSpec decoder_unet_spec(const ModelHyper& hyper);

void init_unet(std::map<std::string, Tensor>& tensors, const UnetSpec& spec, Rng& rng);
ad::Var unet_forward(const VarBank& bank, const UnetSpec& spec, const ad::Var& input,
                     std::vector<ad::Var>* down_features = nullptr);

void init_conv(std::map<std::string, Tensor>& tensors, const std::string& name, int out_ch,
               int in_ch, int kernel, Rng& rng);
void init_linear(std::map<std::string, Tensor>& tensors, const std::string& name, int out_dim,
                 int in_dim, Rng& rng);
ad::Var conv_layer(const VarBank& bank, const std::string& name, const ad::Var& x, int stride);
ad::Var linear_layer(const VarBank& bank, const std::string& name, const ad::Var& x);

// Expected tensor shapes for one model under `hyper` (used by package and
// checkpoint validation).
std::map<std::string, std::vector<int>> expected_shapes(const ModelHyper& hyper,
                                                        int nce_embed_dim = kDefaultNceEmbedDim);

inline constexpr float kLeakySlope = 0.2f;

}  // namespace prism::nets
