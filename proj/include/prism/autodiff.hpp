#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prism/tensor.hpp"

namespace prism::ad {

// Reverse-mode autodiff over Tensor. Graphs are built dynamically per
// forward pass and discarded afterwards; backward() walks the tape in
// reverse topological order. All reductions accumulate in double.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;  // adds into parents' grads
  int visit_mark = 0;

  Tensor& ensure_grad() {
    if (!grad.defined()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);

// Runs backprop from a scalar root (numel == 1).
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, float s);
Var mul_scalar(const Var& a, float s);
Var abs(const Var& a);
Var square(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, float slope);
Var relu(const Var& a);
Var clamp(const Var& a, float lo, float hi);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(const Var& a, const Var& b);          // [N,C,H,W] along C
Var concat_rows(const std::vector<Var>& parts);           // [Mi,K] -> [sum Mi, K]
Var concat_cols(const std::vector<Var>& parts);           // [M,Ki] -> [M, sum Ki]
Var tile_cols(const Var& a, int copies);                  // [M,1] -> [M,copies]
Var broadcast_planes(const Var& z, int height, int width);  // [N,D] -> [N,D,H,W]
Var stop_gradient(const Var& a);

// ---- spatial ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2(const Var& x);
Var avg_pool2(const Var& x);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
// Picks spatial positions (row-major flat indices) of sample `n`: -> [L,C].
Var gather_patches(const Var& x, int n, const std::vector<int>& locations);

// ---- linear algebra ----
Var linear(const Var& x, const Var& w, const Var& b);  // x[N,D], w[O,D], b[O]
Var matmul_nt(const Var& a, const Var& b);             // a[M,K] * b[N,K]^T -> [M,N]
Var l2_normalize_rows(const Var& a);

// ---- reductions / losses ----
Var sum(const Var& a);        // -> {1}
Var mean(const Var& a);       // -> {1}
Var mean_abs_diff(const Var& a, const Var& b);   // L1, -> {1}
Var mean_sq_diff(const Var& a, const Var& b);    // MSE, -> {1}
// Per-row cross entropy of softmax(logits): -> [M].
Var softmax_cross_entropy_rows(const Var& logits, const std::vector<int>& labels);
// Mean pixelwise cross entropy; logits [N,K,H,W], labels flat ints [N*H*W].
Var softmax_cross_entropy_spatial(const Var& logits, const std::vector<int>& labels);

}  // namespace prism::ad
