#include "prism/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace prism::ad {
namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->parents = std::move(parents);
  for (const auto& p : node->parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a->value.same_shape(b->value), ErrorKind::invalid_argument,
          std::string(op) + ": operand shapes differ");
}

void check_rank(const Var& a, int rank, const char* op) {
  require(a->value.rank() == rank, ErrorKind::invalid_argument,
          std::string(op) + ": unexpected tensor rank");
}

// Unary elementwise: dfdx receives (x, y) per element.
template <typename F, typename G>
Var unary_elementwise(const Var& a, F&& f, G&& dfdx) {
  Tensor out(a->value.shape());
  const float* x = a->value.data();
  float* y = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  return make_node(std::move(out), {a}, [a, dfdx](Node& node) {
    if (!a->requires_grad) return;
    float* da = a->ensure_grad().data();
    const float* g = node.grad.data();
    const float* x = a->value.data();
    const float* y = node.value.data();
    const int64_t n = node.value.numel();
    for (int64_t i = 0; i < n; ++i) da[i] += g[i] * dfdx(x[i], y[i]);
  });
}

// im2col for x[C,H,W] into cols[C*kh*kw, Ho*Wo] (row-major).
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* cols) {
  const int64_t M = static_cast<int64_t>(Ho) * Wo;
  int row = 0;
  for (int c = 0; c < C; ++c) {
    const float* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        float* dst = cols + static_cast<int64_t>(row) * M;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          float* d = dst + static_cast<int64_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(d, d + Wo, 0.0f);
            continue;
          }
          const float* src = xc + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            d[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add of cols[C*kh*kw, Ho*Wo] back into dx[C,H,W].
void col2im_add(const float* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                float* dx) {
  const int64_t M = static_cast<int64_t>(Ho) * Wo;
  int row = 0;
  for (int c = 0; c < C; ++c) {
    float* xc = dx + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const float* src_row = cols + static_cast<int64_t>(row) * M;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          float* dst = xc + static_cast<int64_t>(iy) * W;
          const float* s = src_row + static_cast<int64_t>(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dst[ix] += s[ox];
          }
        }
      }
    }
  }
}

thread_local std::vector<float> g_col_scratch;

float* col_scratch(int64_t n) {
  if (static_cast<int64_t>(g_col_scratch.size()) < n) g_col_scratch.resize(static_cast<size_t>(n));
  return g_col_scratch.data();
}

}  // namespace

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

void backward(const Var& root) {
  require(root->value.numel() == 1, ErrorKind::invalid_argument,
          "backward requires a scalar root");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* parent = f.node->parents[f.next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad().data()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.defined()) node->backward_fn(*node);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  float* y = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const float* g = node.grad.data();
    const int64_t n = node.value.numel();
    if (a->requires_grad) {
      float* da = a->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i];
    }
    if (b->requires_grad) {
      float* db = b->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) db[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  float* y = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] - pb[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const float* g = node.grad.data();
    const int64_t n = node.value.numel();
    if (a->requires_grad) {
      float* da = a->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i];
    }
    if (b->requires_grad) {
      float* db = b->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) db[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  float* y = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] * pb[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const float* g = node.grad.data();
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    const int64_t n = node.value.numel();
    if (a->requires_grad) {
      float* da = a->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i] * pb[i];
    }
    if (b->requires_grad) {
      float* db = b->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) db[i] += g[i] * pa[i];
    }
  });
}

Var neg(const Var& a) {
  return unary_elementwise(a, [](float x) { return -x; }, [](float, float) { return -1.0f; });
}

Var add_scalar(const Var& a, float s) {
  return unary_elementwise(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var mul_scalar(const Var& a, float s) {
  return unary_elementwise(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Var abs(const Var& a) {
  return unary_elementwise(
      a, [](float x) { return std::fabs(x); },
      [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Var square(const Var& a) {
  return unary_elementwise(a, [](float x) { return x * x; },
                           [](float x, float) { return 2.0f * x; });
}

Var exp(const Var& a) {
  return unary_elementwise(a, [](float x) { return std::exp(x); },
                           [](float, float y) { return y; });
}

Var log(const Var& a) {
  return unary_elementwise(a, [](float x) { return std::log(x); },
                           [](float x, float) { return 1.0f / x; });
}

Var sigmoid(const Var& a) {
  return unary_elementwise(
      a,
      [](float x) {
        return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
      },
      [](float, float y) { return y * (1.0f - y); });
}

Var leaky_relu(const Var& a, float slope) {
  return unary_elementwise(a, [slope](float x) { return x > 0.0f ? x : slope * x; },
                           [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0f); }

Var clamp(const Var& a, float lo, float hi) {
  return unary_elementwise(
      a, [lo, hi](float x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [a](Node& node) {
    if (!a->requires_grad) return;
    float* da = a->ensure_grad().data();
    const float* g = node.grad.data();
    const int64_t n = node.value.numel();
    for (int64_t i = 0; i < n; ++i) da[i] += g[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  check_rank(a, 4, "concat_channels");
  check_rank(b, 4, "concat_channels");
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  require(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3], ErrorKind::invalid_argument,
          "concat_channels: batch/spatial dims differ");
  const int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor out({N, Ca + Cb, H, W});
  float* y = out.data();
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  for (int n = 0; n < N; ++n) {
    std::copy(pa + n * Ca * plane, pa + (n + 1) * Ca * plane, y + n * (Ca + Cb) * plane);
    std::copy(pb + n * Cb * plane, pb + (n + 1) * Cb * plane,
              y + n * (Ca + Cb) * plane + Ca * plane);
  }
  return make_node(std::move(out), {a, b}, [a, b, N, Ca, Cb, plane](Node& node) {
    const float* g = node.grad.data();
    for (int n = 0; n < N; ++n) {
      if (a->requires_grad) {
        float* da = a->ensure_grad().data() + n * Ca * plane;
        const float* ga = g + n * (Ca + Cb) * plane;
        for (int64_t i = 0; i < Ca * plane; ++i) da[i] += ga[i];
      }
      if (b->requires_grad) {
        float* db = b->ensure_grad().data() + n * Cb * plane;
        const float* gb = g + n * (Ca + Cb) * plane + Ca * plane;
        for (int64_t i = 0; i < Cb * plane; ++i) db[i] += gb[i];
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::invalid_argument, "concat_rows: no inputs");
  const int K = parts[0]->value.dim(1);
  int M = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_rows");
    require(p->value.dim(1) == K, ErrorKind::invalid_argument, "concat_rows: col count differs");
    M += p->value.dim(0);
  }
  Tensor out({M, K});
  float* y = out.data();
  for (const auto& p : parts) {
    const int64_t n = p->value.numel();
    std::copy(p->value.data(), p->value.data() + n, y);
    y += n;
  }
  return make_node(std::move(out), parts, [parts](Node& node) {
    const float* g = node.grad.data();
    for (const auto& p : parts) {
      const int64_t n = p->value.numel();
      if (p->requires_grad) {
        float* dp = p->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) dp[i] += g[i];
      }
      g += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::invalid_argument, "concat_cols: no inputs");
  const int M = parts[0]->value.dim(0);
  int K = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    require(p->value.dim(0) == M, ErrorKind::invalid_argument, "concat_cols: row count differs");
    K += p->value.dim(1);
  }
  Tensor out({M, K});
  float* y = out.data();
  int col = 0;
  for (const auto& p : parts) {
    const int kp = p->value.dim(1);
    const float* src = p->value.data();
    for (int r = 0; r < M; ++r)
      std::copy(src + static_cast<int64_t>(r) * kp, src + static_cast<int64_t>(r + 1) * kp,
                y + static_cast<int64_t>(r) * K + col);
    col += kp;
  }
  return make_node(std::move(out), parts, [parts, M, K](Node& node) {
    const float* g = node.grad.data();
    int col = 0;
    for (const auto& p : parts) {
      const int kp = p->value.dim(1);
      if (p->requires_grad) {
        float* dp = p->ensure_grad().data();
        for (int r = 0; r < M; ++r) {
          const float* gr = g + static_cast<int64_t>(r) * K + col;
          float* dr = dp + static_cast<int64_t>(r) * kp;
          for (int c = 0; c < kp; ++c) dr[c] += gr[c];
        }
      }
      col += kp;
    }
  });
}

Var tile_cols(const Var& a, int copies) {
  check_rank(a, 2, "tile_cols");
  require(a->value.dim(1) == 1, ErrorKind::invalid_argument, "tile_cols expects [M,1]");
  const int M = a->value.dim(0);
  Tensor out({M, copies});
  float* y = out.data();
  const float* x = a->value.data();
  for (int r = 0; r < M; ++r)
    for (int c = 0; c < copies; ++c) y[static_cast<int64_t>(r) * copies + c] = x[r];
  return make_node(std::move(out), {a}, [a, M, copies](Node& node) {
    if (!a->requires_grad) return;
    float* da = a->ensure_grad().data();
    const float* g = node.grad.data();
    for (int r = 0; r < M; ++r) {
      double acc = 0.0;
      for (int c = 0; c < copies; ++c) acc += g[static_cast<int64_t>(r) * copies + c];
      da[r] += static_cast<float>(acc);
    }
  });
}

Var broadcast_planes(const Var& z, int height, int width) {
  check_rank(z, 2, "broadcast_planes");
  const int N = z->value.dim(0), D = z->value.dim(1);
  Tensor out({N, D, height, width});
  const int64_t plane = static_cast<int64_t>(height) * width;
  float* y = out.data();
  const float* x = z->value.data();
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d) {
      float* dst = y + (static_cast<int64_t>(n) * D + d) * plane;
      std::fill(dst, dst + plane, x[static_cast<int64_t>(n) * D + d]);
    }
  return make_node(std::move(out), {z}, [z, N, D, plane](Node& node) {
    if (!z->requires_grad) return;
    float* dz = z->ensure_grad().data();
    const float* g = node.grad.data();
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < D; ++d) {
        const float* src = g + (static_cast<int64_t>(n) * D + d) * plane;
        double acc = 0.0;
        for (int64_t i = 0; i < plane; ++i) acc += src[i];
        dz[static_cast<int64_t>(n) * D + d] += static_cast<float>(acc);
      }
  });
}

Var stop_gradient(const Var& a) { return constant(a->value); }

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d");
  check_rank(b, 1, "conv2d");
  const int N = x->value.dim(0), Ci = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int Co = w->value.dim(0), k = w->value.dim(2);
  require(w->value.dim(1) == Ci, ErrorKind::invalid_argument, "conv2d: channel mismatch");
  require(w->value.dim(3) == k, ErrorKind::invalid_argument, "conv2d: non-square kernel");
  require(b->value.dim(0) == Co, ErrorKind::invalid_argument, "conv2d: bias size mismatch");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, ErrorKind::invalid_argument, "conv2d: output would be empty");

  const int K = Ci * k * k;
  const int64_t M = static_cast<int64_t>(Ho) * Wo;
  Tensor out({N, Co, Ho, Wo});
  {
    float* cols = col_scratch(static_cast<int64_t>(K) * M);
    ConstMapRM Wm(w->value.data(), Co, K);
    for (int n = 0; n < N; ++n) {
      im2col(x->value.data() + static_cast<int64_t>(n) * Ci * H * W, Ci, H, W, k, stride, pad, Ho,
             Wo, cols);
      ConstMapRM Cm(cols, K, M);
      MapRM Ym(out.data() + static_cast<int64_t>(n) * Co * M, Co, static_cast<int>(M));
      Ym.noalias() = Wm * Cm;
      const float* bias = b->value.data();
      for (int co = 0; co < Co; ++co) Ym.row(co).array() += bias[co];
    }
  }

  return make_node(std::move(out), {x, w, b},
                   [x, w, b, N, Ci, H, W, Co, k, stride, pad, Ho, Wo, K, M](Node& node) {
    float* cols = col_scratch(static_cast<int64_t>(K) * M);
    std::vector<float> dcols;
    if (x->requires_grad) dcols.resize(static_cast<size_t>(K) * M);
    ConstMapRM Wm(w->value.data(), Co, K);
    for (int n = 0; n < N; ++n) {
      ConstMapRM dYm(node.grad.data() + static_cast<int64_t>(n) * Co * M, Co,
                     static_cast<int>(M));
      if (w->requires_grad) {
        im2col(x->value.data() + static_cast<int64_t>(n) * Ci * H * W, Ci, H, W, k, stride, pad,
               Ho, Wo, cols);
        ConstMapRM Cm(cols, K, M);
        MapRM dWm(w->ensure_grad().data(), Co, K);
        dWm.noalias() += dYm * Cm.transpose();
      }
      if (b->requires_grad) {
        float* db = b->ensure_grad().data();
        for (int co = 0; co < Co; ++co) db[co] += dYm.row(co).sum();
      }
      if (x->requires_grad) {
        MapRM dCm(dcols.data(), K, static_cast<int>(M));
        dCm.noalias() = Wm.transpose() * dYm;
        col2im_add(dcols.data(), Ci, H, W, k, stride, pad, Ho, Wo,
                   x->ensure_grad().data() + static_cast<int64_t>(n) * Ci * H * W);
      }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  check_rank(x, 4, "upsample_nearest2");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  const float* px = x->value.data();
  float* y = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = px + static_cast<int64_t>(nc) * H * W;
    float* dst = y + static_cast<int64_t>(nc) * 4 * H * W;
    for (int i = 0; i < H; ++i) {
      float* r0 = dst + static_cast<int64_t>(2 * i) * 2 * W;
      float* r1 = r0 + 2 * W;
      const float* s = src + static_cast<int64_t>(i) * W;
      for (int j = 0; j < W; ++j) {
        r0[2 * j] = r0[2 * j + 1] = r1[2 * j] = r1[2 * j + 1] = s[j];
      }
    }
  }
  return make_node(std::move(out), {x}, [x, N, C, H, W](Node& node) {
    if (!x->requires_grad) return;
    float* dx = x->ensure_grad().data();
    const float* g = node.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      float* dst = dx + static_cast<int64_t>(nc) * H * W;
      const float* src = g + static_cast<int64_t>(nc) * 4 * H * W;
      for (int i = 0; i < H; ++i) {
        const float* r0 = src + static_cast<int64_t>(2 * i) * 2 * W;
        const float* r1 = r0 + 2 * W;
        float* d = dst + static_cast<int64_t>(i) * W;
        for (int j = 0; j < W; ++j) {
          d[j] += r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1];
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  check_rank(x, 4, "avg_pool2");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  require(H % 2 == 0 && W % 2 == 0, ErrorKind::invalid_argument, "avg_pool2: odd spatial dims");
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({N, C, Ho, Wo});
  const float* px = x->value.data();
  float* y = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = px + static_cast<int64_t>(nc) * H * W;
    float* dst = y + static_cast<int64_t>(nc) * Ho * Wo;
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) {
        const float* s = src + static_cast<int64_t>(2 * i) * W + 2 * j;
        dst[static_cast<int64_t>(i) * Wo + j] = 0.25f * (s[0] + s[1] + s[W] + s[W + 1]);
      }
  }
  return make_node(std::move(out), {x}, [x, N, C, H, W, Ho, Wo](Node& node) {
    if (!x->requires_grad) return;
    float* dx = x->ensure_grad().data();
    const float* g = node.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      float* dst = dx + static_cast<int64_t>(nc) * H * W;
      const float* src = g + static_cast<int64_t>(nc) * Ho * Wo;
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          const float q = 0.25f * src[static_cast<int64_t>(i) * Wo + j];
          float* d = dst + static_cast<int64_t>(2 * i) * W + 2 * j;
          d[0] += q;
          d[1] += q;
          d[W] += q;
          d[W + 1] += q;
        }
    }
  });
}

Var global_avg_pool(const Var& x) {
  check_rank(x, 4, "global_avg_pool");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor out({N, C});
  const float* px = x->value.data();
  float* y = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = px + static_cast<int64_t>(nc) * plane;
    double acc = 0.0;
    for (int64_t i = 0; i < plane; ++i) acc += src[i];
    y[nc] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return make_node(std::move(out), {x}, [x, N, C, plane](Node& node) {
    if (!x->requires_grad) return;
    float* dx = x->ensure_grad().data();
    const float* g = node.grad.data();
    const float inv = 1.0f / static_cast<float>(plane);
    for (int nc = 0; nc < N * C; ++nc) {
      const float q = g[nc] * inv;
      float* dst = dx + static_cast<int64_t>(nc) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += q;
    }
  });
}

Var gather_patches(const Var& x, int n, const std::vector<int>& locations) {
  check_rank(x, 4, "gather_patches");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  require(n >= 0 && n < N, ErrorKind::invalid_argument, "gather_patches: batch index");
  const int64_t plane = static_cast<int64_t>(H) * W;
  const int L = static_cast<int>(locations.size());
  for (int loc : locations)
    require(loc >= 0 && loc < plane, ErrorKind::invalid_argument,
            "gather_patches: location out of range");
  Tensor out({L, C});
  const float* px = x->value.data() + static_cast<int64_t>(n) * C * plane;
  float* y = out.data();
  for (int l = 0; l < L; ++l)
    for (int c = 0; c < C; ++c)
      y[static_cast<int64_t>(l) * C + c] = px[static_cast<int64_t>(c) * plane + locations[l]];
  return make_node(std::move(out), {x}, [x, n, locations, C, plane, L](Node& node) {
    if (!x->requires_grad) return;
    float* dx = x->ensure_grad().data() + static_cast<int64_t>(n) * C * plane;
    const float* g = node.grad.data();
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < C; ++c)
        dx[static_cast<int64_t>(c) * plane + locations[l]] += g[static_cast<int64_t>(l) * C + c];
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear");
  check_rank(b, 1, "linear");
  const int N = x->value.dim(0), D = x->value.dim(1), O = w->value.dim(0);
  require(w->value.dim(1) == D, ErrorKind::invalid_argument, "linear: weight shape mismatch");
  require(b->value.dim(0) == O, ErrorKind::invalid_argument, "linear: bias shape mismatch");
  Tensor out({N, O});
  {
    ConstMapRM Xm(x->value.data(), N, D);
    ConstMapRM Wm(w->value.data(), O, D);
    MapRM Ym(out.data(), N, O);
    Ym.noalias() = Xm * Wm.transpose();
    const float* bias = b->value.data();
    for (int r = 0; r < N; ++r)
      for (int c = 0; c < O; ++c) Ym(r, c) += bias[c];
  }
  return make_node(std::move(out), {x, w, b}, [x, w, b, N, D, O](Node& node) {
    ConstMapRM dYm(node.grad.data(), N, O);
    if (x->requires_grad) {
      MapRM dXm(x->ensure_grad().data(), N, D);
      ConstMapRM Wm(w->value.data(), O, D);
      dXm.noalias() += dYm * Wm;
    }
    if (w->requires_grad) {
      MapRM dWm(w->ensure_grad().data(), O, D);
      ConstMapRM Xm(x->value.data(), N, D);
      dWm.noalias() += dYm.transpose() * Xm;
    }
    if (b->requires_grad) {
      float* db = b->ensure_grad().data();
      for (int c = 0; c < O; ++c) db[c] += dYm.col(c).sum();
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul_nt");
  check_rank(b, 2, "matmul_nt");
  const int M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(0);
  require(b->value.dim(1) == K, ErrorKind::invalid_argument, "matmul_nt: inner dims differ");
  Tensor out({M, N});
  {
    ConstMapRM Am(a->value.data(), M, K);
    ConstMapRM Bm(b->value.data(), N, K);
    MapRM Ym(out.data(), M, N);
    Ym.noalias() = Am * Bm.transpose();
  }
  return make_node(std::move(out), {a, b}, [a, b, M, K, N](Node& node) {
    ConstMapRM dYm(node.grad.data(), M, N);
    if (a->requires_grad) {
      MapRM dAm(a->ensure_grad().data(), M, K);
      ConstMapRM Bm(b->value.data(), N, K);
      dAm.noalias() += dYm * Bm;
    }
    if (b->requires_grad) {
      MapRM dBm(b->ensure_grad().data(), N, K);
      ConstMapRM Am(a->value.data(), M, K);
      dBm.noalias() += dYm.transpose() * Am;
    }
  });
}

Var l2_normalize_rows(const Var& a) {
  check_rank(a, 2, "l2_normalize_rows");
  const int M = a->value.dim(0), K = a->value.dim(1);
  Tensor out({M, K});
  Tensor norms({M});
  const float* x = a->value.data();
  float* y = out.data();
  float* nv = norms.data();
  for (int r = 0; r < M; ++r) {
    const float* xr = x + static_cast<int64_t>(r) * K;
    double acc = 1e-12;
    for (int c = 0; c < K; ++c) acc += static_cast<double>(xr[c]) * xr[c];
    const float norm = static_cast<float>(std::sqrt(acc));
    nv[r] = norm;
    float* yr = y + static_cast<int64_t>(r) * K;
    for (int c = 0; c < K; ++c) yr[c] = xr[c] / norm;
  }
  return make_node(std::move(out), {a}, [a, norms, M, K](Node& node) {
    if (!a->requires_grad) return;
    float* da = a->ensure_grad().data();
    const float* g = node.grad.data();
    const float* y = node.value.data();
    const float* nv = norms.data();
    for (int r = 0; r < M; ++r) {
      const float* gr = g + static_cast<int64_t>(r) * K;
      const float* yr = y + static_cast<int64_t>(r) * K;
      double dot = 0.0;
      for (int c = 0; c < K; ++c) dot += static_cast<double>(gr[c]) * yr[c];
      float* dr = da + static_cast<int64_t>(r) * K;
      const float inv = 1.0f / nv[r];
      for (int c = 0; c < K; ++c)
        dr[c] += (gr[c] - yr[c] * static_cast<float>(dot)) * inv;
    }
  });
}

Var sum(const Var& a) {
  const float* x = a->value.data();
  const int64_t n = a->value.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += x[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  return make_node(std::move(out), {a}, [a](Node& node) {
    if (!a->requires_grad) return;
    const float g = node.grad.data()[0];
    float* da = a->ensure_grad().data();
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) da[i] += g;
  });
}

Var mean(const Var& a) {
  const int64_t n = a->value.numel();
  return mul_scalar(sum(a), 1.0f / static_cast<float>(n));
}

Var mean_abs_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "mean_abs_diff");
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  const int64_t n = a->value.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::fabs(static_cast<double>(pa[i]) - pb[i]);
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const float g = node.grad.data()[0];
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    const int64_t n = a->value.numel();
    const float q = g / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) {
      const float d = pa[i] - pb[i];
      const float s = d > 0.0f ? q : (d < 0.0f ? -q : 0.0f);
      if (a->requires_grad) a->ensure_grad().data()[i] += s;
      if (b->requires_grad) b->ensure_grad().data()[i] -= s;
    }
  });
}

Var mean_sq_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "mean_sq_diff");
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  const int64_t n = a->value.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const float g = node.grad.data()[0];
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    const int64_t n = a->value.numel();
    const float q = 2.0f * g / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) {
      const float s = q * (pa[i] - pb[i]);
      if (a->requires_grad) a->ensure_grad().data()[i] += s;
      if (b->requires_grad) b->ensure_grad().data()[i] -= s;
    }
  });
}

Var softmax_cross_entropy_rows(const Var& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "softmax_cross_entropy_rows");
  const int M = logits->value.dim(0), C = logits->value.dim(1);
  require(static_cast<int>(labels.size()) == M, ErrorKind::invalid_argument,
          "softmax_cross_entropy_rows: label count mismatch");
  for (int y : labels)
    require(y >= 0 && y < C, ErrorKind::invalid_argument, "label out of range");
  Tensor out({M});
  const float* z = logits->value.data();
  float* loss = out.data();
  for (int r = 0; r < M; ++r) {
    const float* zr = z + static_cast<int64_t>(r) * C;
    double zmax = zr[0];
    for (int c = 1; c < C; ++c) zmax = std::max(zmax, static_cast<double>(zr[c]));
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += std::exp(static_cast<double>(zr[c]) - zmax);
    loss[r] = static_cast<float>(zmax + std::log(acc) - zr[labels[static_cast<size_t>(r)]]);
  }
  return make_node(std::move(out), {logits}, [logits, labels, M, C](Node& node) {
    if (!logits->requires_grad) return;
    const float* z = logits->value.data();
    const float* g = node.grad.data();
    float* dz = logits->ensure_grad().data();
    for (int r = 0; r < M; ++r) {
      const float* zr = z + static_cast<int64_t>(r) * C;
      float* dr = dz + static_cast<int64_t>(r) * C;
      double zmax = zr[0];
      for (int c = 1; c < C; ++c) zmax = std::max(zmax, static_cast<double>(zr[c]));
      double acc = 0.0;
      for (int c = 0; c < C; ++c) acc += std::exp(static_cast<double>(zr[c]) - zmax);
      for (int c = 0; c < C; ++c) {
        const float p = static_cast<float>(std::exp(static_cast<double>(zr[c]) - zmax) / acc);
        dr[c] += g[r] * (p - (c == labels[static_cast<size_t>(r)] ? 1.0f : 0.0f));
      }
    }
  });
}

Var softmax_cross_entropy_spatial(const Var& logits, const std::vector<int>& labels) {
  check_rank(logits, 4, "softmax_cross_entropy_spatial");
  const int N = logits->value.dim(0), K = logits->value.dim(1);
  const int H = logits->value.dim(2), W = logits->value.dim(3);
  const int64_t pixels = static_cast<int64_t>(N) * H * W;
  require(static_cast<int64_t>(labels.size()) == pixels, ErrorKind::invalid_argument,
          "softmax_cross_entropy_spatial: label count mismatch");
  const int64_t plane = static_cast<int64_t>(H) * W;
  const float* z = logits->value.data();
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const float* zn = z + static_cast<int64_t>(n) * K * plane;
    for (int64_t p = 0; p < plane; ++p) {
      double zmax = zn[p];
      for (int k = 1; k < K; ++k) zmax = std::max(zmax, static_cast<double>(zn[k * plane + p]));
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += std::exp(static_cast<double>(zn[k * plane + p]) - zmax);
      const int label = labels[static_cast<size_t>(n * plane + p)];
      require(label >= 0 && label < K, ErrorKind::invalid_argument, "label out of range");
      total += zmax + std::log(acc) - zn[static_cast<int64_t>(label) * plane + p];
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(pixels)));
  return make_node(std::move(out), {logits}, [logits, labels, N, K, plane, pixels](Node& node) {
    if (!logits->requires_grad) return;
    const float g = node.grad.data()[0] / static_cast<float>(pixels);
    const float* z = logits->value.data();
    float* dz = logits->ensure_grad().data();
    for (int n = 0; n < N; ++n) {
      const float* zn = z + static_cast<int64_t>(n) * K * plane;
      float* dn = dz + static_cast<int64_t>(n) * K * plane;
      for (int64_t p = 0; p < plane; ++p) {
        double zmax = zn[p];
        for (int k = 1; k < K; ++k) zmax = std::max(zmax, static_cast<double>(zn[k * plane + p]));
        double acc = 0.0;
        for (int k = 0; k < K; ++k)
          acc += std::exp(static_cast<double>(zn[k * plane + p]) - zmax);
        const int label = labels[static_cast<size_t>(n * plane + p)];
        for (int k = 0; k < K; ++k) {
          const float prob =
              static_cast<float>(std::exp(static_cast<double>(zn[k * plane + p]) - zmax) / acc);
          dn[k * plane + p] += g * (prob - (k == label ? 1.0f : 0.0f));
        }
      }
    }
  });
}

}  // namespace prism::ad
