#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "prism/error.hpp"

namespace prism {

// Dense float32 tensor, row-major. Copies share storage (handle semantics);
// use clone() for an independent buffer. Shapes follow the usual layouts:
// images/features are [N,C,H,W], matrices [rows,cols], scalars {1}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    store_ = std::make_shared<std::vector<float>>(checked_numel(shape_), 0.0f);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  static Tensor scalar(float value) { return full({1}, value); }

  static Tensor from_data(std::vector<int> shape, std::vector<float> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    require(checked_numel(t.shape_) == static_cast<int64_t>(values.size()),
            ErrorKind::invalid_argument, "tensor data size does not match shape");
    t.store_ = std::make_shared<std::vector<float>>(std::move(values));
    return t;
  }

  bool defined() const { return store_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }

  int dim(int i) const {
    require(i >= 0 && i < rank(), ErrorKind::invalid_argument, "tensor dim index out of range");
    return shape_[static_cast<size_t>(i)];
  }

  int64_t numel() const { return store_ ? static_cast<int64_t>(store_->size()) : 0; }

  float* data() { return store_->data(); }
  const float* data() const { return store_->data(); }

  float item() const {
    require(numel() == 1, ErrorKind::invalid_argument, "item() requires a single-element tensor");
    return (*store_)[0];
  }

  void fill(float value) {
    for (auto& v : *store_) v = value;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.store_ = std::make_shared<std::vector<float>>(*store_);
    return t;
  }

  // Same storage, new shape (numel must match).
  Tensor reshaped(std::vector<int> shape) const {
    require(checked_numel(shape) == numel(), ErrorKind::invalid_argument,
            "reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = store_;
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (float v : *store_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  static int64_t checked_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      require(d > 0, ErrorKind::invalid_argument, "tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<float>> store_;
};

}  // namespace prism
