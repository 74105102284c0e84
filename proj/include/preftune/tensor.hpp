#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "preftune/rng.hpp"

namespace preftune::nn {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, zero-filled
  bool requires_grad = false;

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major tensor of 64-bit floats. A Tensor is a cheap handle; the
// storage is shared. Values are treated as immutable once an op has consumed
// them (parameters updated by the optimizer are leaves between tapes).
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor from(std::vector<std::size_t> shape,
                     std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(std::vector<std::size_t> shape,
                      bool requires_grad = false);
  static Tensor randn(std::vector<std::size_t> shape, RandomSource& rng,
                      double stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rows() const { return impl_->shape.at(0); }
  std::size_t cols() const { return impl_->shape.at(1); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg);
  const std::vector<double>& grad() const;
  void zero_grad();

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops executed while a TapeScope is active append their
// backward closures; backward() replays them in reverse. A tape may be
// consumed exactly once.
class Tape {
 public:
  void record(std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor mean_pool_masked(const Tensor& x, std::span<const std::uint8_t> mask);
Tensor cross_entropy_with_probs(const Tensor& probs, const Tensor& targets);
Tensor mean_scalars(std::span<const Tensor> scalars);
Tensor dropout(const Tensor& x, double p, RandomSource& rng, bool training);

}  // namespace preftune::nn
