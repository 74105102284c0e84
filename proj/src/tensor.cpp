#include "preftune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "preftune/error.hpp"

namespace preftune::nn {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values())
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + op);
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Marks `out` as an interior node and registers the backward closure.
void finalize(Tensor& out, std::initializer_list<const Tensor*> inputs,
              std::function<void()> backward_fn, const char* op) {
  check_finite(out, op);
  if (!want_grad(inputs)) return;
  out.set_requires_grad(true);
  out.impl()->ensure_grad();
  for (const Tensor* t : inputs)
    if (t->requires_grad()) t->impl()->ensure_grad();
  Tape::active()->record(std::move(backward_fn));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    throw NumericError(std::string(op) + ": expected a 2-D tensor");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  impl_->data.assign(shape_size(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->ensure_grad();
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data()[0] = v;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data,
                    bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw NumericError("tensor shape/data size mismatch");
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad) t.impl_->ensure_grad();
  return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, RandomSource& rng,
                     double stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw NumericError("item() on non-scalar tensor");
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  if (rg) impl_->ensure_grad();
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

// ---- tape -------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw NumericError("recording onto a consumed tape");
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw NumericError("backward called twice on one tape");
  if (!loss.defined() || loss.size() != 1)
    throw NumericError("backward requires a scalar loss");
  consumed_ = true;
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

// ---- primitives -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw NumericError("matmul shape mismatch: [" + std::to_string(m) + "," +
                       std::to_string(k) + "] x [" +
                       std::to_string(b.rows()) + "," + std::to_string(n) +
                       "]");
  Tensor out({m, n});
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }

  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finalize(
      out, {&a, &b},
      [ai, bi, oi, m, k, n] {
        const double* dC = oi->grad.data();
        if (ai->requires_grad) {
          double* dA = ai->grad.data();
          const double* B = bi->data.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double* dcrow = dC + i * n;
              const double* brow = B + p * n;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
              dA[i * k + p] += s;
            }
        }
        if (bi->requires_grad) {
          double* dB = bi->grad.data();
          const double* A = ai->data.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double av = A[i * k + p];
              const double* dcrow = dC + i * n;
              double* dbrow = dB + p * n;
              for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
            }
        }
      },
      "matmul");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[j * m + i] = a.data()[i * n + j];
  auto ai = a.impl(), oi = out.impl();
  finalize(
      out, {&a},
      [ai, oi, m, n] {
        if (!ai->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            ai->grad[i * n + j] += oi->grad[j * m + i];
      },
      "transpose");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw NumericError("add shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finalize(
      out, {&a, &b},
      [ai, bi, oi] {
        if (ai->requires_grad)
          for (std::size_t i = 0; i < oi->grad.size(); ++i)
            ai->grad[i] += oi->grad[i];
        if (bi->requires_grad)
          for (std::size_t i = 0; i < oi->grad.size(); ++i)
            bi->grad[i] += oi->grad[i];
      },
      "add");
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_2d(a, "add_rowvec");
  std::size_t m = a.rows(), n = a.cols();
  if (v.size() != n) throw NumericError("add_rowvec size mismatch");
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = a.data()[i * n + j] + v.data()[j];
  auto ai = a.impl(), vi = v.impl(), oi = out.impl();
  finalize(
      out, {&a, &v},
      [ai, vi, oi, m, n] {
        if (ai->requires_grad)
          for (std::size_t i = 0; i < m * n; ++i) ai->grad[i] += oi->grad[i];
        if (vi->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              vi->grad[j] += oi->grad[i * n + j];
      },
      "add_rowvec");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw NumericError("mul shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finalize(
      out, {&a, &b},
      [ai, bi, oi] {
        for (std::size_t i = 0; i < oi->grad.size(); ++i) {
          if (ai->requires_grad) ai->grad[i] += bi->data[i] * oi->grad[i];
          if (bi->requires_grad) bi->grad[i] += ai->data[i] * oi->grad[i];
        }
      },
      "mul");
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  auto ai = a.impl(), oi = out.impl();
  finalize(
      out, {&a},
      [ai, oi, c] {
        if (!ai->requires_grad) return;
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
          ai->grad[i] += c * oi->grad[i];
      },
      "scale");
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data() + i * n;
    double* orow = out.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  auto ai = a.impl(), oi = out.impl();
  finalize(
      out, {&a},
      [ai, oi, m, n] {
        if (!ai->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i) {
          const double* p = oi->data.data() + i * n;
          const double* dy = oi->grad.data() + i * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += dy[j] * p[j];
          double* dx = ai->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j)
            dx[j] += p[j] * (dy[j] - dot);
        }
      },
      "softmax_rows");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_2d(x, "layer_norm");
  std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n)
    throw NumericError("layer_norm gain/bias size mismatch");
  Tensor out({m, n});
  // keep normalized activations for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      double xh = (row[j] - mean) * is;
      (*xhat)[i * n + j] = xh;
      out.data()[i * n + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
  finalize(
      out, {&x, &gain, &bias},
      [xi, gi, bi, oi, xhat, inv_std, m, n] {
        for (std::size_t i = 0; i < m; ++i) {
          const double* dy = oi->grad.data() + i * n;
          const double* xh = xhat->data() + i * n;
          if (gi->requires_grad)
            for (std::size_t j = 0; j < n; ++j)
              gi->grad[j] += dy[j] * xh[j];
          if (bi->requires_grad)
            for (std::size_t j = 0; j < n; ++j) bi->grad[j] += dy[j];
          if (xi->requires_grad) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              double gh = dy[j] * gi->data[j];
              mean_g += gh;
              mean_gx += gh * xh[j];
            }
            mean_g /= static_cast<double>(n);
            mean_gx /= static_cast<double>(n);
            double is = (*inv_std)[i];
            for (std::size_t j = 0; j < n; ++j) {
              double gh = dy[j] * gi->data[j];
              xi->grad[i * n + j] += is * (gh - mean_g - xh[j] * mean_gx);
            }
          }
        }
      },
      "layer_norm");
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  auto xi = x.impl(), oi = out.impl();
  finalize(
      out, {&x},
      [xi, oi] {
        if (!xi->requires_grad) return;
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < oi->grad.size(); ++i) {
          double v = xi->data[i];
          double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
          double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
          xi->grad[i] += (cdf + v * pdf) * oi->grad[i];
        }
      },
      "gelu");
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_lookup");
  std::size_t v = table.rows(), d = table.cols(), t = ids.size();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw NumericError("embedding id out of range: " + std::to_string(id));
  Tensor out({t, d});
  for (std::size_t i = 0; i < t; ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  auto ti = table.impl(), oi = out.impl();
  std::vector<int> ids_copy(ids.begin(), ids.end());
  finalize(
      out, {&table},
      [ti, oi, ids_copy = std::move(ids_copy), d] {
        if (!ti->requires_grad) return;
        for (std::size_t i = 0; i < ids_copy.size(); ++i) {
          double* dst =
              ti->grad.data() + static_cast<std::size_t>(ids_copy[i]) * d;
          const double* src = oi->grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      },
      "embedding_lookup");
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_rows");
  std::size_t n = x.cols();
  if (start + count > x.rows()) throw NumericError("slice_rows out of range");
  Tensor out({count, n});
  std::copy_n(x.data() + start * n, count * n, out.data());
  auto xi = x.impl(), oi = out.impl();
  finalize(
      out, {&x},
      [xi, oi, start, count, n] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < count * n; ++i)
          xi->grad[start * n + i] += oi->grad[i];
      },
      "slice_rows");
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  std::size_t m = x.rows(), n = x.cols();
  if (start + count > n) throw NumericError("slice_cols out of range");
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data() + i * n + start, count, out.data() + i * count);
  auto xi = x.impl(), oi = out.impl();
  finalize(
      out, {&x},
      [xi, oi, start, count, m, n] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j)
            xi->grad[i * n + start + j] += oi->grad[i * count + j];
      },
      "slice_cols");
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw NumericError("concat_cols of nothing");
  std::size_t m = parts[0].rows(), n = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw NumericError("concat_cols row mismatch");
    n += p.cols();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t pc = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data() + i * pc, pc, out.data() + i * n + off);
    off += pc;
  }
  bool any_rg = false;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    any_rg |= p.requires_grad();
  }
  if (Tape::active() && any_rg) {
    check_finite(out, "concat_cols");
    out.set_requires_grad(true);
    out.impl()->ensure_grad();
    for (auto& pi : impls)
      if (pi->requires_grad) pi->ensure_grad();
    auto oi = out.impl();
    Tape::active()->record([impls = std::move(impls), oi, m, n] {
      std::size_t off = 0;
      for (auto& pi : impls) {
        std::size_t pc = pi->shape[1];
        if (pi->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j)
              pi->grad[i * pc + j] += oi->grad[i * n + off + j];
        off += pc;
      }
    });
  } else {
    check_finite(out, "concat_cols");
  }
  return out;
}

Tensor mean_pool_masked(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_2d(x, "mean_pool_masked");
  std::size_t t = x.rows(), d = x.cols();
  if (mask.size() != t) throw NumericError("mean_pool_masked mask mismatch");
  double count = 0.0;
  for (auto m : mask) count += m ? 1.0 : 0.0;
  if (count == 0.0) throw NumericError("mean_pool_masked: all-zero mask");
  Tensor out({1, d});
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < d; ++j) out.data()[j] += x.data()[i * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) out.data()[j] /= count;
  auto xi = x.impl(), oi = out.impl();
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  finalize(
      out, {&x},
      [xi, oi, mask_copy = std::move(mask_copy), t, d, count] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < t; ++i) {
          if (!mask_copy[i]) continue;
          for (std::size_t j = 0; j < d; ++j)
            xi->grad[i * d + j] += oi->grad[j] / count;
        }
      },
      "mean_pool_masked");
  return out;
}

Tensor cross_entropy_with_probs(const Tensor& probs, const Tensor& targets) {
  require_2d(probs, "cross_entropy_with_probs");
  if (probs.shape() != targets.shape())
    throw NumericError("cross_entropy_with_probs shape mismatch");
  static constexpr double clip = 1e-15;
  std::size_t m = probs.rows(), n = probs.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < m * n; ++i) {
    double y = targets.data()[i];
    if (y != 0.0)
      total -= y * std::log(std::max(probs.data()[i], clip));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  auto pi = probs.impl(), ti = targets.impl(), oi = out.impl();
  finalize(
      out, {&probs, &targets},
      [pi, ti, oi, m, n] {
        if (!pi->requires_grad) return;
        double d = oi->grad[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m * n; ++i) {
          double y = ti->data[i];
          if (y != 0.0 && pi->data[i] > clip)
            pi->grad[i] -= d * y / pi->data[i];
        }
      },
      "cross_entropy_with_probs");
  return out;
}

Tensor mean_scalars(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw NumericError("mean_scalars of nothing");
  double sum = 0.0;
  bool any_rg = false;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& s : scalars) {
    if (s.size() != 1) throw NumericError("mean_scalars expects scalars");
    sum += s.data()[0];
    impls.push_back(s.impl());
    any_rg |= s.requires_grad();
  }
  double k = static_cast<double>(scalars.size());
  Tensor out = Tensor::scalar(sum / k);
  check_finite(out, "mean_scalars");
  if (Tape::active() && any_rg) {
    out.set_requires_grad(true);
    out.impl()->ensure_grad();
    for (auto& si : impls)
      if (si->requires_grad) si->ensure_grad();
    auto oi = out.impl();
    Tape::active()->record([impls = std::move(impls), oi, k] {
      for (auto& si : impls)
        if (si->requires_grad) si->grad[0] += oi->grad[0] / k;
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, RandomSource& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw NumericError("dropout p must be in [0,1)");
  if (!training || p == 0.0) return x;
  Tensor out(x.shape());
  auto keep = std::make_shared<std::vector<double>>(x.size());
  double inv_keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double k = rng.uniform() < p ? 0.0 : inv_keep;
    (*keep)[i] = k;
    out.data()[i] = x.data()[i] * k;
  }
  auto xi = x.impl(), oi = out.impl();
  finalize(
      out, {&x},
      [xi, oi, keep] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
          xi->grad[i] += (*keep)[i] * oi->grad[i];
      },
      "dropout");
  return out;
}

}  // namespace preftune::nn
