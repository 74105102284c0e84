#include "preftune/optim.hpp"

#include <algorithm>
#include <cmath>

#include "preftune/error.hpp"

namespace preftune::nn {

void Adam::step(std::span<Tensor> params) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p.requires_grad()) continue;
    auto* impl = p.impl().get();
    impl->ensure_grad();
    auto& mom = moments_[impl];
    if (mom.m.size() != impl->data.size()) {
      mom.m.assign(impl->data.size(), 0.0);
      mom.v.assign(impl->data.size(), 0.0);
    }
    for (std::size_t i = 0; i < impl->data.size(); ++i) {
      double g = impl->grad[i];
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in Adam step");
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      impl->data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedParam> params, double eps,
                           double tolerance, std::size_t sample_per_param,
                           std::uint64_t seed) {
  // analytic gradients
  std::vector<Tensor> tensors;
  for (const auto& p : params) tensors.push_back(p.tensor);
  zero_grad(tensors);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.tensor.grad());

  GradCheckReport report;
  RandomSource rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& t = const_cast<Tensor&>(params[pi].tensor);
    std::size_t n = t.size();
    std::vector<std::size_t> coords;
    if (n <= sample_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t k = 0; k < sample_per_param; ++k)
        coords.push_back(static_cast<std::size_t>(rng.uniform_below(n)));
    }
    for (std::size_t c : coords) {
      double saved = t.data()[c];
      t.data()[c] = saved + eps;
      double lp = loss_fn().item();
      t.data()[c] = saved - eps;
      double lm = loss_fn().item();
      t.data()[c] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double ad = analytic[pi][c];
      double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-3});
      double rel = std::fabs(ad - fd) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
      }
    }
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace preftune::nn
