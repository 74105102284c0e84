#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "preftune/tensor.hpp"

namespace preftune::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are keyed to parameter storage, so the
// same state object can be reused across steps as long as the parameter set
// is stable. Only requires_grad parameters are updated.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<Tensor> params);
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::unordered_map<TensorImpl*, Moments> moments_;
};

void zero_grad(std::span<Tensor> params);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  bool pass = false;
};

// Compares reverse-mode gradients against central finite differences on a
// random subsample (>= sample_per_param coordinates, or all if fewer) of
// each parameter. `loss_fn` must rebuild the scalar loss on each call and
// record onto the active tape when one is present.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedParam> params, double eps,
                           double tolerance,
                           std::size_t sample_per_param = 200,
                           std::uint64_t seed = 0);

}  // namespace preftune::nn
