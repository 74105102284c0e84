#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "preftune/types.hpp"

namespace preftune {

struct MetricsReport {
  double log_loss = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
  static constexpr int m = 3;  // number of classes

  std::string to_json() const;
};

// Probability floor inside the log; keeps the loss finite on hard zeros.
constexpr double kLogLossClip = 1e-15;
constexpr double kSimplexTol = 1e-9;

// argmax over 3 components, ties broken toward the lowest index (A before B
// before Tie).
int argmax3(const std::array<double, 3>& v);

bool check_simplex(const ProbTriple& t, double tol = kSimplexTol);

// Pairwise (cascade) summation for size-independent reproducibility.
double pairwise_sum(std::span<const double> values);

double log_loss(std::span<const ProbTriple> preds,
                std::span<const LabelVec> labels);

double accuracy(std::span<const ProbTriple> preds,
                std::span<const LabelVec> labels);

MetricsReport compute_metrics(std::span<const ProbTriple> preds,
                              std::span<const LabelVec> labels);

}  // namespace preftune
