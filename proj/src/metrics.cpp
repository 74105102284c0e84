#include "preftune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "json.hpp"
#include "preftune/error.hpp"

namespace preftune {

int argmax3(const std::array<double, 3>& v) {
  int best = 0;
  for (int j = 1; j < 3; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

bool check_simplex(const ProbTriple& t, double tol) {
  double sum = 0.0;
  for (double x : t) {
    if (!(x >= 0.0)) return false;  // also rejects NaN
    sum += x;
  }
  return std::fabs(sum - 1.0) <= tol;
}

double pairwise_sum(std::span<const double> values) {
  std::size_t n = values.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(values.subspan(0, half)) +
         pairwise_sum(values.subspan(half));
}

static void require_aligned(std::size_t a, std::size_t b) {
  if (a == 0 || a != b)
    throw MisalignmentError("predictions/labels length mismatch: " +
                            std::to_string(a) + " vs " + std::to_string(b));
}

double log_loss(std::span<const ProbTriple> preds,
                std::span<const LabelVec> labels) {
  require_aligned(preds.size(), labels.size());
  std::vector<double> terms(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!check_simplex(preds[i]))
      throw SchemaError("prediction " + std::to_string(i) +
                        " is not on the probability simplex");
    double t = 0.0;
    for (int j = 0; j < 3; ++j)
      t += labels[i][j] * std::log(std::max(preds[i][j], kLogLossClip));
    terms[i] = -t;
  }
  return pairwise_sum(terms) / static_cast<double>(preds.size());
}

double accuracy(std::span<const ProbTriple> preds,
                std::span<const LabelVec> labels) {
  require_aligned(preds.size(), labels.size());
  std::vector<double> hits(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    hits[i] = argmax3(preds[i]) == argmax3(labels[i]) ? 1.0 : 0.0;
  return pairwise_sum(hits) / static_cast<double>(preds.size());
}

MetricsReport compute_metrics(std::span<const ProbTriple> preds,
                              std::span<const LabelVec> labels) {
  MetricsReport r;
  r.log_loss = log_loss(preds, labels);
  r.accuracy = accuracy(preds, labels);
  r.n = preds.size();
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["log_loss"] = log_loss;
  j["accuracy"] = accuracy;
  j["n"] = n;
  return j.dump(2) + "\n";
}

}  // namespace preftune
