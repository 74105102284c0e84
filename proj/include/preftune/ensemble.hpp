#pragma once

#include <span>
#include <string>
#include <vector>

#include "preftune/types.hpp"

namespace preftune {

// Convex-combination weights over ensemble members, order-matched to the
// member list.
struct EnsembleWeights {
  std::vector<double> w;
};

// Predictions from one member, aligned to a shared example-id list.
struct MemberPredictions {
  std::string member_id;
  std::vector<std::string> ids;
  std::vector<ProbTriple> triples;
};

// Throws InvalidWeightsError on negative components or sum != 1 (tol 1e-9).
void validate_weights(const EnsembleWeights& w);

// Componentwise weighted average: P_final = sum_i w_i * P_i.
std::vector<ProbTriple> ensemble_predict(
    std::span<const MemberPredictions> members, const EnsembleWeights& w);

struct WeightSearchResult {
  EnsembleWeights weights;
  double val_log_loss = 0.0;
};

// Grid search over the weight simplex minimizing validation log loss. The
// grid always contains the corners, so the result is never worse than any
// single member. Ties go to the weight vector closest to uniform, then to
// the lower first weight.
WeightSearchResult search_weights(std::span<const MemberPredictions> members,
                                  std::span<const LabelVec> labels,
                                  double step = 0.05);

// Member-prediction interchange file: CSV `id,p_a,p_b,p_tie`. Every row is
// simplex-checked on read.
void write_predictions_csv(std::ostream& out,
                           std::span<const std::string> ids,
                           std::span<const ProbTriple> triples);
MemberPredictions read_predictions_csv(std::istream& in,
                                       const std::string& member_id);

}  // namespace preftune
