#include "preftune/ensemble.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>

#include "preftune/error.hpp"
#include "preftune/ingest.hpp"
#include "preftune/metrics.hpp"

namespace preftune {

void validate_weights(const EnsembleWeights& w) {
  if (w.w.empty()) throw InvalidWeightsError("empty weight vector");
  double sum = 0.0;
  for (double x : w.w) {
    if (!(x >= 0.0))
      throw InvalidWeightsError("negative ensemble weight " +
                                std::to_string(x));
    sum += x;
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw InvalidWeightsError("ensemble weights sum to " +
                              std::to_string(sum) + ", expected 1");
}

static void check_alignment(std::span<const MemberPredictions> members) {
  if (members.empty()) throw MisalignmentError("no ensemble members");
  const auto& ref = members[0];
  if (ref.ids.size() != ref.triples.size())
    throw MisalignmentError("member " + ref.member_id +
                            ": id/prediction count mismatch");
  for (const auto& m : members) {
    if (m.ids.size() != m.triples.size())
      throw MisalignmentError("member " + m.member_id +
                              ": id/prediction count mismatch");
    if (m.ids != ref.ids)
      throw MisalignmentError("member " + m.member_id +
                              " example ids do not match member " +
                              ref.member_id);
  }
}

std::vector<ProbTriple> ensemble_predict(
    std::span<const MemberPredictions> members, const EnsembleWeights& w) {
  check_alignment(members);
  if (w.w.size() != members.size())
    throw InvalidWeightsError("weight count " + std::to_string(w.w.size()) +
                              " != member count " +
                              std::to_string(members.size()));
  validate_weights(w);

  std::size_t n = members[0].ids.size();
  std::vector<ProbTriple> out(n, ProbTriple{0.0, 0.0, 0.0});
  for (std::size_t k = 0; k < members.size(); ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j)
        out[i][j] += w.w[k] * members[k].triples[i][j];
  return out;
}

namespace {

double distance_to_uniform(const std::vector<double>& w) {
  double u = 1.0 / static_cast<double>(w.size());
  double d = 0.0;
  for (double x : w) d += (x - u) * (x - u);
  return d;
}

// Returns true if `cand` is preferred over `best` at equal loss.
bool tie_prefer(const std::vector<double>& cand,
                const std::vector<double>& best) {
  double dc = distance_to_uniform(cand), db = distance_to_uniform(best);
  if (dc != db) return dc < db;
  return cand < best;
}

struct GridSearch {
  std::span<const MemberPredictions> members;
  std::span<const LabelVec> labels;
  std::int64_t g;
  double best_loss = 0.0;
  std::vector<double> best_w;
  bool has_best = false;

  double eval(const std::vector<double>& w) {
    EnsembleWeights ew{w};
    auto preds = ensemble_predict(members, ew);
    return log_loss(preds, labels);
  }

  void consider(const std::vector<double>& w) {
    double loss = eval(w);
    if (!has_best || loss < best_loss - 1e-12 ||
        (std::fabs(loss - best_loss) <= 1e-12 && tie_prefer(w, best_w))) {
      if (!has_best || loss < best_loss) best_loss = loss;
      best_w = w;
      has_best = true;
    }
  }
};

}  // namespace

WeightSearchResult search_weights(std::span<const MemberPredictions> members,
                                  std::span<const LabelVec> labels,
                                  double step) {
  check_alignment(members);
  if (members[0].ids.size() != labels.size())
    throw MisalignmentError("label count does not match prediction count");
  if (!(step > 0.0 && step <= 0.5))
    throw InvalidWeightsError("grid step must be in (0, 0.5]");

  std::size_t m = members.size();
  std::int64_t g = std::llround(1.0 / step);
  if (g < 2) g = 2;

  GridSearch gs{members, labels, g};

  if (m == 1) {
    gs.consider({1.0});
  } else if (m == 2) {
    for (std::int64_t i = 0; i <= g; ++i)
      gs.consider({static_cast<double>(i) / g,
                   static_cast<double>(g - i) / g});
  } else if (m == 3) {
    for (std::int64_t i = 0; i <= g; ++i)
      for (std::int64_t j = 0; i + j <= g; ++j)
        gs.consider({static_cast<double>(i) / g, static_cast<double>(j) / g,
                     static_cast<double>(g - i - j) / g});
  } else {
    // Coordinate ascent on the integer grid: move one grid unit between a
    // pair of members while it improves the loss.
    std::vector<std::int64_t> c(m, g / static_cast<std::int64_t>(m));
    c[0] += g - (g / static_cast<std::int64_t>(m)) *
                    static_cast<std::int64_t>(m);
    auto to_w = [&](const std::vector<std::int64_t>& counts) {
      std::vector<double> w(m);
      for (std::size_t i = 0; i < m; ++i)
        w[i] = static_cast<double>(counts[i]) / g;
      return w;
    };
    gs.consider(to_w(c));
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          if (i == j || c[i] == 0) continue;
          auto trial = c;
          trial[i] -= 1;
          trial[j] += 1;
          double loss = gs.eval(to_w(trial));
          if (loss < gs.best_loss - 1e-12) {
            c = trial;
            gs.consider(to_w(c));
            improved = true;
          }
        }
      }
    }
    // make sure pure corners were considered
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> corner(m, 0.0);
      corner[i] = 1.0;
      gs.consider(corner);
    }
  }

  return WeightSearchResult{EnsembleWeights{gs.best_w}, gs.best_loss};
}

void write_predictions_csv(std::ostream& out,
                           std::span<const std::string> ids,
                           std::span<const ProbTriple> triples) {
  if (ids.size() != triples.size())
    throw MisalignmentError("id/prediction count mismatch");
  out << "id,p_a,p_b,p_tie\n";
  char buf[96];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g\n", triples[i][0],
                  triples[i][1], triples[i][2]);
    out << csv_escape(ids[i]) << buf;
  }
}

MemberPredictions read_predictions_csv(std::istream& in,
                                       const std::string& member_id) {
  MemberPredictions m;
  m.member_id = member_id;
  std::vector<std::string> fields;
  std::size_t line_no = 1;
  if (!read_csv_row(in, fields, line_no) || fields.size() != 4 ||
      fields[0] != "id" || fields[1] != "p_a" || fields[2] != "p_b" ||
      fields[3] != "p_tie")
    throw SchemaError("prediction file " + member_id +
                      ": expected header id,p_a,p_b,p_tie");
  std::size_t row = 1;
  while (read_csv_row(in, fields, line_no)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    ++row;
    if (fields.size() != 4)
      throw SchemaError("prediction file " + member_id + ": row " +
                        std::to_string(row) + " has " +
                        std::to_string(fields.size()) + " fields");
    ProbTriple t;
    try {
      for (int j = 0; j < 3; ++j) t[j] = std::stod(fields[j + 1]);
    } catch (const std::exception&) {
      throw SchemaError("prediction file " + member_id + ": row " +
                        std::to_string(row) + " has a non-numeric field");
    }
    if (!check_simplex(t))
      throw SchemaError("prediction file " + member_id + ": row " +
                        std::to_string(row) +
                        " is not on the probability simplex");
    m.ids.push_back(fields[0]);
    m.triples.push_back(t);
  }
  return m;
}

}  // namespace preftune
