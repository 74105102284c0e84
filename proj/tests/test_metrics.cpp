#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "preftune/error.hpp"
#include "preftune/metrics.hpp"

using namespace preftune;

namespace {
const double kLn3 = 1.0986122886681098;
LabelVec onehot(int j) {
  LabelVec v{0.0, 0.0, 0.0};
  v[j] = 1.0;
  return v;
}
}  // namespace

TEST_CASE("check_simplex") {
  CHECK(check_simplex({1.0 / 3, 1.0 / 3, 1.0 / 3}));
  CHECK(check_simplex({1.0, 0.0, 0.0}));
  CHECK_FALSE(check_simplex({0.5, 0.5, 0.1}));
  CHECK_FALSE(check_simplex({-0.1, 0.6, 0.5}));
  CHECK(check_simplex({0.5, 0.5, 1e-10 - 1e-10}));
}

TEST_CASE("argmax3 lowest-index ties") {
  CHECK(argmax3({0.2, 0.5, 0.3}) == 1);
  CHECK(argmax3({1.0 / 3, 1.0 / 3, 1.0 / 3}) == 0);
  CHECK(argmax3({0.2, 0.4, 0.4}) == 1);
  CHECK(argmax3({0.0, 0.0, 1.0}) == 2);
}

TEST_CASE("log loss identities") {
  std::vector<ProbTriple> uniform(10, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  std::vector<LabelVec> labels;
  for (int i = 0; i < 10; ++i) labels.push_back(onehot(i % 3));
  CHECK(log_loss(uniform, labels) == doctest::Approx(kLn3).epsilon(1e-12));

  std::vector<ProbTriple> perfect;
  for (const auto& y : labels) perfect.push_back({y[0], y[1], y[2]});
  CHECK(log_loss(perfect, labels) == 0.0);
}

TEST_CASE("log loss hand-computed two-example case") {
  // -(ln 0.5 + ln 0.8) / 2
  std::vector<ProbTriple> preds = {{0.5, 0.3, 0.2}, {0.1, 0.8, 0.1}};
  std::vector<LabelVec> labels = {onehot(0), onehot(1)};
  CHECK(log_loss(preds, labels) ==
        doctest::Approx(0.4581453659370775).epsilon(1e-12));
}

TEST_CASE("log loss clip keeps hard zeros finite") {
  std::vector<ProbTriple> preds = {{0.0, 1.0, 0.0}};
  std::vector<LabelVec> labels = {onehot(0)};
  double ll = log_loss(preds, labels);
  CHECK(std::isfinite(ll));
  CHECK(ll == doctest::Approx(-std::log(1e-15)).epsilon(1e-12));
}

TEST_CASE("log loss error paths") {
  std::vector<ProbTriple> preds = {{0.5, 0.5, 0.1}};
  std::vector<LabelVec> labels = {onehot(0)};
  CHECK_THROWS_AS((void)log_loss(preds, labels), SchemaError);

  std::vector<ProbTriple> ok = {{0.5, 0.3, 0.2}};
  std::vector<LabelVec> two = {onehot(0), onehot(1)};
  CHECK_THROWS_AS((void)log_loss(ok, two), MisalignmentError);
}

TEST_CASE("accuracy") {
  std::vector<ProbTriple> preds = {
      {0.9, 0.05, 0.05},          // A, correct
      {0.1, 0.8, 0.1},            // B, correct
      {0.5, 0.3, 0.2},            // A, wrong (label Tie)
      {1.0 / 3, 1.0 / 3, 1.0 / 3} // tie-rule picks A, wrong (label Tie)
  };
  std::vector<LabelVec> labels = {onehot(0), onehot(1), onehot(2), onehot(2)};
  CHECK(accuracy(preds, labels) == doctest::Approx(0.5));
  CHECK_THROWS_AS(
      (void)accuracy(preds, std::vector<LabelVec>{onehot(0)}),
      MisalignmentError);
}

TEST_CASE("accuracy is scale-invariant at argmax level, log loss is not") {
  std::vector<ProbTriple> preds = {{0.6, 0.3, 0.1}};
  std::vector<ProbTriple> scaled = {{0.6, 0.3, 0.1}};
  // a simplex-respecting sharpening that keeps the argmax
  std::vector<ProbTriple> sharper = {{0.8, 0.15, 0.05}};
  std::vector<LabelVec> labels = {onehot(0)};
  CHECK(accuracy(preds, labels) == accuracy(sharper, labels));
  CHECK(log_loss(preds, labels) != log_loss(sharper, labels));
  CHECK(accuracy(preds, labels) == accuracy(scaled, labels));
}

TEST_CASE("permutation invariance and concatenation") {
  std::vector<ProbTriple> preds = {
      {0.5, 0.3, 0.2}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6}, {0.7, 0.2, 0.1}};
  std::vector<LabelVec> labels = {onehot(0), onehot(1), onehot(2), onehot(1)};

  std::vector<ProbTriple> perm = {preds[2], preds[0], preds[3], preds[1]};
  std::vector<LabelVec> perm_l = {labels[2], labels[0], labels[3], labels[1]};
  CHECK(log_loss(preds, labels) ==
        doctest::Approx(log_loss(perm, perm_l)).epsilon(1e-14));
  CHECK(accuracy(preds, labels) == accuracy(perm, perm_l));

  std::vector<ProbTriple> a(preds.begin(), preds.begin() + 2);
  std::vector<ProbTriple> b(preds.begin() + 2, preds.end());
  std::vector<LabelVec> la(labels.begin(), labels.begin() + 2);
  std::vector<LabelVec> lb(labels.begin() + 2, labels.end());
  double combined =
      (2 * log_loss(a, la) + 2 * log_loss(b, lb)) / 4.0;
  CHECK(log_loss(preds, labels) == doctest::Approx(combined).epsilon(1e-12));
}

TEST_CASE("pairwise_sum matches plain sum") {
  std::vector<double> v;
  double plain = 0.0;
  for (int i = 0; i < 1000; ++i) {
    v.push_back(0.1 * (i % 17) - 0.3);
    plain += v.back();
  }
  CHECK(pairwise_sum(v) == doctest::Approx(plain).epsilon(1e-12));
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
  CHECK(pairwise_sum(std::vector<double>{2.5}) == 2.5);
}

TEST_CASE("compute_metrics report and JSON") {
  std::vector<ProbTriple> preds = {{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}};
  std::vector<LabelVec> labels = {onehot(0), onehot(1)};
  auto r = compute_metrics(preds, labels);
  CHECK(r.n == 2);
  CHECK(r.accuracy == 1.0);
  CHECK(r.log_loss == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
  auto j = r.to_json();
  CHECK(j.find("\"log_loss\"") != std::string::npos);
  CHECK(j.find("\"accuracy\"") != std::string::npos);
  CHECK(j.find("\"n\"") != std::string::npos);
}
