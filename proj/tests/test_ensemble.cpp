#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "preftune/ensemble.hpp"
#include "preftune/error.hpp"
#include "preftune/metrics.hpp"
#include "preftune/rng.hpp"

using namespace preftune;

namespace {

MemberPredictions member(const std::string& id,
                         std::vector<ProbTriple> triples) {
  MemberPredictions m;
  m.member_id = id;
  for (std::size_t i = 0; i < triples.size(); ++i)
    m.ids.push_back("r" + std::to_string(i));
  m.triples = std::move(triples);
  return m;
}

LabelVec onehot(int j) {
  LabelVec v{0.0, 0.0, 0.0};
  v[j] = 1.0;
  return v;
}

ProbTriple random_simplex(RandomSource& rng) {
  double a = rng.uniform(), b = rng.uniform(), c = rng.uniform() + 1e-3;
  double s = a + b + c;
  return {a / s, b / s, c / s};
}

}  // namespace

TEST_CASE("validate_weights") {
  CHECK_NOTHROW(validate_weights({{0.7, 0.3}}));
  CHECK_THROWS_AS(validate_weights({{0.5, 0.6}}), InvalidWeightsError);
  CHECK_THROWS_AS(validate_weights({{-0.1, 1.1}}), InvalidWeightsError);
  CHECK_THROWS_AS(validate_weights({{}}), InvalidWeightsError);
}

TEST_CASE("weighted average matches hand arithmetic") {
  auto m1 = member("m1", {{0.6, 0.3, 0.1}});
  auto m2 = member("m2", {{0.2, 0.5, 0.3}});
  std::vector<MemberPredictions> ms = {m1, m2};
  auto out = ensemble_predict(ms, {{0.7, 0.3}});
  CHECK(out[0][0] == doctest::Approx(0.48).epsilon(1e-14));
  CHECK(out[0][1] == doctest::Approx(0.36).epsilon(1e-14));
  CHECK(out[0][2] == doctest::Approx(0.16).epsilon(1e-14));
}

TEST_CASE("single member identity and convexity fixed point") {
  auto m1 = member("m1", {{0.5, 0.25, 0.25}, {0.1, 0.2, 0.7}});
  std::vector<MemberPredictions> one = {m1};
  auto out = ensemble_predict(one, {{1.0}});
  CHECK(out == m1.triples);

  std::vector<MemberPredictions> same = {m1, m1};
  auto out2 = ensemble_predict(same, {{0.4, 0.6}});
  for (std::size_t i = 0; i < out2.size(); ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(out2[i][j] == doctest::Approx(m1.triples[i][j]).epsilon(1e-14));
}

TEST_CASE("simplex closure on 1000 random pairs") {
  RandomSource rng(99);
  std::vector<ProbTriple> t1, t2;
  for (int i = 0; i < 1000; ++i) {
    t1.push_back(random_simplex(rng));
    t2.push_back(random_simplex(rng));
  }
  std::vector<MemberPredictions> ms = {member("a", t1), member("b", t2)};
  auto out = ensemble_predict(ms, {{0.7, 0.3}});
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(check_simplex(out[i]));
    for (int j = 0; j < 3; ++j) {
      double expect = 0.7 * t1[i][j] + 0.3 * t2[i][j];
      CHECK(std::fabs(out[i][j] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("permutation consistency") {
  RandomSource rng(3);
  std::vector<ProbTriple> t1, t2;
  for (int i = 0; i < 20; ++i) {
    t1.push_back(random_simplex(rng));
    t2.push_back(random_simplex(rng));
  }
  std::vector<MemberPredictions> ms = {member("a", t1), member("b", t2)};
  std::vector<MemberPredictions> sw = {member("b", t2), member("a", t1)};
  auto o1 = ensemble_predict(ms, {{0.7, 0.3}});
  auto o2 = ensemble_predict(sw, {{0.3, 0.7}});
  CHECK(o1 == o2);
}

TEST_CASE("misalignment and weight-count errors") {
  auto m1 = member("m1", {{0.5, 0.25, 0.25}});
  auto m2 = member("m2", {{0.5, 0.25, 0.25}});
  m2.ids[0] = "other";
  std::vector<MemberPredictions> ms = {m1, m2};
  CHECK_THROWS_AS((void)ensemble_predict(ms, {{0.5, 0.5}}),
                  MisalignmentError);

  std::vector<MemberPredictions> ok = {m1};
  CHECK_THROWS_AS((void)ensemble_predict(ok, {{0.5, 0.5}}),
                  InvalidWeightsError);
}

TEST_CASE("search: perfect member dominates uniform member") {
  std::vector<LabelVec> labels;
  std::vector<ProbTriple> perfect, uniform;
  for (int i = 0; i < 30; ++i) {
    labels.push_back(onehot(i % 3));
    perfect.push_back({labels.back()[0], labels.back()[1], labels.back()[2]});
    uniform.push_back({1.0 / 3, 1.0 / 3, 1.0 / 3});
  }
  std::vector<MemberPredictions> ms = {member("p", perfect),
                                       member("u", uniform)};
  auto res = search_weights(ms, labels, 0.05);
  CHECK(res.weights.w == std::vector<double>{1.0, 0.0});
  CHECK(res.val_log_loss == doctest::Approx(0.0));
}

TEST_CASE("search: identical members tie-break to uniform weights") {
  std::vector<LabelVec> labels;
  std::vector<ProbTriple> t;
  RandomSource rng(5);
  for (int i = 0; i < 30; ++i) {
    labels.push_back(onehot(i % 3));
    t.push_back(random_simplex(rng));
  }
  std::vector<MemberPredictions> ms = {member("a", t), member("b", t)};
  auto res = search_weights(ms, labels, 0.05);
  CHECK(res.weights.w == std::vector<double>{0.5, 0.5});
}

TEST_CASE("search result never worse than any member") {
  RandomSource rng(11);
  std::vector<LabelVec> labels;
  std::vector<ProbTriple> t1, t2;
  for (int i = 0; i < 50; ++i) {
    labels.push_back(onehot(static_cast<int>(rng.uniform_below(3))));
    t1.push_back(random_simplex(rng));
    t2.push_back(random_simplex(rng));
  }
  std::vector<MemberPredictions> ms = {member("a", t1), member("b", t2)};
  auto res = search_weights(ms, labels, 0.05);
  double l1 = log_loss(t1, labels);
  double l2 = log_loss(t2, labels);
  CHECK(res.val_log_loss <= std::min(l1, l2) + 1e-12);
}

TEST_CASE("search with three members includes corners") {
  std::vector<LabelVec> labels;
  std::vector<ProbTriple> good, bad1, bad2;
  for (int i = 0; i < 20; ++i) {
    labels.push_back(onehot(i % 3));
    good.push_back({labels.back()[0] * 0.94 + 0.02,
                    labels.back()[1] * 0.94 + 0.02,
                    labels.back()[2] * 0.94 + 0.02});
    // systematically wrong: probability mass rotated off the true class
    bad1.push_back({labels.back()[1] * 0.9 + 0.05,
                    labels.back()[2] * 0.9 + 0.025,
                    labels.back()[0] * 0.9 + 0.025});
    bad2.push_back({1.0 / 3, 1.0 / 3, 1.0 / 3});
  }
  std::vector<MemberPredictions> ms = {member("g", good), member("b1", bad1),
                                       member("b2", bad2)};
  auto res = search_weights(ms, labels, 0.25);
  double lg = log_loss(good, labels);
  CHECK(res.val_log_loss <= lg + 1e-12);
}

TEST_CASE("monotone blend preserves shared argmax") {
  auto m1 = member("m1", {{0.6, 0.3, 0.1}});
  auto m2 = member("m2", {{0.5, 0.2, 0.3}});
  std::vector<MemberPredictions> ms = {m1, m2};
  for (double w = 0.0; w <= 1.0; w += 0.1) {
    auto out = ensemble_predict(ms, {{w, 1.0 - w}});
    CHECK(argmax3(out[0]) == 0);
  }
}

TEST_CASE("prediction CSV round trip") {
  std::vector<std::string> ids = {"x1", "x,2", "x\"3\""};
  std::vector<ProbTriple> triples = {
      {0.123456789012345, 0.5, 0.376543210987655},
      {1.0 / 3, 1.0 / 3, 1.0 / 3},
      {0.0, 0.0, 1.0}};
  std::ostringstream out;
  write_predictions_csv(out, ids, triples);

  std::istringstream in(out.str());
  auto m = read_predictions_csv(in, "rt");
  CHECK(m.ids == ids);
  REQUIRE(m.triples.size() == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(m.triples[i][j] == triples[i][j]);
}

TEST_CASE("prediction CSV rejects bad input") {
  std::istringstream bad_header("id,a,b,c\nr1,0.5,0.3,0.2\n");
  CHECK_THROWS_AS((void)read_predictions_csv(bad_header, "m"), SchemaError);

  std::istringstream bad_simplex("id,p_a,p_b,p_tie\nr1,0.5,0.5,0.5\n");
  CHECK_THROWS_AS((void)read_predictions_csv(bad_simplex, "m"), SchemaError);

  std::istringstream bad_number("id,p_a,p_b,p_tie\nr1,0.5,zap,0.2\n");
  CHECK_THROWS_AS((void)read_predictions_csv(bad_number, "m"), SchemaError);
}
