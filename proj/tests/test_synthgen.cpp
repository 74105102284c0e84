#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "preftune/error.hpp"
#include "preftune/ingest.hpp"
#include "preftune/synthgen.hpp"

using namespace preftune;

namespace {
SynthRule clean_rule(std::uint64_t seed) {
  SynthRule r;
  r.rule = SynthRuleKind::longer_wins;
  r.noise = 0.0;
  r.tie_band = 0.1;
  r.seed = seed;
  r.list_format_fraction = 0.0;
  r.null_fraction = 0.0;
  return r;
}
}  // namespace

TEST_CASE("rule validation") {
  SynthRule bad = clean_rule(1);
  bad.noise = 0.7;
  CHECK_THROWS_AS(bad.validate(), SchemaError);
  bad = clean_rule(1);
  bad.tie_band = -0.1;
  CHECK_THROWS_AS(bad.validate(), SchemaError);
  CHECK_THROWS_AS((void)generate(0, clean_rule(1)), SchemaError);
}

TEST_CASE("longer_wins labels follow response lengths") {
  auto records = generate(500, clean_rule(42));
  for (const auto& r : records) {
    REQUIRE(r.response_a.has_value());
    REQUIRE(r.response_b.has_value());
    double la = static_cast<double>(r.response_a->size());
    double lb = static_cast<double>(r.response_b->size());
    int flags = r.winner_model_a + r.winner_model_b + r.winner_tie;
    CHECK(flags == 1);
    if (la > lb * 1.1)
      CHECK(r.winner_model_a == 1);
    else if (lb > la * 1.1)
      CHECK(r.winner_model_b == 1);
    else
      CHECK(r.winner_tie == 1);
  }
}

TEST_CASE("keyword rule marks the preferred response") {
  SynthRule rule = clean_rule(7);
  rule.rule = SynthRuleKind::keyword_wins;
  auto records = generate(300, rule);
  for (const auto& r : records) {
    bool a_kw = r.response_a->rfind("certainly", 0) == 0;
    bool b_kw = r.response_b->rfind("certainly", 0) == 0;
    if (a_kw && b_kw)
      CHECK(r.winner_tie == 1);
    else if (a_kw)
      CHECK(r.winner_model_a == 1);
    else {
      CHECK(b_kw);
      CHECK(r.winner_model_b == 1);
    }
  }
}

TEST_CASE("same seed twice gives identical corpora") {
  SynthRule rule = clean_rule(99);
  rule.noise = 0.1;
  rule.list_format_fraction = 0.1;
  rule.null_fraction = 0.05;
  auto a = generate(200, rule);
  auto b = generate(200, rule);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].prompt == b[i].prompt);
    CHECK(a[i].response_a == b[i].response_a);
    CHECK(a[i].response_b == b[i].response_b);
    CHECK(a[i].winner_model_a == b[i].winner_model_a);
    CHECK(a[i].winner_tie == b[i].winner_tie);
  }
  auto c = generate(200, clean_rule(100));
  bool any_diff = false;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i].prompt != a[i].prompt) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("label marginals are roughly symmetric at n=5000") {
  auto records = generate(5000, clean_rule(42));
  double pa = 0, pb = 0;
  for (const auto& r : records) {
    pa += r.winner_model_a;
    pb += r.winner_model_b;
  }
  pa /= 5000.0;
  pb /= 5000.0;
  CHECK(std::fabs(pa - pb) < 0.05);
}

TEST_CASE("dirty fractions produce cleanable and droppable records") {
  SynthRule rule = clean_rule(5);
  rule.list_format_fraction = 0.2;
  rule.null_fraction = 0.1;
  auto records = generate(1000, rule);

  std::size_t nulls = 0, lists = 0;
  for (const auto& r : records) {
    if (!r.response_a || !r.response_b) ++nulls;
    for (const auto& f : {r.prompt, r.response_a, r.response_b})
      if (f && f->size() >= 2 && f->front() == '[' && f->back() == ']')
        ++lists;
  }
  CHECK(nulls > 50);
  CHECK(lists > 100);

  // list-format wrapping is content-preserving through cleaning
  CleanReport report;
  auto cleaned = clean_dataset(records, &report);
  CHECK(report.dropped_null == nulls);
  CHECK(report.invalid_label == 0);
  CHECK(report.cleaned + report.dropped_null == 1000);
  for (const auto& r : cleaned) {
    CHECK_FALSE(r.prompt.empty());
    CHECK(r.prompt.find('[') == std::string::npos);
  }
}

TEST_CASE("generated csv and jsonl both parse back identically") {
  SynthRule rule = clean_rule(77);
  rule.list_format_fraction = 0.15;
  rule.null_fraction = 0.05;
  auto records = generate(150, rule);

  std::ostringstream csv, jsonl;
  write_raw_csv(csv, records);
  write_raw_jsonl(jsonl, records);

  std::istringstream csv_in(csv.str());
  auto from_csv = parse_dataset(csv_in, SourceFormat::csv);
  std::istringstream jsonl_in(jsonl.str());
  auto from_jsonl = parse_dataset(jsonl_in, SourceFormat::jsonl);

  REQUIRE(from_csv.size() == 150);
  REQUIRE(from_jsonl.size() == 150);
  for (std::size_t i = 0; i < 150; ++i) {
    CHECK(from_csv[i].id == records[i].id);
    CHECK(from_csv[i].prompt == records[i].prompt);
    CHECK(from_csv[i].response_a == records[i].response_a);
    CHECK(from_csv[i].response_b == records[i].response_b);
    CHECK(from_jsonl[i].prompt == records[i].prompt);
    CHECK(from_jsonl[i].response_a == records[i].response_a);
    CHECK(from_jsonl[i].winner_model_b == records[i].winner_model_b);
  }
}

TEST_CASE("mixed rule alternates deterministically") {
  SynthRule rule = clean_rule(31);
  rule.rule = SynthRuleKind::mixed;
  auto records = generate(100, rule);
  // odd indices use the keyword rule
  for (std::size_t i = 1; i < records.size(); i += 2) {
    bool a_kw = records[i].response_a &&
                records[i].response_a->rfind("certainly", 0) == 0;
    bool b_kw = records[i].response_b &&
                records[i].response_b->rfind("certainly", 0) == 0;
    CHECK((a_kw || b_kw));
  }
}
