#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "preftune/error.hpp"
#include "preftune/ingest.hpp"

using namespace preftune;

namespace {

const char* kHeader =
    "id,model_a,model_b,prompt,response_a,response_b,"
    "winner_model_a,winner_model_b,winner_tie\n";

RawRecord raw(const std::string& id, const char* prompt, const char* ra,
              const char* rb, int wa, int wb, int wt) {
  RawRecord r;
  r.id = id;
  r.model_a = "m1";
  r.model_b = "m2";
  if (prompt) r.prompt = prompt;
  if (ra) r.response_a = ra;
  if (rb) r.response_b = rb;
  r.winner_model_a = wa;
  r.winner_model_b = wb;
  r.winner_tie = wt;
  return r;
}

}  // namespace

TEST_CASE("parse_dataset csv basics") {
  std::istringstream in(std::string(kHeader) +
                        "r1,gpt,claude,\"hi\",\"a\",\"b\",1,0,0\n"
                        "r2,gpt,claude,hello,x,,0,1,0\n");
  auto recs = parse_dataset(in, SourceFormat::csv);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].id == "r1");
  CHECK(recs[0].model_a == "gpt");
  CHECK(recs[0].prompt == "hi");
  CHECK(recs[0].winner_model_a == 1);
  CHECK_FALSE(recs[1].response_b.has_value());  // empty cell -> null
}

TEST_CASE("parse_dataset csv quoting") {
  std::istringstream in(std::string(kHeader) +
                        "r1,m1,m2,\"line1\nline2\",\"say \"\"hi\"\"\",b,0,0,1\n");
  auto recs = parse_dataset(in, SourceFormat::csv);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].prompt == "line1\nline2");
  CHECK(recs[0].response_a == "say \"hi\"");
}

TEST_CASE("parse_dataset missing column is a schema error") {
  std::istringstream in("id,model_a,model_b,prompt,response_a,response_b\n");
  try {
    (void)parse_dataset(in, SourceFormat::csv);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("winner_model_a") != std::string::npos);
  }
}

TEST_CASE("parse_dataset malformed row carries row number") {
  std::istringstream in(std::string(kHeader) + "r1,m1,m2,p,a,b,1,0\n");
  try {
    (void)parse_dataset(in, SourceFormat::csv);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("parse_dataset jsonl") {
  std::istringstream in(
      R"({"id":"j1","model_a":"m1","model_b":"m2","prompt":"p","response_a":"a","response_b":null,"winner_model_a":0,"winner_model_b":0,"winner_tie":1})"
      "\n");
  auto recs = parse_dataset(in, SourceFormat::jsonl);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].id == "j1");
  CHECK_FALSE(recs[0].response_b.has_value());
  CHECK(recs[0].winner_tie == 1);
}

TEST_CASE("unwrap_list_string") {
  CHECK(unwrap_list_string("[\"Hello\"]") == "Hello");
  CHECK(unwrap_list_string("[\"Line 1\",\"Line 2\"]") == "Line 1\nLine 2");
  CHECK(unwrap_list_string("plain text") == "plain text");
  CHECK(unwrap_list_string("[not json") == "[not json");
  CHECK(unwrap_list_string("[1,2]") == "[1,2]");  // not an array of strings
  CHECK(unwrap_list_string("  padded  ") == "padded");
}

TEST_CASE("clean_record paths") {
  auto ok = clean_record(raw("r1", "[\"Q?\"]", "[\"x\"]", "[\"y\"]", 0, 0, 1));
  CHECK(ok.reason == DropReason::kept);
  REQUIRE(ok.record.has_value());
  CHECK(ok.record->prompt == "Q?");
  CHECK(ok.record->label == Label::Tie);

  auto null_resp = clean_record(raw("r2", "p", nullptr, "b", 1, 0, 0));
  CHECK(null_resp.reason == DropReason::null_response);
  CHECK_FALSE(null_resp.record.has_value());

  auto empty_after = clean_record(raw("r3", "p", "   ", "b", 1, 0, 0));
  CHECK(empty_after.reason == DropReason::null_response);

  auto no_flags = clean_record(raw("r4", "p", "a", "b", 0, 0, 0));
  CHECK(no_flags.reason == DropReason::invalid_label);

  auto two_flags = clean_record(raw("r5", "p", "a", "b", 1, 1, 0));
  CHECK(two_flags.reason == DropReason::invalid_label);
}

TEST_CASE("clean_record idempotent on its own output") {
  auto once =
      clean_record(raw("r1", "[\"a\",\"b\"]", "[\"x\"]", "y", 1, 0, 0));
  REQUIRE(once.record.has_value());
  auto again = clean_record(raw("r1", once.record->prompt.c_str(),
                                once.record->response_a.c_str(),
                                once.record->response_b.c_str(), 1, 0, 0));
  REQUIRE(again.record.has_value());
  CHECK(again.record->prompt == once.record->prompt);
  CHECK(again.record->response_a == once.record->response_a);
  CHECK(again.record->response_b == once.record->response_b);
}

TEST_CASE("clean_dataset counts and duplicate rejection") {
  std::vector<RawRecord> raws = {
      raw("a", "p", "x", "y", 1, 0, 0),
      raw("b", "p", nullptr, "y", 0, 1, 0),
      raw("c", "p", "x", "y", 0, 0, 0),
      raw("d", "p", "x", "y", 0, 0, 1),
  };
  CleanReport report;
  auto cleaned = clean_dataset(raws, &report);
  CHECK(cleaned.size() == 2);
  CHECK(report.parsed == 4);
  CHECK(report.cleaned == 2);
  CHECK(report.dropped_null == 1);
  CHECK(report.invalid_label == 1);
  CHECK(report.parsed ==
        report.cleaned + report.dropped_null + report.invalid_label);

  raws.push_back(raw("a", "p", "x", "y", 1, 0, 0));
  try {
    (void)clean_dataset(raws, nullptr);
    FAIL("expected DuplicateIdError");
  } catch (const DuplicateIdError& e) {
    CHECK(std::string(e.what()).find("a") != std::string::npos);
  }
}

TEST_CASE("encode_label") {
  CHECK(encode_label(Label::A) == LabelVec{1.0, 0.0, 0.0});
  CHECK(encode_label(Label::B) == LabelVec{0.0, 1.0, 0.0});
  CHECK(encode_label(Label::Tie) == LabelVec{0.0, 0.0, 1.0});
}

TEST_CASE("split_dataset sizes, determinism, partition") {
  std::vector<PreferenceRecord> recs;
  for (int i = 0; i < 10; ++i)
    recs.push_back({"id" + std::to_string(i), "p", "a", "b", Label::A});

  auto s1 = split_dataset(recs, {0.8, 0.1, 0.1}, 7);
  CHECK(s1.train.size() == 8);
  CHECK(s1.validation.size() == 1);
  CHECK(s1.test.size() == 1);

  auto s2 = split_dataset(recs, {0.8, 0.1, 0.1}, 7);
  for (std::size_t i = 0; i < s1.train.size(); ++i)
    CHECK(s1.train[i].id == s2.train[i].id);

  std::set<std::string> seen;
  for (const auto& part : {s1.train, s1.validation, s1.test})
    for (const auto& r : part) CHECK(seen.insert(r.id).second);
  CHECK(seen.size() == recs.size());

  auto all_train = split_dataset(recs, {1.0, 0.0, 0.0}, 7);
  CHECK(all_train.train.size() == 10);

  CHECK_THROWS_AS(
      (void)split_dataset(std::vector<PreferenceRecord>{}, {0.8, 0.1, 0.1}, 7),
      SchemaError);
  CHECK_THROWS_AS((void)split_dataset(recs, {0.5, 0.2, 0.2}, 7), SchemaError);
}

TEST_CASE("cleaned jsonl round trip") {
  std::vector<PreferenceRecord> recs = {
      {"r1", "what\nnow?", "yes \"sir\"", "no", Label::B},
      {"r2", "p", "a", "b", Label::Tie},
  };
  std::ostringstream out;
  write_cleaned_jsonl(out, recs);
  std::istringstream in(out.str());
  auto back = read_cleaned_jsonl(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "r1");
  CHECK(back[0].prompt == "what\nnow?");
  CHECK(back[0].response_a == "yes \"sir\"");
  CHECK(back[0].label == Label::B);
  CHECK(back[1].label == Label::Tie);
}

TEST_CASE("csv row reader handles crlf") {
  std::istringstream in("a,b\r\nc,d\r\n");
  std::vector<std::string> fields;
  std::size_t line = 1;
  REQUIRE(read_csv_row(in, fields, line));
  CHECK(fields == std::vector<std::string>{"a", "b"});
  REQUIRE(read_csv_row(in, fields, line));
  CHECK(fields == std::vector<std::string>{"c", "d"});
}
