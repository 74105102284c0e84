#include "preftune/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "preftune/error.hpp"
#include "preftune/rng.hpp"

namespace preftune {

const std::array<const char*, 9> kRawColumns = {
    "id",        "model_a",    "model_b",
    "prompt",    "response_a", "response_b",
    "winner_model_a", "winner_model_b", "winner_tie"};

// Quoted fields may contain commas, newlines and "" escapes.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields,
                  std::size_t& line_no) {
  fields.clear();
  int c = in.peek();
  if (c == EOF) return false;

  std::string field;
  bool in_quotes = false;
  bool started = false;
  while (true) {
    c = in.get();
    if (c == EOF) {
      if (!started && fields.empty() && field.empty()) return false;
      fields.push_back(field);
      return true;
    }
    started = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_no;
        field.push_back(static_cast<char>(c));
      }
    } else {
      if (c == '"' && field.empty()) {
        in_quotes = true;
      } else if (c == ',') {
        fields.push_back(field);
        field.clear();
      } else if (c == '\r') {
        // swallow; handled with the following '\n'
      } else if (c == '\n') {
        ++line_no;
        fields.push_back(field);
        return true;
      } else {
        field.push_back(static_cast<char>(c));
      }
    }
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

namespace {

std::optional<std::string> to_null_if_empty(std::string s) {
  if (s.empty()) return std::nullopt;
  return s;
}

int parse_flag(const std::string& s, const char* col, std::size_t row) {
  std::string t = s;
  while (!t.empty() && (t.back() == ' ' || t.back() == '\r')) t.pop_back();
  if (t == "0") return 0;
  if (t == "1") return 1;
  throw SchemaError("row " + std::to_string(row) + ": column " + col +
                    " must be 0 or 1, got '" + s + "'");
}

std::vector<RawRecord> parse_csv(std::istream& in) {
  std::size_t line_no = 1;
  std::vector<std::string> fields;
  if (!read_csv_row(in, fields, line_no))
    throw SchemaError("empty CSV source, header expected");

  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < fields.size(); ++i) col[fields[i]] = i;
  for (const char* name : kRawColumns)
    if (!col.count(name))
      throw SchemaError(std::string("missing required column: ") + name);

  std::vector<RawRecord> out;
  std::size_t row = 1;
  while (read_csv_row(in, fields, line_no)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    ++row;
    if (fields.size() < col.size())
      throw SchemaError("row " + std::to_string(row) + ": expected " +
                        std::to_string(col.size()) + " fields, got " +
                        std::to_string(fields.size()));
    auto f = [&](const char* name) { return fields[col.at(name)]; };
    RawRecord r;
    r.id = f("id");
    r.model_a = f("model_a");
    r.model_b = f("model_b");
    r.prompt = to_null_if_empty(f("prompt"));
    r.response_a = to_null_if_empty(f("response_a"));
    r.response_b = to_null_if_empty(f("response_b"));
    r.winner_model_a = parse_flag(f("winner_model_a"), "winner_model_a", row);
    r.winner_model_b = parse_flag(f("winner_model_b"), "winner_model_b", row);
    r.winner_tie = parse_flag(f("winner_tie"), "winner_tie", row);
    out.push_back(std::move(r));
  }
  return out;
}

std::optional<std::string> json_text_field(const nlohmann::json& j,
                                           const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) return std::nullopt;
  std::string s = j[key].get<std::string>();
  if (s.empty()) return std::nullopt;
  return s;
}

std::vector<RawRecord> parse_jsonl(std::istream& in) {
  std::vector<RawRecord> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("row " + std::to_string(row) +
                        ": malformed JSON: " + e.what());
    }
    for (const char* name : kRawColumns)
      if (!j.contains(name))
        throw SchemaError("row " + std::to_string(row) +
                          ": missing required column: " + name);
    auto flag = [&](const char* key) {
      const auto& v = j[key];
      if (v.is_number_integer()) {
        int x = v.get<int>();
        if (x == 0 || x == 1) return x;
      }
      if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
      throw SchemaError("row " + std::to_string(row) + ": column " + key +
                        " must be 0 or 1");
    };
    RawRecord r;
    if (!j["id"].is_string())
      throw SchemaError("row " + std::to_string(row) + ": id must be string");
    r.id = j["id"].get<std::string>();
    r.model_a = j["model_a"].is_string() ? j["model_a"].get<std::string>() : "";
    r.model_b = j["model_b"].is_string() ? j["model_b"].get<std::string>() : "";
    r.prompt = json_text_field(j, "prompt");
    r.response_a = json_text_field(j, "response_a");
    r.response_b = json_text_field(j, "response_b");
    r.winner_model_a = flag("winner_model_a");
    r.winner_model_b = flag("winner_model_b");
    r.winner_tie = flag("winner_tie");
    out.push_back(std::move(r));
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<RawRecord> parse_dataset(std::istream& source, SourceFormat fmt) {
  return fmt == SourceFormat::csv ? parse_csv(source) : parse_jsonl(source);
}

std::string unwrap_list_string(const std::string& s) {
  // Treat as list-format only if it parses as a JSON array of strings;
  // anything else passes through verbatim (modulo trimming).
  std::string t = trim(s);
  if (!t.empty() && t.front() == '[') {
    nlohmann::json j = nlohmann::json::parse(t, nullptr, false);
    if (j.is_array()) {
      bool all_strings = true;
      for (const auto& el : j)
        if (!el.is_string()) {
          all_strings = false;
          break;
        }
      if (all_strings) {
        std::string joined;
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) joined.push_back('\n');
          joined += j[i].get<std::string>();
        }
        return trim(joined);
      }
    }
  }
  return t;
}

CleanResult clean_record(const RawRecord& raw) {
  int flags = raw.winner_model_a + raw.winner_model_b + raw.winner_tie;
  if (flags != 1 || raw.winner_model_a < 0 || raw.winner_model_b < 0 ||
      raw.winner_tie < 0)
    return CleanResult{DropReason::invalid_label, std::nullopt};

  auto unwrap = [](const std::optional<std::string>& f)
      -> std::optional<std::string> {
    if (!f) return std::nullopt;
    std::string u = unwrap_list_string(*f);
    if (u.empty()) return std::nullopt;  // empty-after-trim counts as null
    return u;
  };

  auto prompt = unwrap(raw.prompt);
  auto ra = unwrap(raw.response_a);
  auto rb = unwrap(raw.response_b);
  if (!prompt || !ra || !rb)
    return CleanResult{DropReason::null_response, std::nullopt};

  PreferenceRecord rec;
  rec.id = raw.id;
  rec.prompt = *prompt;
  rec.response_a = *ra;
  rec.response_b = *rb;
  rec.label = raw.winner_model_a ? Label::A
              : raw.winner_model_b ? Label::B
                                   : Label::Tie;
  return CleanResult{DropReason::kept, rec};
}

std::vector<PreferenceRecord> clean_dataset(std::span<const RawRecord> raws,
                                            CleanReport* report) {
  std::unordered_set<std::string> seen;
  std::vector<std::string> dups;
  for (const auto& r : raws) {
    if (r.id.empty()) throw SchemaError("record with empty id");
    if (!seen.insert(r.id).second) dups.push_back(r.id);
  }
  if (!dups.empty()) {
    std::string msg = "duplicate ids:";
    for (const auto& d : dups) msg += " " + d;
    throw DuplicateIdError(msg);
  }

  CleanReport rep;
  rep.parsed = raws.size();
  std::vector<PreferenceRecord> out;
  for (const auto& r : raws) {
    CleanResult c = clean_record(r);
    switch (c.reason) {
      case DropReason::kept:
        ++rep.cleaned;
        out.push_back(std::move(*c.record));
        break;
      case DropReason::null_response:
        ++rep.dropped_null;
        break;
      case DropReason::invalid_label:
        ++rep.invalid_label;
        break;
    }
  }
  if (report) *report = rep;
  return out;
}

std::string CleanReport::to_json() const {
  nlohmann::json j;
  j["parsed"] = parsed;
  j["cleaned"] = cleaned;
  j["null_response"] = dropped_null;
  j["invalid_label"] = invalid_label;
  return j.dump(2) + "\n";
}

LabelVec encode_label(Label label) {
  switch (label) {
    case Label::A: return {1.0, 0.0, 0.0};
    case Label::B: return {0.0, 1.0, 0.0};
    default: return {0.0, 0.0, 1.0};
  }
}

DatasetSplit split_dataset(std::span<const PreferenceRecord> records,
                           std::array<double, 3> ratios, std::uint64_t seed) {
  if (records.empty()) throw SchemaError("cannot split an empty dataset");
  double sum = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios)
    if (!(r >= 0.0)) throw SchemaError("split ratios must be nonnegative");
  if (std::fabs(sum - 1.0) > 1e-9)
    throw SchemaError("split ratios must sum to 1");

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RandomSource rng(seed);
  rng.shuffle(order);

  std::size_t n = records.size();
  std::size_t n_train = static_cast<std::size_t>(
      std::llround(ratios[0] * static_cast<double>(n)));
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(ratios[1] * static_cast<double>(n)));
  if (n_train > n) n_train = n;
  if (n_train + n_val > n) n_val = n - n_train;

  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = records[order[i]];
    if (i < n_train)
      split.train.push_back(rec);
    else if (i < n_train + n_val)
      split.validation.push_back(rec);
    else
      split.test.push_back(rec);
  }
  return split;
}

void write_cleaned_jsonl(std::ostream& out,
                         std::span<const PreferenceRecord> records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["prompt"] = r.prompt;
    j["response_a"] = r.response_a;
    j["response_b"] = r.response_b;
    j["label"] = label_name(r.label);
    out << j.dump() << "\n";
  }
}

std::vector<PreferenceRecord> read_cleaned_jsonl(std::istream& in) {
  std::vector<PreferenceRecord> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("row " + std::to_string(row) +
                        ": malformed JSON: " + e.what());
    }
    PreferenceRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.prompt = j.at("prompt").get<std::string>();
      r.response_a = j.at("response_a").get<std::string>();
      r.response_b = j.at("response_b").get<std::string>();
      auto label = label_from_name(j.at("label").get<std::string>());
      if (!label)
        throw SchemaError("row " + std::to_string(row) + ": bad label");
      r.label = *label;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("row " + std::to_string(row) +
                        ": missing field: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace preftune
