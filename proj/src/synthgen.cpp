#include "preftune/synthgen.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>

#include "json.hpp"
#include "preftune/error.hpp"
#include "preftune/ingest.hpp"
#include "preftune/rng.hpp"

namespace preftune {

void SynthRule::validate() const {
  if (!(noise >= 0.0 && noise < 0.5))
    throw SchemaError("noise must be in [0, 0.5)");
  if (!(tie_band >= 0.0)) throw SchemaError("tie_band must be >= 0");
  if (!(list_format_fraction >= 0.0 && list_format_fraction <= 1.0) ||
      !(null_fraction >= 0.0 && null_fraction <= 1.0))
    throw SchemaError("fractions must be in [0, 1]");
}

namespace {

constexpr const char* kModelNames[] = {"alpha-7b", "beta-13b", "gamma-9b",
                                       "delta-8b", "epsilon-34b"};
constexpr const char* kKeyword = "certainly";

// Random text of exactly `len` bytes with no leading/trailing whitespace.
// A nonzero `style` skews the letter distribution so the two response slots
// have distinguishable voices, like real model pairs do.
std::string random_text(RandomSource& rng, std::size_t len, int style) {
  std::string s;
  s.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    bool edge = i == 0 || i + 1 == len;
    if (!edge && !s.empty() && s.back() != ' ' && rng.uniform() < 0.18) {
      s.push_back(' ');
      continue;
    }
    double u = rng.uniform();
    int letter;
    if (style == 0) {
      letter = static_cast<int>(26.0 * u);
    } else if (style < 0) {
      letter = static_cast<int>(13.0 * u);  // a..m
      if (rng.uniform() < 0.25) letter = static_cast<int>(26.0 * rng.uniform());
    } else {
      letter = 13 + static_cast<int>(13.0 * u);  // n..z
      if (rng.uniform() < 0.25) letter = static_cast<int>(26.0 * rng.uniform());
    }
    s.push_back(static_cast<char>('a' + std::min(letter, 25)));
  }
  return s;
}

Label flip_label(Label l, RandomSource& rng) {
  Label others[2];
  int k = 0;
  for (Label cand : {Label::A, Label::B, Label::Tie})
    if (cand != l) others[k++] = cand;
  return others[rng.uniform_below(2)];
}

}  // namespace

std::vector<RawRecord> generate(std::size_t n, const SynthRule& rule) {
  if (n < 1) throw SchemaError("generate: n must be >= 1");
  rule.validate();

  std::vector<RawRecord> out;
  out.reserve(n);
  std::uint64_t base = rule.seed;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t s = base + 0x9e3779b97f4a7c15ULL * (i + 1);
    RandomSource rng(splitmix64(s));

    RawRecord r;
    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%06zu", i);
    r.id = idbuf;
    r.model_a = kModelNames[rng.uniform_below(5)];
    r.model_b = kModelNames[rng.uniform_below(5)];

    std::size_t lp = 8 + rng.uniform_below(17);   // 8..24
    std::size_t la = 4 + rng.uniform_below(41);   // 4..44
    std::size_t lb = 4 + rng.uniform_below(41);
    std::string prompt = random_text(rng, lp, 0);
    std::string resp_a = random_text(rng, la, -1);
    std::string resp_b = random_text(rng, lb, +1);

    SynthRuleKind kind = rule.rule;
    if (kind == SynthRuleKind::mixed)
      kind = (i % 2 == 0) ? SynthRuleKind::longer_wins
                          : SynthRuleKind::keyword_wins;

    Label label;
    if (kind == SynthRuleKind::longer_wins) {
      double a = static_cast<double>(resp_a.size());
      double b = static_cast<double>(resp_b.size());
      if (a > b * (1.0 + rule.tie_band))
        label = Label::A;
      else if (b > a * (1.0 + rule.tie_band))
        label = Label::B;
      else
        label = Label::Tie;
    } else {
      if (rng.uniform() < 0.1) {
        resp_a = std::string(kKeyword) + " " + resp_a;
        resp_b = std::string(kKeyword) + " " + resp_b;
        label = Label::Tie;
      } else if (rng.uniform() < 0.5) {
        resp_a = std::string(kKeyword) + " " + resp_a;
        label = Label::A;
      } else {
        resp_b = std::string(kKeyword) + " " + resp_b;
        label = Label::B;
      }
    }

    if (rule.noise > 0.0 && rng.uniform() < rule.noise)
      label = flip_label(label, rng);

    r.prompt = prompt;
    r.response_a = resp_a;
    r.response_b = resp_b;

    // dirty-path coverage: list-format wrapping preserves the cleaned text
    if (rng.uniform() < rule.list_format_fraction) {
      switch (rng.uniform_below(3)) {
        case 0: r.prompt = nlohmann::json::array({prompt}).dump(); break;
        case 1: r.response_a = nlohmann::json::array({resp_a}).dump(); break;
        default: r.response_b = nlohmann::json::array({resp_b}).dump(); break;
      }
    }
    if (rng.uniform() < rule.null_fraction) {
      if (rng.uniform() < 0.5)
        r.response_a = std::nullopt;
      else
        r.response_b = std::nullopt;
    }

    r.winner_model_a = label == Label::A ? 1 : 0;
    r.winner_model_b = label == Label::B ? 1 : 0;
    r.winner_tie = label == Label::Tie ? 1 : 0;
    out.push_back(std::move(r));
  }
  return out;
}

void write_raw_csv(std::ostream& out, const std::vector<RawRecord>& records) {
  for (std::size_t i = 0; i < kRawColumns.size(); ++i)
    out << (i ? "," : "") << kRawColumns[i];
  out << "\n";
  for (const auto& r : records) {
    out << csv_escape(r.id) << "," << csv_escape(r.model_a) << ","
        << csv_escape(r.model_b) << ","
        << csv_escape(r.prompt.value_or("")) << ","
        << csv_escape(r.response_a.value_or("")) << ","
        << csv_escape(r.response_b.value_or("")) << "," << r.winner_model_a
        << "," << r.winner_model_b << "," << r.winner_tie << "\n";
  }
}

void write_raw_jsonl(std::ostream& out,
                     const std::vector<RawRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["model_a"] = r.model_a;
    j["model_b"] = r.model_b;
    j["prompt"] = r.prompt ? nlohmann::json(*r.prompt) : nullptr;
    j["response_a"] = r.response_a ? nlohmann::json(*r.response_a) : nullptr;
    j["response_b"] = r.response_b ? nlohmann::json(*r.response_b) : nullptr;
    j["winner_model_a"] = r.winner_model_a;
    j["winner_model_b"] = r.winner_model_b;
    j["winner_tie"] = r.winner_tie;
    out << j.dump() << "\n";
  }
}

}  // namespace preftune
