#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "preftune/types.hpp"

namespace preftune {

enum class SynthRuleKind { longer_wins, keyword_wins, mixed };

struct SynthRule {
  SynthRuleKind rule = SynthRuleKind::longer_wins;
  double tie_band = 0.1;   // relative-length window declared a tie
  double noise = 0.0;      // probability of a label flip
  std::uint64_t seed = 0;
  // dirty-path coverage: fraction of records emitted as list-format strings
  // or with a null response
  double list_format_fraction = 0.10;
  double null_fraction = 0.02;

  void validate() const;
};

// Deterministic synthetic preference corpus in the raw ingest schema.
std::vector<RawRecord> generate(std::size_t n, const SynthRule& rule);

// Emits the exact CSV/JSONL schema the ingest module parses.
void write_raw_csv(std::ostream& out, const std::vector<RawRecord>& records);
void write_raw_jsonl(std::ostream& out, const std::vector<RawRecord>& records);

}  // namespace preftune
