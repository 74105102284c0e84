#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "preftune/types.hpp"

namespace preftune {

enum class SourceFormat { csv, jsonl };

// Columns, in canonical order, expected in CSV headers and JSONL keys.
extern const std::array<const char*, 9> kRawColumns;

// Parses a whole dataset. Throws SchemaError on missing columns or a
// malformed row (the message carries the row number).
std::vector<RawRecord> parse_dataset(std::istream& source, SourceFormat fmt);

// RFC-4180-style CSV row reader shared by the dataset and prediction-file
// parsers. Returns false at end of stream.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields,
                  std::size_t& line_no);
std::string csv_escape(const std::string& s);

// If `s` is a JSON array of strings, joins the elements with '\n'; anything
// else passes through. The result is trimmed of surrounding whitespace.
std::string unwrap_list_string(const std::string& s);

enum class DropReason { kept, null_response, invalid_label };

struct CleanResult {
  DropReason reason = DropReason::kept;
  std::optional<PreferenceRecord> record;
};

CleanResult clean_record(const RawRecord& raw);

struct CleanReport {
  std::size_t parsed = 0;
  std::size_t cleaned = 0;
  std::size_t dropped_null = 0;
  std::size_t invalid_label = 0;

  std::string to_json() const;
};

// Cleans a parsed dataset. Rejects the whole input with DuplicateIdError if
// ids are not unique.
std::vector<PreferenceRecord> clean_dataset(std::span<const RawRecord> raws,
                                            CleanReport* report = nullptr);

LabelVec encode_label(Label label);

struct DatasetSplit {
  std::vector<PreferenceRecord> train;
  std::vector<PreferenceRecord> validation;
  std::vector<PreferenceRecord> test;
  std::uint64_t seed = 0;
};

// Deterministic shuffle keyed by `seed`, then contiguous slicing into
// train/validation/test. Ratios must be nonnegative and sum to 1 (tol 1e-9).
DatasetSplit split_dataset(std::span<const PreferenceRecord> records,
                           std::array<double, 3> ratios, std::uint64_t seed);

// Cleaned-record interchange: JSONL with keys id,prompt,response_a,
// response_b,label.
void write_cleaned_jsonl(std::ostream& out,
                         std::span<const PreferenceRecord> records);
std::vector<PreferenceRecord> read_cleaned_jsonl(std::istream& in);

}  // namespace preftune
