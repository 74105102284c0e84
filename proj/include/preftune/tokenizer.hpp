#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "preftune/types.hpp"

namespace preftune {

// Byte-level vocabulary: ids 0..255 are raw bytes, specials above.
namespace vocab {
constexpr int kPad = 256;
constexpr int kEos = 257;
constexpr int kSepPrompt = 258;
constexpr int kSepA = 259;
constexpr int kSepB = 260;
constexpr int kSize = 261;
}  // namespace vocab

constexpr std::size_t kMinMaxLen = 16;
constexpr std::uint32_t kTemplateVersion = 1;

struct TokenSequence {
  std::vector<int> ids;                  // exactly max_len entries
  std::vector<std::uint8_t> attention_mask;  // 1 for real positions
  std::size_t real_length = 0;
};

// UTF-8 bytes mapped one-to-one onto ids 0..255.
std::vector<int> encode_text(std::string_view s);

// [SEP_PROMPT] prompt [SEP_A] response_a [SEP_B] response_b [EOS], with per
// field byte budgets 2:3:3 over (max_len - 4), tail truncation, surplus from
// short fields cascading left-to-right, then right padding to max_len.
TokenSequence format_input(const PreferenceRecord& record,
                           std::size_t max_len);

using Batch = std::vector<TokenSequence>;

// Length-bucketed batching: stable sort by real_length, then chunk.
std::vector<Batch> make_batches(std::vector<TokenSequence> sequences,
                                std::size_t batch_size);

// Binary cache: little-endian u32 ids, record-framed with u32 lengths, keyed
// by (max_len, template version).
void write_token_cache(std::ostream& out,
                       const std::vector<TokenSequence>& sequences,
                       std::uint32_t max_len);
std::vector<TokenSequence> read_token_cache(std::istream& in,
                                            std::uint32_t expected_max_len);

}  // namespace preftune
