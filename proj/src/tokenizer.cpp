#include "preftune/tokenizer.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <ostream>

#include "preftune/error.hpp"

namespace preftune {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw SchemaError("token cache truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::vector<int> encode_text(std::string_view s) {
  std::vector<int> ids;
  ids.reserve(s.size());
  for (char c : s) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

TokenSequence format_input(const PreferenceRecord& record,
                           std::size_t max_len) {
  if (max_len < kMinMaxLen)
    throw SchemaError("max_len must be >= " + std::to_string(kMinMaxLen));

  const std::size_t budget = max_len - 4;  // 3 separators + EOS
  std::size_t bp = budget * 2 / 8;
  std::size_t ba = budget * 3 / 8;
  std::size_t bb = budget * 3 / 8;

  auto p = encode_text(record.prompt);
  auto a = encode_text(record.response_a);
  auto b = encode_text(record.response_b);

  // tail truncation; unused budget cascades left-to-right
  std::size_t take_p = std::min(p.size(), bp);
  ba += bp - take_p;
  std::size_t take_a = std::min(a.size(), ba);
  bb += ba - take_a;
  std::size_t take_b = std::min(b.size(), bb);

  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(vocab::kSepPrompt);
  seq.ids.insert(seq.ids.end(), p.begin(), p.begin() + take_p);
  seq.ids.push_back(vocab::kSepA);
  seq.ids.insert(seq.ids.end(), a.begin(), a.begin() + take_a);
  seq.ids.push_back(vocab::kSepB);
  seq.ids.insert(seq.ids.end(), b.begin(), b.begin() + take_b);
  seq.ids.push_back(vocab::kEos);

  seq.real_length = seq.ids.size();
  seq.ids.resize(max_len, vocab::kPad);
  seq.attention_mask.assign(max_len, 0);
  std::fill(seq.attention_mask.begin(),
            seq.attention_mask.begin() + seq.real_length, 1);
  return seq;
}

std::vector<Batch> make_batches(std::vector<TokenSequence> sequences,
                                std::size_t batch_size) {
  if (batch_size < 1) throw SchemaError("batch_size must be >= 1");
  std::stable_sort(sequences.begin(), sequences.end(),
                   [](const TokenSequence& x, const TokenSequence& y) {
                     return x.real_length < y.real_length;
                   });
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < sequences.size(); i += batch_size) {
    std::size_t end = std::min(i + batch_size, sequences.size());
    batches.emplace_back(sequences.begin() + i, sequences.begin() + end);
  }
  return batches;
}

static constexpr std::uint32_t kCacheMagic = 0x50544b43;  // "PTKC"

void write_token_cache(std::ostream& out,
                       const std::vector<TokenSequence>& sequences,
                       std::uint32_t max_len) {
  put_u32(out, kCacheMagic);
  put_u32(out, kTemplateVersion);
  put_u32(out, max_len);
  put_u32(out, static_cast<std::uint32_t>(sequences.size()));
  for (const auto& s : sequences) {
    put_u32(out, static_cast<std::uint32_t>(s.real_length));
    for (int id : s.ids) put_u32(out, static_cast<std::uint32_t>(id));
  }
}

std::vector<TokenSequence> read_token_cache(std::istream& in,
                                            std::uint32_t expected_max_len) {
  if (get_u32(in) != kCacheMagic) throw SchemaError("not a token cache file");
  if (get_u32(in) != kTemplateVersion)
    throw SchemaError("token cache template version mismatch");
  std::uint32_t max_len = get_u32(in);
  if (max_len != expected_max_len)
    throw SchemaError("token cache keyed for max_len " +
                      std::to_string(max_len) + ", expected " +
                      std::to_string(expected_max_len));
  std::uint32_t count = get_u32(in);
  std::vector<TokenSequence> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TokenSequence s;
    s.real_length = get_u32(in);
    s.ids.resize(max_len);
    for (std::uint32_t k = 0; k < max_len; ++k)
      s.ids[k] = static_cast<int>(get_u32(in));
    s.attention_mask.assign(max_len, 0);
    if (s.real_length > max_len)
      throw SchemaError("token cache record longer than max_len");
    std::fill(s.attention_mask.begin(),
              s.attention_mask.begin() + s.real_length, 1);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace preftune
