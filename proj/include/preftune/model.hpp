#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "preftune/optim.hpp"
#include "preftune/tensor.hpp"
#include "preftune/tokenizer.hpp"
#include "preftune/types.hpp"

namespace preftune {

struct ModelConfig {
  std::size_t vocab_size = vocab::kSize;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 192;
  std::size_t max_len = 128;

  void validate() const;  // throws SchemaError
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

enum class LoraTarget { attn_q, attn_k, attn_v, attn_o, mlp_in, mlp_out };

const char* lora_target_name(LoraTarget t);
std::optional<LoraTarget> lora_target_from_name(const std::string& s);

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  double dropout = 0.0;
  std::size_t frozen_layers = 2;
  std::vector<LoraTarget> targets = {LoraTarget::attn_q, LoraTarget::attn_v};

  void validate(const ModelConfig& model) const;
  std::string to_json() const;
  static LoraConfig from_json(const std::string& text);
};

// Trainable low-rank factors riding on a frozen base matrix. Effective
// weight is W + (alpha/rank) * B * A.
struct LoraAdapter {
  nn::Tensor a;  // [rank, d_in]
  nn::Tensor b;  // [d_out, rank]
  double scale = 1.0;
};

struct LinearLayer {
  nn::Tensor w;  // [d_in, d_out], inputs are row vectors
  nn::Tensor bias;
  std::optional<LoraAdapter> adapter;
};

// Small pre-norm transformer encoder with a mean-pool -> linear -> softmax
// three-way classifier head.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::optional<LoraConfig>& lora_config() const { return lora_cfg_; }
  bool has_lora() const { return lora_cfg_.has_value(); }

  // Installs adapters on layers >= frozen_layers and freezes every base
  // weight; the classifier head stays trainable.
  void attach_lora(const LoraConfig& cfg, std::uint64_t seed);

  // Per-example probability triples (eval mode unless training=true).
  std::vector<ProbTriple> predict(const Batch& batch, bool training = false);

  // Mean cross-entropy over the batch, recorded on the active tape.
  nn::Tensor batch_loss(const Batch& batch,
                        std::span<const LabelVec> labels, bool training);

  // Returns an adapter-free model with the low-rank updates folded into the
  // base weights. Throws if no adapters are attached.
  Model merge_lora() const;

  std::pair<std::size_t, std::size_t> trainable_param_count() const;

  // Named parameters in canonical (checkpoint) order.
  std::vector<nn::NamedParam> parameters() const;
  std::vector<nn::Tensor> trainable_parameters() const;

  Model clone() const;

  // Flat binary checkpoint plus a JSON config sidecar at path + ".json".
  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  struct EncoderLayer {
    nn::Tensor ln1_g, ln1_b;
    LinearLayer q, k, v, o;
    nn::Tensor ln2_g, ln2_b;
    LinearLayer fc_in, fc_out;
  };

  Model() = default;
  nn::Tensor linear(const nn::Tensor& x, const LinearLayer& ll,
                    bool training);
  nn::Tensor example_probs(const TokenSequence& seq, bool training);

  ModelConfig cfg_;
  std::optional<LoraConfig> lora_cfg_;
  nn::Tensor tok_emb_, pos_emb_;
  std::vector<EncoderLayer> layers_;
  nn::Tensor ln_f_g_, ln_f_b_;
  LinearLayer head_;
  RandomSource dropout_rng_{0};
};

// Desk-scale member presets standing in for the two ensemble members.
struct MemberPreset {
  std::string name;
  ModelConfig model;
  LoraConfig lora;
  double learning_rate = 0.0;       // reference fine-tuning rate
  std::size_t paper_seq_len = 0;    // full-scale sequence-length setting
};

MemberPreset get_preset(const std::string& name);  // gemma-like | llama-like

}  // namespace preftune
