#include "preftune/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "preftune/error.hpp"

namespace preftune {

using nn::Tensor;

void ModelConfig::validate() const {
  if (vocab_size < static_cast<std::size_t>(vocab::kSize))
    throw SchemaError("vocab_size must cover the byte vocabulary (>= 261)");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0)
    throw SchemaError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw SchemaError("d_model (" + std::to_string(d_model) +
                      ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  if (max_len < kMinMaxLen)
    throw SchemaError("max_len must be >= " + std::to_string(kMinMaxLen));
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_len"] = max_len;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.validate();
  return c;
}

const char* lora_target_name(LoraTarget t) {
  switch (t) {
    case LoraTarget::attn_q: return "attn_q";
    case LoraTarget::attn_k: return "attn_k";
    case LoraTarget::attn_v: return "attn_v";
    case LoraTarget::attn_o: return "attn_o";
    case LoraTarget::mlp_in: return "mlp_in";
    default: return "mlp_out";
  }
}

std::optional<LoraTarget> lora_target_from_name(const std::string& s) {
  for (LoraTarget t :
       {LoraTarget::attn_q, LoraTarget::attn_k, LoraTarget::attn_v,
        LoraTarget::attn_o, LoraTarget::mlp_in, LoraTarget::mlp_out})
    if (s == lora_target_name(t)) return t;
  return std::nullopt;
}

void LoraConfig::validate(const ModelConfig& model) const {
  if (rank < 1) throw SchemaError("LoRA rank must be >= 1");
  if (!(alpha > 0.0)) throw SchemaError("LoRA alpha must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw SchemaError("LoRA dropout must be in [0, 1)");
  if (frozen_layers > model.n_layers)
    throw SchemaError("frozen_layers exceeds n_layers");
  if (targets.empty()) throw SchemaError("no LoRA targets");
}

std::string LoraConfig::to_json() const {
  nlohmann::json j;
  j["rank"] = rank;
  j["alpha"] = alpha;
  j["dropout"] = dropout;
  j["frozen_layers"] = frozen_layers;
  auto arr = nlohmann::json::array();
  for (auto t : targets) arr.push_back(lora_target_name(t));
  j["targets"] = arr;
  return j.dump();
}

LoraConfig LoraConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.frozen_layers = j.at("frozen_layers").get<std::size_t>();
  c.targets.clear();
  for (const auto& name : j.at("targets")) {
    auto t = lora_target_from_name(name.get<std::string>());
    if (!t) throw SchemaError("unknown LoRA target: " +
                              name.get<std::string>());
    c.targets.push_back(*t);
  }
  return c;
}

namespace {
constexpr double kInitStd = 0.02;

LinearLayer make_linear(std::size_t d_in, std::size_t d_out,
                        RandomSource& rng) {
  LinearLayer ll;
  ll.w = Tensor::randn({d_in, d_out}, rng, kInitStd, true);
  ll.bias = Tensor::zeros({d_out}, true);
  return ll;
}
}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RandomSource rng(seed);
  std::size_t d = cfg_.d_model;
  tok_emb_ = Tensor::randn({cfg_.vocab_size, d}, rng, kInitStd, true);
  pos_emb_ = Tensor::randn({cfg_.max_len, d}, rng, kInitStd, true);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    EncoderLayer lyr;
    lyr.ln1_g = Tensor::from({d}, std::vector<double>(d, 1.0), true);
    lyr.ln1_b = Tensor::zeros({d}, true);
    lyr.q = make_linear(d, d, rng);
    lyr.k = make_linear(d, d, rng);
    lyr.v = make_linear(d, d, rng);
    lyr.o = make_linear(d, d, rng);
    lyr.ln2_g = Tensor::from({d}, std::vector<double>(d, 1.0), true);
    lyr.ln2_b = Tensor::zeros({d}, true);
    lyr.fc_in = make_linear(d, cfg_.d_ff, rng);
    lyr.fc_out = make_linear(cfg_.d_ff, d, rng);
    layers_.push_back(std::move(lyr));
  }
  ln_f_g_ = Tensor::from({d}, std::vector<double>(d, 1.0), true);
  ln_f_b_ = Tensor::zeros({d}, true);
  head_ = make_linear(d, 3, rng);
  dropout_rng_ = RandomSource(seed ^ 0x5eed0d60ULL);
}

void Model::attach_lora(const LoraConfig& cfg, std::uint64_t seed) {
  if (lora_cfg_) throw SchemaError("adapters already attached");
  cfg.validate(cfg_);
  lora_cfg_ = cfg;

  // freeze every base weight model-wide; head stays trainable
  for (auto& p : parameters()) p.tensor.set_requires_grad(false);
  head_.w.set_requires_grad(true);
  head_.bias.set_requires_grad(true);

  RandomSource rng(seed);
  double sc = cfg.alpha / static_cast<double>(cfg.rank);
  for (std::size_t l = cfg.frozen_layers; l < cfg_.n_layers; ++l) {
    auto& lyr = layers_[l];
    for (LoraTarget t :
         {LoraTarget::attn_q, LoraTarget::attn_k, LoraTarget::attn_v,
          LoraTarget::attn_o, LoraTarget::mlp_in, LoraTarget::mlp_out}) {
      if (std::find(cfg.targets.begin(), cfg.targets.end(), t) ==
          cfg.targets.end())
        continue;
      LinearLayer* ll = nullptr;
      switch (t) {
        case LoraTarget::attn_q: ll = &lyr.q; break;
        case LoraTarget::attn_k: ll = &lyr.k; break;
        case LoraTarget::attn_v: ll = &lyr.v; break;
        case LoraTarget::attn_o: ll = &lyr.o; break;
        case LoraTarget::mlp_in: ll = &lyr.fc_in; break;
        case LoraTarget::mlp_out: ll = &lyr.fc_out; break;
      }
      std::size_t d_in = ll->w.rows(), d_out = ll->w.cols();
      LoraAdapter ad;
      ad.a = Tensor::randn({cfg.rank, d_in}, rng, kInitStd, true);
      ad.b = Tensor::zeros({d_out, cfg.rank}, true);
      ad.scale = sc;
      ll->adapter = std::move(ad);
    }
  }
  dropout_rng_ = RandomSource(seed ^ 0xd20b0a57ULL);
}

Tensor Model::linear(const Tensor& x, const LinearLayer& ll, bool training) {
  Tensor out = nn::add_rowvec(nn::matmul(x, ll.w), ll.bias);
  if (!ll.adapter) return out;
  const auto& ad = *ll.adapter;
  Tensor xa = nn::matmul(x, nn::transpose(ad.a));
  if (lora_cfg_ && lora_cfg_->dropout > 0.0)
    xa = nn::dropout(xa, lora_cfg_->dropout, dropout_rng_, training);
  Tensor delta = nn::scale(nn::matmul(xa, nn::transpose(ad.b)), ad.scale);
  return nn::add(out, delta);
}

Tensor Model::example_probs(const TokenSequence& seq, bool training) {
  std::size_t len = seq.real_length;
  if (len == 0 || len > cfg_.max_len)
    throw NumericError("token sequence with invalid real_length");
  for (std::size_t i = 0; i < len; ++i)
    if (seq.ids[i] < 0 ||
        static_cast<std::size_t>(seq.ids[i]) >= cfg_.vocab_size)
      throw NumericError("token id out of range");

  // Right padding means the real prefix is the whole computation; padded
  // positions cannot influence the pooled output, so they are skipped.
  std::span<const int> ids(seq.ids.data(), len);
  Tensor x = nn::embedding_lookup(tok_emb_, ids);
  x = nn::add(x, nn::slice_rows(pos_emb_, 0, len));

  std::size_t dh = cfg_.d_model / cfg_.n_heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (auto& lyr : layers_) {
    Tensor h = nn::layer_norm(x, lyr.ln1_g, lyr.ln1_b);
    Tensor q = linear(h, lyr.q, training);
    Tensor k = linear(h, lyr.k, training);
    Tensor v = linear(h, lyr.v, training);
    std::vector<Tensor> heads;
    for (std::size_t hh = 0; hh < cfg_.n_heads; ++hh) {
      Tensor qh = nn::slice_cols(q, hh * dh, dh);
      Tensor kh = nn::slice_cols(k, hh * dh, dh);
      Tensor vh = nn::slice_cols(v, hh * dh, dh);
      Tensor scores =
          nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt_dh);
      Tensor attn = nn::softmax_rows(scores);
      heads.push_back(nn::matmul(attn, vh));
    }
    Tensor att = nn::concat_cols(heads);
    att = linear(att, lyr.o, training);
    x = nn::add(x, att);

    Tensor h2 = nn::layer_norm(x, lyr.ln2_g, lyr.ln2_b);
    Tensor f = linear(h2, lyr.fc_in, training);
    f = nn::gelu(f);
    f = linear(f, lyr.fc_out, training);
    x = nn::add(x, f);
  }
  x = nn::layer_norm(x, ln_f_g_, ln_f_b_);
  std::vector<std::uint8_t> ones(len, 1);
  Tensor pooled = nn::mean_pool_masked(x, ones);
  Tensor logits = linear(pooled, head_, training);
  return nn::softmax_rows(logits);
}

std::vector<ProbTriple> Model::predict(const Batch& batch, bool training) {
  std::vector<ProbTriple> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) {
    Tensor p = example_probs(seq, training);
    out.push_back({p.data()[0], p.data()[1], p.data()[2]});
  }
  return out;
}

Tensor Model::batch_loss(const Batch& batch, std::span<const LabelVec> labels,
                         bool training) {
  if (batch.size() != labels.size() || batch.empty())
    throw MisalignmentError("batch/labels size mismatch");
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor probs = example_probs(batch[i], training);
    Tensor y = Tensor::from({1, 3},
                            {labels[i][0], labels[i][1], labels[i][2]});
    losses.push_back(nn::cross_entropy_with_probs(probs, y));
  }
  return nn::mean_scalars(losses);
}

Model Model::merge_lora() const {
  if (!lora_cfg_) throw SchemaError("merge_lora: no adapters attached");
  Model merged = clone();
  for (auto& lyr : merged.layers_) {
    for (LinearLayer* ll :
         {&lyr.q, &lyr.k, &lyr.v, &lyr.o, &lyr.fc_in, &lyr.fc_out}) {
      if (!ll->adapter) continue;
      const auto& ad = *ll->adapter;
      std::size_t r = ad.a.rows(), d_in = ad.a.cols(), d_out = ad.b.rows();
      double* w = ll->w.data();
      const double* a = ad.a.data();
      const double* b = ad.b.data();
      for (std::size_t i = 0; i < d_in; ++i)
        for (std::size_t j = 0; j < d_out; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < r; ++k) s += b[j * r + k] * a[k * d_in + i];
          w[i * d_out + j] += ad.scale * s;
        }
      ll->adapter.reset();
    }
  }
  merged.lora_cfg_.reset();
  for (auto& p : merged.parameters()) p.tensor.set_requires_grad(true);
  return merged;
}

std::pair<std::size_t, std::size_t> Model::trainable_param_count() const {
  std::size_t trainable = 0, total = 0;
  for (const auto& p : parameters()) {
    total += p.tensor.size();
    if (p.tensor.requires_grad()) trainable += p.tensor.size();
  }
  return {trainable, total};
}

std::vector<nn::NamedParam> Model::parameters() const {
  std::vector<nn::NamedParam> out;
  auto push = [&](const std::string& name, const Tensor& t) {
    out.push_back({name, t});
  };
  push("tok_emb", tok_emb_);
  push("pos_emb", pos_emb_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& lyr = layers_[l];
    std::string p = "layer" + std::to_string(l) + ".";
    push(p + "ln1.g", lyr.ln1_g);
    push(p + "ln1.b", lyr.ln1_b);
    auto push_linear = [&](const std::string& n, const LinearLayer& ll) {
      push(p + n + ".w", ll.w);
      push(p + n + ".b", ll.bias);
      if (ll.adapter) {
        push(p + n + ".lora_a", ll.adapter->a);
        push(p + n + ".lora_b", ll.adapter->b);
      }
    };
    push_linear("attn_q", lyr.q);
    push_linear("attn_k", lyr.k);
    push_linear("attn_v", lyr.v);
    push_linear("attn_o", lyr.o);
    push(p + "ln2.g", lyr.ln2_g);
    push(p + "ln2.b", lyr.ln2_b);
    push_linear("mlp_in", lyr.fc_in);
    push_linear("mlp_out", lyr.fc_out);
  }
  push("ln_f.g", ln_f_g_);
  push("ln_f.b", ln_f_b_);
  push("head.w", head_.w);
  push("head.b", head_.bias);
  return out;
}

std::vector<Tensor> Model::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters())
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

Model Model::clone() const {
  Model copy = *this;  // shallow; now deep-copy every tensor
  auto deep = [](Tensor& t) {
    if (t.defined())
      t = Tensor::from(t.shape(), t.values(), t.requires_grad());
  };
  deep(copy.tok_emb_);
  deep(copy.pos_emb_);
  for (auto& lyr : copy.layers_) {
    deep(lyr.ln1_g);
    deep(lyr.ln1_b);
    for (LinearLayer* ll :
         {&lyr.q, &lyr.k, &lyr.v, &lyr.o, &lyr.fc_in, &lyr.fc_out}) {
      deep(ll->w);
      deep(ll->bias);
      if (ll->adapter) {
        deep(ll->adapter->a);
        deep(ll->adapter->b);
      }
    }
    deep(lyr.ln2_g);
    deep(lyr.ln2_b);
  }
  deep(copy.ln_f_g_);
  deep(copy.ln_f_b_);
  deep(copy.head_.w);
  deep(copy.head_.bias);
  return copy;
}

// ---- checkpoint io ------------------------------------------------------

namespace {

constexpr std::uint32_t kCkptMagic = 0x5054434bU;  // "PTCK"
constexpr std::uint32_t kCkptVersion = 1;

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
  if (!in) throw SchemaError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw SchemaError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot open checkpoint for writing: " + path);
  auto params = parameters();
  put_u32(out, kCkptMagic);
  put_u32(out, kCkptVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (std::size_t d : p.tensor.shape())
      put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) put_f64(out, v);
  }
  if (!out) throw SchemaError("checkpoint write failed: " + path);

  nlohmann::json side;
  side["model"] = nlohmann::json::parse(cfg_.to_json());
  if (lora_cfg_)
    side["lora"] = nlohmann::json::parse(lora_cfg_->to_json());
  else
    side["lora"] = nullptr;
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw SchemaError("missing checkpoint sidecar: " + path + ".json");
  nlohmann::json side = nlohmann::json::parse(js);
  ModelConfig cfg = ModelConfig::from_json(side.at("model").dump());
  Model model(cfg, 0);
  if (!side.at("lora").is_null())
    model.attach_lora(LoraConfig::from_json(side.at("lora").dump()), 0);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open checkpoint: " + path);
  if (get_u32(in) != kCkptMagic) throw SchemaError("not a checkpoint file");
  if (get_u32(in) != kCkptVersion)
    throw SchemaError("unsupported checkpoint version");
  std::uint32_t count = get_u32(in);

  auto params = model.parameters();
  if (count != params.size())
    throw SchemaError("checkpoint parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw SchemaError("checkpoint truncated");
    if (name != params[i].name)
      throw SchemaError("checkpoint parameter order mismatch at " + name);
    std::uint32_t ndim = get_u32(in);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = get_u32(in);
    if (shape != params[i].tensor.shape())
      throw SchemaError("checkpoint shape mismatch for " + name);
    for (double& v : params[i].tensor.values()) v = get_f64(in);
  }
  return model;
}

MemberPreset get_preset(const std::string& name) {
  if (name == "gemma-like") {
    MemberPreset p;
    p.name = name;
    p.model = ModelConfig{vocab::kSize, 128, 4, 4, 512, 512};
    p.lora = LoraConfig{8, 16.0, 0.0, 2,
                        {LoraTarget::attn_q, LoraTarget::attn_v}};
    p.learning_rate = 8e-5;
    p.paper_seq_len = 1536;
    return p;
  }
  if (name == "llama-like") {
    MemberPreset p;
    p.name = name;
    p.model = ModelConfig{vocab::kSize, 96, 3, 4, 384, 512};
    p.lora = LoraConfig{8, 8.0, 0.0, 2,
                        {LoraTarget::attn_q, LoraTarget::attn_v}};
    p.learning_rate = 1.2e-4;
    p.paper_seq_len = 1280;
    return p;
  }
  throw UsageError("unknown preset: " + name +
                   " (expected gemma-like or llama-like)");
}

}  // namespace preftune
