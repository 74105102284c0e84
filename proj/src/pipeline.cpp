#include "preftune/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "preftune/error.hpp"
#include "preftune/tokenizer.hpp"

namespace preftune {

namespace fs = std::filesystem;

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path + " for hashing");
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  return h;
}

ExperimentConfig default_experiment(const std::string& out_dir,
                                    std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.out_dir = out_dir;
  cfg.seed = seed;
  cfg.n_records = 5000;
  cfg.rule.rule = SynthRuleKind::longer_wins;
  cfg.rule.tie_band = 0.1;
  cfg.rule.noise = 0.05;
  cfg.rule.seed = seed;
  cfg.ensemble_step = 0.05;

  MemberSpec a;
  a.name = "gemma-like";
  a.model = ModelConfig{vocab::kSize, 64, 4, 4, 192, 128};
  a.lora = LoraConfig{8, 16.0, 0.0, 2,
                      {LoraTarget::attn_q, LoraTarget::attn_v}};
  a.train.learning_rate = 2e-3;
  a.train.batch_size = 16;
  a.train.max_steps = 300;
  a.train.eval_every = 50;
  a.train.patience = 3;
  a.train.min_delta = 1e-4;
  a.train.seed = seed + 1;
  a.model_seed = seed + 101;
  a.lora_seed = seed + 201;

  MemberSpec b;
  b.name = "llama-like";
  b.model = ModelConfig{vocab::kSize, 48, 3, 4, 144, 128};
  b.lora = LoraConfig{8, 8.0, 0.0, 2,
                      {LoraTarget::attn_q, LoraTarget::attn_v}};
  b.train = a.train;
  b.train.learning_rate = 3e-3;
  b.train.seed = seed + 2;
  b.model_seed = seed + 102;
  b.lora_seed = seed + 202;

  cfg.members = {a, b};
  return cfg;
}

namespace {

std::vector<LabelVec> labels_of(std::span<const PreferenceRecord> records) {
  std::vector<LabelVec> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_label(r.label));
  return out;
}

MemberPredictions predict_records(Model& model, const std::string& member_id,
                                  std::span<const PreferenceRecord> records) {
  Batch batch;
  batch.reserve(records.size());
  MemberPredictions mp;
  mp.member_id = member_id;
  for (const auto& r : records) {
    batch.push_back(format_input(r, model.config().max_len));
    mp.ids.push_back(r.id);
  }
  mp.triples = model.predict(batch);
  return mp;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

void write_predictions_file(const fs::path& path,
                            const MemberPredictions& mp) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  write_predictions_csv(out, mp.ids, mp.triples);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.members.empty()) throw UsageError("experiment needs members");
  fs::create_directories(cfg.out_dir);
  fs::path root(cfg.out_dir);

  // corpus
  auto raws = generate(cfg.n_records, cfg.rule);
  {
    std::ofstream out(root / "corpus.csv", std::ios::binary);
    if (!out) throw UsageError("cannot write corpus.csv");
    write_raw_csv(out, raws);
  }

  ExperimentResult result;
  auto cleaned = clean_dataset(raws, &result.clean_report);
  write_text_file(root / "drop_report.json", result.clean_report.to_json());

  auto split = split_dataset(cleaned, cfg.split_ratios, cfg.seed);
  {
    std::ofstream out(root / "train.jsonl", std::ios::binary);
    write_cleaned_jsonl(out, split.train);
  }
  {
    std::ofstream out(root / "val.jsonl", std::ios::binary);
    write_cleaned_jsonl(out, split.validation);
  }
  {
    std::ofstream out(root / "test.jsonl", std::ios::binary);
    write_cleaned_jsonl(out, split.test);
  }

  auto val_labels = labels_of(split.validation);
  auto test_labels = labels_of(split.test);

  std::vector<MemberPredictions> val_preds, test_preds;

  for (const auto& spec : cfg.members) {
    fs::path dir = root / spec.name;
    fs::create_directories(dir);

    Model model(spec.model, spec.model_seed);
    model.attach_lora(spec.lora, spec.lora_seed);

    std::unique_ptr<Clock> clock;
    if (spec.train.time_budget_s)
      clock = std::make_unique<RealClock>();
    else
      clock = std::make_unique<VirtualClock>();
    TrainingTrace trace = train_sft(model, split, spec.train, clock.get());

    model.save_checkpoint((dir / "checkpoint.bin").string());
    {
      std::ofstream out(dir / "trace.csv", std::ios::binary);
      export_curve(trace, out);
    }

    MemberResult mr;
    mr.name = spec.name;
    mr.trace = trace;

    auto vp = predict_records(model, spec.name, split.validation);
    auto tp = predict_records(model, spec.name, split.test);
    write_predictions_file(dir / "val_predictions.csv", vp);
    write_predictions_file(dir / "test_predictions.csv", tp);
    mr.val = compute_metrics(vp.triples, val_labels);
    mr.test = compute_metrics(tp.triples, test_labels);

    auto [trainable, total] = model.trainable_param_count();
    nlohmann::json man;
    man["member"] = spec.name;
    man["model"] = nlohmann::json::parse(spec.model.to_json());
    man["lora"] = nlohmann::json::parse(spec.lora.to_json());
    man["train"] = nlohmann::json::parse(spec.train.to_json());
    man["model_seed"] = spec.model_seed;
    man["lora_seed"] = spec.lora_seed;
    man["trainable_params"] = trainable;
    man["total_params"] = total;
    man["best_step"] = trace.best_step;
    man["best_val_log_loss"] = trace.best_val_log_loss;
    man["val_metrics"] = nlohmann::json::parse(mr.val.to_json());
    man["test_metrics"] = nlohmann::json::parse(mr.test.to_json());
    write_text_file(dir / "manifest.json", man.dump(2) + "\n");

    val_preds.push_back(std::move(vp));
    test_preds.push_back(std::move(tp));
    result.members.push_back(std::move(mr));
  }

  // calibrate combination weights on validation, report on test
  auto search = search_weights(val_preds, val_labels, cfg.ensemble_step);
  result.weights = search.weights;
  result.search_val_log_loss = search.val_log_loss;

  auto ens_val = ensemble_predict(val_preds, result.weights);
  auto ens_test = ensemble_predict(test_preds, result.weights);
  result.ensemble_val = compute_metrics(ens_val, val_labels);
  result.ensemble_test = compute_metrics(ens_test, test_labels);

  {
    nlohmann::json wj;
    wj["step"] = cfg.ensemble_step;
    wj["members"] = nlohmann::json::array();
    for (const auto& spec : cfg.members) wj["members"].push_back(spec.name);
    wj["weights"] = result.weights.w;
    wj["val_log_loss"] = result.search_val_log_loss;
    write_text_file(root / "weights.json", wj.dump(2) + "\n");
  }
  {
    std::ofstream out(root / "ensemble_test.csv", std::ios::binary);
    write_predictions_csv(out, test_preds[0].ids, ens_test);
  }
  {
    nlohmann::json mj;
    for (const auto& mr : result.members) {
      mj["members"][mr.name]["val"] =
          nlohmann::json::parse(mr.val.to_json());
      mj["members"][mr.name]["test"] =
          nlohmann::json::parse(mr.test.to_json());
    }
    mj["ensemble"]["val"] =
        nlohmann::json::parse(result.ensemble_val.to_json());
    mj["ensemble"]["test"] =
        nlohmann::json::parse(result.ensemble_test.to_json());
    write_text_file(root / "metrics.json", mj.dump(2) + "\n");
  }

  nlohmann::json man;
  man["n_records"] = cfg.n_records;
  man["seed"] = cfg.seed;
  man["split_ratios"] = cfg.split_ratios;
  man["split_sizes"] = {split.train.size(), split.validation.size(),
                        split.test.size()};
  man["corpus_fnv1a"] = hash_file((root / "corpus.csv").string());
  man["ensemble_step"] = cfg.ensemble_step;
  man["weights"] = result.weights.w;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& spec : cfg.members) names.push_back(spec.name);
  man["members"] = names;
  write_text_file(root / "manifest.json", man.dump(2) + "\n");

  return result;
}

}  // namespace preftune
