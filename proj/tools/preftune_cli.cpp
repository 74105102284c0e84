#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "preftune/ensemble.hpp"
#include "preftune/error.hpp"
#include "preftune/ingest.hpp"
#include "preftune/metrics.hpp"
#include "preftune/model.hpp"
#include "preftune/pipeline.hpp"
#include "preftune/synthgen.hpp"
#include "preftune/tokenizer.hpp"
#include "preftune/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace preftune;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

std::vector<PreferenceRecord> load_cleaned(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  return read_cleaned_jsonl(in);
}

std::vector<LabelVec> labels_of(const std::vector<PreferenceRecord>& recs) {
  std::vector<LabelVec> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(encode_label(r.label));
  return out;
}

std::vector<double> parse_comma_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw UsageError("cannot parse number '" + tok + "'");
    }
  }
  return out;
}

int cmd_generate(std::size_t n, const std::string& rule_name, double noise,
                 double tie_band, std::uint64_t seed,
                 const std::string& format, const std::string& output) {
  SynthRule rule;
  if (rule_name == "longer_wins")
    rule.rule = SynthRuleKind::longer_wins;
  else if (rule_name == "keyword_wins")
    rule.rule = SynthRuleKind::keyword_wins;
  else if (rule_name == "mixed")
    rule.rule = SynthRuleKind::mixed;
  else
    throw UsageError("unknown rule " + rule_name);
  rule.noise = noise;
  rule.tie_band = tie_band;
  rule.seed = seed;

  auto records = generate(n, rule);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw UsageError("cannot write " + output);
  if (format == "csv")
    write_raw_csv(out, records);
  else if (format == "jsonl")
    write_raw_jsonl(out, records);
  else
    throw UsageError("unknown format " + format);
  std::cout << "wrote " << records.size() << " records to " << output << "\n";
  return 0;
}

int cmd_preprocess(const std::string& input, const std::string& format,
                   const std::string& output, std::uint64_t seed,
                   const std::string& split_str) {
  SourceFormat fmt;
  if (format == "csv")
    fmt = SourceFormat::csv;
  else if (format == "jsonl")
    fmt = SourceFormat::jsonl;
  else
    throw UsageError("unknown format " + format);

  auto ratios_v = parse_comma_doubles(split_str);
  if (ratios_v.size() != 3)
    throw UsageError("--split needs TRAIN,VAL,TEST ratios");
  std::array<double, 3> ratios = {ratios_v[0], ratios_v[1], ratios_v[2]};

  std::ifstream in(input, std::ios::binary);
  if (!in) throw UsageError("cannot open " + input);
  auto raws = parse_dataset(in, fmt);

  CleanReport report;
  auto cleaned = clean_dataset(raws, &report);
  auto split = split_dataset(cleaned, ratios, seed);

  fs::create_directories(output);
  fs::path dir(output);
  {
    std::ofstream o(dir / "train.jsonl", std::ios::binary);
    write_cleaned_jsonl(o, split.train);
  }
  {
    std::ofstream o(dir / "val.jsonl", std::ios::binary);
    write_cleaned_jsonl(o, split.validation);
  }
  {
    std::ofstream o(dir / "test.jsonl", std::ios::binary);
    write_cleaned_jsonl(o, split.test);
  }
  spit((dir / "drop_report.json").string(), report.to_json() + "\n");

  json man;
  man["command"] = "preprocess";
  man["input"] = input;
  man["input_fnv1a"] = hash_file(input);
  man["format"] = format;
  man["seed"] = seed;
  man["split"] = ratios;
  man["split_sizes"] = {split.train.size(), split.validation.size(),
                        split.test.size()};
  man["artifacts"] = {"train.jsonl", "val.jsonl", "test.jsonl",
                      "drop_report.json"};
  spit((dir / "manifest.json").string(), man.dump(2) + "\n");

  std::cout << report.to_json() << "\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& preset_name,
              const std::string& config_path, const std::string& out) {
  MemberPreset preset = get_preset(preset_name);

  // desk defaults sized for single-threaded CPU runs; a config file
  // overrides any of the three sections with full explicit keys
  ExperimentConfig desk = default_experiment("");
  const MemberSpec& desk_spec =
      preset_name == "llama-like" ? desk.members[1] : desk.members[0];
  ModelConfig model_cfg = desk_spec.model;
  LoraConfig lora_cfg = desk_spec.lora;
  TrainConfig train_cfg = desk_spec.train;

  if (!config_path.empty()) {
    json j;
    try {
      j = json::parse(slurp(config_path));
    } catch (const json::exception& e) {
      throw SchemaError(std::string("config parse error: ") + e.what());
    }
    if (j.contains("model"))
      model_cfg = ModelConfig::from_json(j["model"].dump());
    if (j.contains("lora"))
      lora_cfg = LoraConfig::from_json(j["lora"].dump());
    if (j.contains("train"))
      train_cfg = TrainConfig::from_json(j["train"].dump());
  }
  model_cfg.validate();
  lora_cfg.validate(model_cfg);
  train_cfg.validate();

  DatasetSplit split;
  split.train = load_cleaned((fs::path(data) / "train.jsonl").string());
  split.validation = load_cleaned((fs::path(data) / "val.jsonl").string());
  split.seed = train_cfg.seed;

  Model model(model_cfg, train_cfg.seed + 101);
  model.attach_lora(lora_cfg, train_cfg.seed + 201);

  std::unique_ptr<Clock> clock;
  if (train_cfg.time_budget_s)
    clock = std::make_unique<RealClock>();
  else
    clock = std::make_unique<VirtualClock>();
  TrainingTrace trace = train_sft(model, split, train_cfg, clock.get());

  fs::create_directories(out);
  fs::path dir(out);
  model.save_checkpoint((dir / "checkpoint.bin").string());
  {
    std::ofstream o(dir / "trace.csv", std::ios::binary);
    export_curve(trace, o);
  }

  auto [trainable, total] = model.trainable_param_count();
  json man;
  man["command"] = "train";
  man["preset"] = {{"name", preset.name},
                   {"learning_rate", preset.learning_rate},
                   {"sequence_length", preset.paper_seq_len}};
  man["learning_rate"] = preset.learning_rate;
  man["model"] = json::parse(model_cfg.to_json());
  man["lora"] = json::parse(lora_cfg.to_json());
  man["train"] = json::parse(train_cfg.to_json());
  man["data"] = data;
  man["data_fnv1a"] = {
      {"train", hash_file((fs::path(data) / "train.jsonl").string())},
      {"val", hash_file((fs::path(data) / "val.jsonl").string())}};
  man["seed"] = train_cfg.seed;
  man["trainable_params"] = trainable;
  man["total_params"] = total;
  man["best_step"] = trace.best_step;
  man["best_val_log_loss"] = trace.best_val_log_loss;
  man["wall_seconds"] =
      trace.points.empty() ? 0.0 : trace.points.back().wall_seconds;
  man["artifacts"] = {"checkpoint.bin", "checkpoint.bin.json", "trace.csv"};
  spit((dir / "manifest.json").string(), man.dump(2) + "\n");

  std::cout << "best_step=" << trace.best_step
            << " best_val_log_loss=" << trace.best_val_log_loss << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& data,
                const std::string& out) {
  Model model = Model::load_checkpoint(checkpoint);
  auto records = load_cleaned(data);

  Batch batch;
  std::vector<std::string> ids;
  for (const auto& r : records) {
    batch.push_back(format_input(r, model.config().max_len));
    ids.push_back(r.id);
  }
  auto triples = model.predict(batch);

  std::ofstream o(out, std::ios::binary);
  if (!o) throw UsageError("cannot write " + out);
  write_predictions_csv(o, ids, triples);
  std::cout << "wrote " << ids.size() << " predictions to " << out << "\n";
  return 0;
}

int cmd_ensemble(const std::vector<std::string>& member_paths,
                 const std::string& labels_path, const std::string& mode,
                 const std::string& weights_str, double step,
                 const std::string& out) {
  std::vector<MemberPredictions> members;
  for (const auto& p : member_paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw UsageError("cannot open " + p);
    members.push_back(read_predictions_csv(in, p));
  }

  EnsembleWeights weights;
  json wj;
  if (mode == "fixed") {
    if (weights_str.empty())
      throw UsageError("--mode fixed requires --weights");
    weights.w = parse_comma_doubles(weights_str);
    if (weights.w.size() != members.size())
      throw InvalidWeightsError("got " + std::to_string(weights.w.size()) +
                                " weights for " +
                                std::to_string(members.size()) + " members");
    validate_weights(weights);
  } else if (mode == "search") {
    if (labels_path.empty())
      throw UsageError("--mode search requires --labels");
    auto records = load_cleaned(labels_path);
    if (records.size() != members[0].ids.size())
      throw MisalignmentError("label count does not match prediction count");
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].id != members[0].ids[i])
        throw MisalignmentError("label id " + records[i].id +
                                " does not match prediction id " +
                                members[0].ids[i]);
    auto lab = labels_of(records);
    auto res = search_weights(members, lab, step);
    weights = res.weights;
    wj["val_log_loss"] = res.val_log_loss;
  } else {
    throw UsageError("unknown mode " + mode);
  }

  auto combined = ensemble_predict(members, weights);
  {
    std::ofstream o(out, std::ios::binary);
    if (!o) throw UsageError("cannot write " + out);
    write_predictions_csv(o, members[0].ids, combined);
  }
  wj["mode"] = mode;
  wj["members"] = member_paths;
  wj["weights"] = weights.w;
  spit(out + ".weights.json", wj.dump(2) + "\n");
  std::cout << wj.dump() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& predictions, const std::string& labels,
                 const std::string& out) {
  std::ifstream in(predictions, std::ios::binary);
  if (!in) throw UsageError("cannot open " + predictions);
  auto preds = read_predictions_csv(in, predictions);

  auto records = load_cleaned(labels);
  if (records.size() != preds.ids.size())
    throw MisalignmentError("label count " + std::to_string(records.size()) +
                            " does not match prediction count " +
                            std::to_string(preds.ids.size()));
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].id != preds.ids[i])
      throw MisalignmentError("label id " + records[i].id +
                              " does not match prediction id " +
                              preds.ids[i]);

  auto report = compute_metrics(preds.triples, labels_of(records));
  std::string text = report.to_json() + "\n";
  if (!out.empty()) spit(out, text);
  std::cout << text;
  return 0;
}

int cmd_run_all(const std::string& out, std::uint64_t seed, std::size_t n) {
  ExperimentConfig cfg = default_experiment(out, seed);
  if (n > 0) cfg.n_records = n;
  auto result = run_experiment(cfg);

  std::cout << "cleaned " << result.clean_report.cleaned << "/"
            << result.clean_report.parsed << " records\n";
  for (const auto& m : result.members)
    std::cout << m.name << ": val_log_loss=" << m.val.log_loss
              << " val_acc=" << m.val.accuracy
              << " test_log_loss=" << m.test.log_loss
              << " test_acc=" << m.test.accuracy << "\n";
  std::cout << "ensemble weights:";
  for (double w : result.weights.w) std::cout << " " << w;
  std::cout << "\nensemble: val_log_loss=" << result.ensemble_val.log_loss
            << " val_acc=" << result.ensemble_val.accuracy
            << " test_log_loss=" << result.ensemble_test.log_loss
            << " test_acc=" << result.ensemble_test.accuracy << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"preference-prediction pipeline"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "emit a synthetic raw corpus");
  std::size_t gen_n = 1000;
  std::string gen_rule = "longer_wins", gen_format = "csv", gen_output;
  double gen_noise = 0.0, gen_tie_band = 0.1;
  std::uint64_t gen_seed = 0;
  gen->add_option("--n", gen_n, "record count");
  gen->add_option("--rule", gen_rule, "longer_wins|keyword_wins|mixed");
  gen->add_option("--noise", gen_noise, "label-flip probability");
  gen->add_option("--tie-band", gen_tie_band, "relative-length tie window");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--format", gen_format, "csv|jsonl");
  gen->add_option("--output", gen_output, "output path")->required();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "clean and split a raw corpus");
  std::string pre_input, pre_format = "csv", pre_output,
              pre_split = "0.8,0.1,0.1";
  std::uint64_t pre_seed = 0;
  pre->add_option("--input", pre_input, "raw dataset")->required();
  pre->add_option("--format", pre_format, "csv|jsonl");
  pre->add_option("--output", pre_output, "output directory")->required();
  pre->add_option("--seed", pre_seed, "shuffle seed");
  pre->add_option("--split", pre_split, "TRAIN,VAL,TEST ratios");

  // train
  auto* tr = app.add_subcommand("train", "fine-tune one ensemble member");
  std::string tr_data, tr_preset, tr_config, tr_out;
  tr->add_option("--data", tr_data, "directory with train.jsonl/val.jsonl")
      ->required();
  tr->add_option("--preset", tr_preset, "gemma-like|llama-like")->required();
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--out", tr_out, "output directory")->required();

  // predict
  auto* pr = app.add_subcommand("predict", "score a cleaned dataset");
  std::string pr_checkpoint, pr_data, pr_out;
  pr->add_option("--checkpoint", pr_checkpoint, "checkpoint path")
      ->required();
  pr->add_option("--data", pr_data, "cleaned JSONL")->required();
  pr->add_option("--out", pr_out, "prediction CSV path")->required();

  // ensemble
  auto* en = app.add_subcommand("ensemble", "combine member predictions");
  std::vector<std::string> en_members;
  std::string en_labels, en_mode = "fixed", en_weights, en_out;
  double en_step = 0.05;
  en->add_option("--members", en_members, "member prediction CSVs")
      ->required()
      ->expected(-1);
  en->add_option("--labels", en_labels, "cleaned JSONL with labels");
  en->add_option("--mode", en_mode, "fixed|search");
  en->add_option("--weights", en_weights, "W1,W2,... for fixed mode");
  en->add_option("--step", en_step, "grid step for search mode");
  en->add_option("--out", en_out, "ensemble CSV path")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "log loss + accuracy");
  std::string ev_predictions, ev_labels, ev_out;
  ev->add_option("--predictions", ev_predictions, "prediction CSV")
      ->required();
  ev->add_option("--labels", ev_labels, "cleaned JSONL with labels")
      ->required();
  ev->add_option("--out", ev_out, "metrics JSON path");

  // run-all
  auto* ra = app.add_subcommand("run-all",
                                "generate, preprocess, train both members, "
                                "calibrate the ensemble, and evaluate");
  std::string ra_out;
  std::uint64_t ra_seed = 42;
  std::size_t ra_n = 0;
  ra->add_option("--out", ra_out, "output directory")->required();
  ra->add_option("--seed", ra_seed, "experiment seed");
  ra->add_option("--n", ra_n, "record count override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_generate(gen_n, gen_rule, gen_noise, gen_tie_band, gen_seed,
                          gen_format, gen_output);
    if (pre->parsed())
      return cmd_preprocess(pre_input, pre_format, pre_output, pre_seed,
                            pre_split);
    if (tr->parsed()) return cmd_train(tr_data, tr_preset, tr_config, tr_out);
    if (pr->parsed()) return cmd_predict(pr_checkpoint, pr_data, pr_out);
    if (en->parsed())
      return cmd_ensemble(en_members, en_labels, en_mode, en_weights, en_step,
                          en_out);
    if (ev->parsed()) return cmd_evaluate(ev_predictions, ev_labels, ev_out);
    if (ra->parsed()) return cmd_run_all(ra_out, ra_seed, ra_n);
  } catch (const preftune::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
