#include "preftune/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"
#include "preftune/error.hpp"
#include "preftune/tokenizer.hpp"

namespace preftune {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw SchemaError("learning_rate must be > 0");
  if (batch_size < 1) throw SchemaError("batch_size must be >= 1");
  if (eval_every < 1) throw SchemaError("eval_every must be >= 1");
  if (patience < 1) throw SchemaError("patience must be >= 1");
  if (min_delta < 0.0) throw SchemaError("min_delta must be >= 0");
  if (time_budget_s && !(*time_budget_s > 0.0))
    throw SchemaError("time_budget_s must be > 0");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["max_steps"] = max_steps;
  j["eval_every"] = eval_every;
  j["patience"] = patience;
  j["min_delta"] = min_delta;
  j["seed"] = seed;
  if (time_budget_s)
    j["time_budget_s"] = *time_budget_s;
  else
    j["time_budget_s"] = nullptr;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.min_delta = j.at("min_delta").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("time_budget_s") && !j["time_budget_s"].is_null())
    c.time_budget_s = j["time_budget_s"].get<double>();
  c.validate();
  return c;
}

RealClock::RealClock() {
  start_ns_ = std::chrono::steady_clock::now().time_since_epoch().count();
}

double RealClock::seconds() {
  auto now = std::chrono::steady_clock::now().time_since_epoch().count();
  return static_cast<double>(now - start_ns_) * 1e-9;
}

bool early_stop_check(const TrainingTrace& trace, std::size_t patience,
                      double min_delta) {
  if (trace.points.empty()) return false;
  double best = trace.points[0].val_log_loss;
  std::size_t last_improvement = 0;  // the first eval always establishes best
  for (std::size_t i = 1; i < trace.points.size(); ++i) {
    if (trace.points[i].val_log_loss <= best - min_delta) {
      best = trace.points[i].val_log_loss;
      last_improvement = i;
    } else {
      best = std::min(best, trace.points[i].val_log_loss);
    }
  }
  return trace.points.size() - 1 - last_improvement >= patience;
}

namespace {

struct Tokenized {
  Batch sequences;
  std::vector<LabelVec> labels;
};

Tokenized tokenize_records(std::span<const PreferenceRecord> records,
                           std::size_t max_len) {
  Tokenized out;
  out.sequences.reserve(records.size());
  out.labels.reserve(records.size());
  for (const auto& r : records) {
    out.sequences.push_back(format_input(r, max_len));
    out.labels.push_back(encode_label(r.label));
  }
  return out;
}

MetricsReport eval_tokenized(Model& model, const Tokenized& data) {
  auto preds = model.predict(data.sequences, false);
  return compute_metrics(preds, data.labels);
}

}  // namespace

MetricsReport evaluate_checkpoint(Model& model,
                                  std::span<const PreferenceRecord> records) {
  if (records.empty())
    throw SchemaError("evaluate_checkpoint: empty record list");
  auto data = tokenize_records(records, model.config().max_len);
  return eval_tokenized(model, data);
}

void export_curve(const TrainingTrace& trace, std::ostream& sink) {
  sink << "wall_seconds,step,val_log_loss,val_accuracy\n";
  char buf[160];
  for (const auto& p : trace.points) {
    std::snprintf(buf, sizeof(buf), "%.9f,%zu,%.17g,%.17g\n", p.wall_seconds,
                  p.step, p.val_log_loss, p.val_accuracy);
    sink << buf;
  }
  if (!sink) throw SchemaError("curve sink write failure");
}

TrainingTrace train_sft(Model& model, const DatasetSplit& split,
                        const TrainConfig& cfg, Clock* clock) {
  cfg.validate();
  if (split.validation.empty())
    throw SchemaError("train_sft requires a nonempty validation split");
  if (split.train.empty())
    throw SchemaError("train_sft requires a nonempty train split");

  VirtualClock fallback_clock;
  if (!clock) clock = &fallback_clock;

  std::size_t max_len = model.config().max_len;
  Tokenized train = tokenize_records(split.train, max_len);
  Tokenized val = tokenize_records(split.validation, max_len);

  nn::Adam adam(nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  auto trainables = model.trainable_parameters();
  auto all_params = model.parameters();

  TrainingTrace trace;
  double last_wall = -1.0;
  auto append_eval = [&](std::size_t step) {
    MetricsReport m = eval_tokenized(model, val);
    double wall = clock->seconds();
    if (wall <= last_wall) wall = last_wall + 1e-9;  // keep strictly increasing
    last_wall = wall;
    trace.points.push_back({wall, step, m.log_loss, m.accuracy});
    return m;
  };

  auto snapshot = [&] {
    std::vector<std::vector<double>> snap;
    snap.reserve(all_params.size());
    for (const auto& p : all_params) snap.push_back(p.tensor.values());
    return snap;
  };
  auto restore = [&](const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < all_params.size(); ++i)
      all_params[i].tensor.values() = snap[i];
  };

  MetricsReport first = append_eval(0);
  trace.best_step = 0;
  trace.best_val_log_loss = first.log_loss;
  auto best_snapshot = snapshot();

  RandomSource shuffle_rng(cfg.seed ^ 0x7261696eULL);
  std::vector<std::size_t> order(train.sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger shuffle on first batch

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    if (cfg.time_budget_s && clock->seconds() >= *cfg.time_budget_s) break;

    Batch batch;
    std::vector<LabelVec> labels;
    std::size_t first_idx = 0;
    for (std::size_t k = 0; k < cfg.batch_size; ++k) {
      if (cursor >= order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      std::size_t idx = order[cursor++];
      if (k == 0) first_idx = idx;
      batch.push_back(train.sequences[idx]);
      labels.push_back(train.labels[idx]);
    }

    nn::Tape tape;
    double loss_value;
    {
      nn::TapeScope scope(tape);
      nn::Tensor loss;
      try {
        loss = model.batch_loss(batch, labels, true);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(step) +
                           " (batch starting at record " +
                           split.train[first_idx].id + "): " + e.what());
      }
      loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at step " + std::to_string(step));
      nn::zero_grad(trainables);
      tape.backward(loss);
    }
    adam.step(trainables);

    double work = 0.0;
    for (const auto& s : batch) work += static_cast<double>(s.real_length);
    clock->advance(work * 1e-4);

    if (step % cfg.eval_every == 0) {
      MetricsReport m = append_eval(step);
      if (m.log_loss < trace.best_val_log_loss) {
        trace.best_val_log_loss = m.log_loss;
        trace.best_step = step;
        best_snapshot = snapshot();
      }
      if (early_stop_check(trace, cfg.patience, cfg.min_delta)) break;
    }
  }

  restore(best_snapshot);
  return trace;
}

}  // namespace preftune
