#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "preftune/error.hpp"
#include "preftune/ingest.hpp"
#include "preftune/model.hpp"
#include "preftune/rng.hpp"
#include "preftune/synthgen.hpp"
#include "preftune/train.hpp"

using namespace preftune;

namespace {

TrainingTrace trace_from_losses(const std::vector<double>& losses) {
  TrainingTrace t;
  for (std::size_t i = 0; i < losses.size(); ++i)
    t.points.push_back({static_cast<double>(i), i * 50, losses[i], 0.5});
  return t;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 32;
  cfg.max_len = 48;
  return cfg;
}

LoraConfig tiny_lora() {
  LoraConfig cfg;
  cfg.rank = 4;
  cfg.alpha = 8.0;
  cfg.frozen_layers = 1;
  return cfg;
}

// separable longer_wins data with no noise and no dirty records
DatasetSplit make_split(std::size_t n, std::uint64_t seed) {
  SynthRule rule;
  rule.rule = SynthRuleKind::longer_wins;
  rule.noise = 0.0;
  rule.tie_band = 0.1;
  rule.seed = seed;
  rule.list_format_fraction = 0.0;
  rule.null_fraction = 0.0;
  auto raws = generate(n, rule);
  auto cleaned = clean_dataset(raws);
  return split_dataset(cleaned, {0.8, 0.2, 0.0}, seed);
}

}  // namespace

TEST_CASE("train config validation and json round trip") {
  TrainConfig c;
  c.learning_rate = 2e-3;
  c.time_budget_s = 5.5;
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.time_budget_s == c.time_budget_s);

  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), SchemaError);
  bad = TrainConfig{};
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), SchemaError);
}

TEST_CASE("early stop rule on hand traces") {
  CHECK_FALSE(early_stop_check(trace_from_losses({1.0, 0.9, 0.8}), 2, 1e-4));
  CHECK(early_stop_check(trace_from_losses({0.8, 0.81, 0.82, 0.83}), 3, 1e-4));
  CHECK_FALSE(early_stop_check(trace_from_losses({0.8}), 3, 1e-4));
  CHECK_FALSE(
      early_stop_check(trace_from_losses({0.8, 0.81, 0.82}), 3, 1e-4));
  // improvements below min_delta do not reset patience
  CHECK(early_stop_check(
      trace_from_losses({0.8, 0.79999, 0.79998, 0.79997}), 3, 1e-4));
}

TEST_CASE("export_curve format") {
  TrainingTrace empty;
  std::ostringstream sink;
  export_curve(empty, sink);
  CHECK(sink.str() == "wall_seconds,step,val_log_loss,val_accuracy\n");

  auto t = trace_from_losses({1.0, 0.9, 0.8});
  std::ostringstream sink3;
  export_curve(t, sink3);
  std::istringstream lines(sink3.str());
  std::string line;
  int count = 0;
  double prev_wall = -1.0;
  while (std::getline(lines, line)) {
    if (count > 0) {
      double wall = std::stod(line.substr(0, line.find(',')));
      CHECK(wall > prev_wall);
      prev_wall = wall;
    }
    ++count;
  }
  CHECK(count == 4);
}

TEST_CASE("evaluate_checkpoint with zeroed head is the uniform predictor") {
  Model model(tiny_config(), 3);
  for (auto& p : model.parameters())
    if (p.name.rfind("head.", 0) == 0)
      for (double& v : p.tensor.values()) v = 0.0;

  std::vector<PreferenceRecord> records = {
      {"a1", "p", "x", "y", Label::A},  {"a2", "p", "x", "y", Label::B},
      {"a3", "p", "x", "y", Label::Tie}, {"a4", "p", "x", "y", Label::A},
  };
  auto report = evaluate_checkpoint(model, records);
  CHECK(report.n == 4);
  CHECK(std::fabs(report.log_loss - std::log(3.0)) < 1e-9);
  CHECK(report.accuracy == doctest::Approx(0.5));  // ties resolve to A

  CHECK_THROWS_AS(
      (void)evaluate_checkpoint(model, std::vector<PreferenceRecord>{}),
      SchemaError);
}

TEST_CASE("max_steps 0 returns the initial model and a single eval point") {
  auto split = make_split(60, 5);
  Model model(tiny_config(), 7);
  model.attach_lora(tiny_lora(), 8);
  auto before = evaluate_checkpoint(model, split.validation);

  TrainConfig cfg;
  cfg.max_steps = 0;
  cfg.seed = 1;
  auto trace = train_sft(model, split, cfg);
  REQUIRE(trace.points.size() == 1);
  CHECK(trace.points[0].step == 0);
  CHECK(trace.best_step == 0);

  auto after = evaluate_checkpoint(model, split.validation);
  CHECK(after.log_loss == before.log_loss);
  CHECK(trace.best_val_log_loss == before.log_loss);
}

TEST_CASE("training learns separable data and is deterministic") {
  auto split = make_split(300, 11);

  auto run = [&] {
    Model model(tiny_config(), 13);
    model.attach_lora(tiny_lora(), 14);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 8;
    cfg.max_steps = 60;
    cfg.eval_every = 20;
    cfg.seed = 15;
    auto trace = train_sft(model, split, cfg);
    auto metrics = evaluate_checkpoint(model, split.validation);
    return std::make_pair(trace, metrics);
  };

  auto [trace, metrics] = run();
  REQUIRE(trace.points.size() >= 2);
  CHECK(trace.points.back().val_log_loss < trace.points.front().val_log_loss);
  CHECK(trace.best_val_log_loss < std::log(3.0));

  // returned model reproduces the best recorded validation loss
  CHECK(metrics.log_loss == doctest::Approx(trace.best_val_log_loss)
                                .epsilon(1e-12));

  // wall clock strictly increasing
  for (std::size_t i = 1; i < trace.points.size(); ++i)
    CHECK(trace.points[i].wall_seconds > trace.points[i - 1].wall_seconds);

  auto [trace2, metrics2] = run();
  REQUIRE(trace2.points.size() == trace.points.size());
  for (std::size_t i = 0; i < trace.points.size(); ++i) {
    CHECK(trace.points[i].val_log_loss == trace2.points[i].val_log_loss);
    CHECK(trace.points[i].wall_seconds == trace2.points[i].wall_seconds);
  }
  CHECK(metrics.log_loss == metrics2.log_loss);
}

TEST_CASE("frozen base weights are bit-identical after training") {
  auto split = make_split(120, 17);
  Model model(tiny_config(), 19);
  model.attach_lora(tiny_lora(), 20);

  std::vector<std::pair<std::string, std::vector<double>>> frozen_before;
  for (const auto& p : model.parameters())
    if (!p.tensor.requires_grad())
      frozen_before.emplace_back(p.name, p.tensor.values());

  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 8;
  cfg.max_steps = 25;
  cfg.eval_every = 25;
  cfg.seed = 21;
  (void)train_sft(model, split, cfg);

  std::size_t checked = 0;
  for (const auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) continue;
    CHECK(p.tensor.values() == frozen_before[checked].second);
    CHECK(p.name == frozen_before[checked].first);
    ++checked;
  }
  CHECK(checked == frozen_before.size());
  CHECK(checked > 0);
}

TEST_CASE("time budget with a virtual clock stops training") {
  auto split = make_split(120, 23);
  Model model(tiny_config(), 25);
  model.attach_lora(tiny_lora(), 26);

  TrainConfig cfg;
  cfg.max_steps = 1000000;
  cfg.eval_every = 5;
  cfg.batch_size = 4;
  cfg.seed = 27;
  cfg.time_budget_s = 0.05;  // a few virtual-work steps
  VirtualClock clock;
  auto trace = train_sft(model, split, cfg, &clock);
  CHECK(trace.points.back().step < 1000);
}
