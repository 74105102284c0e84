#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "preftune/ensemble.hpp"
#include "preftune/ingest.hpp"
#include "preftune/metrics.hpp"
#include "preftune/model.hpp"
#include "preftune/synthgen.hpp"
#include "preftune/train.hpp"

namespace preftune {

struct MemberSpec {
  std::string name;
  ModelConfig model;
  LoraConfig lora;
  TrainConfig train;
  std::uint64_t model_seed = 0;
  std::uint64_t lora_seed = 0;
};

// Full desk-scale experiment: synthetic corpus -> preprocess -> train both
// members -> predict -> calibrate ensemble weights on validation -> evaluate
// on test.
struct ExperimentConfig {
  std::size_t n_records = 5000;
  SynthRule rule;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
  std::uint64_t seed = 42;
  double ensemble_step = 0.05;
  std::vector<MemberSpec> members;
  std::string out_dir;
};

// Desk defaults: two members mirroring the gemma-like / llama-like presets
// at dimensions small enough for single-threaded CPU runs.
ExperimentConfig default_experiment(const std::string& out_dir,
                                    std::uint64_t seed = 42);

struct MemberResult {
  std::string name;
  MetricsReport val;
  MetricsReport test;
  TrainingTrace trace;
};

struct ExperimentResult {
  CleanReport clean_report;
  std::vector<MemberResult> members;
  EnsembleWeights weights;
  double search_val_log_loss = 0.0;
  MetricsReport ensemble_val;
  MetricsReport ensemble_test;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// FNV-1a over a file's bytes; recorded in run manifests.
std::uint64_t hash_file(const std::string& path);

}  // namespace preftune
