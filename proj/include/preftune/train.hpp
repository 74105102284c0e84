#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "preftune/ingest.hpp"
#include "preftune/metrics.hpp"
#include "preftune/model.hpp"

namespace preftune {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_steps = 300;
  std::size_t eval_every = 50;
  std::size_t patience = 3;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  std::optional<double> time_budget_s;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct CurvePoint {
  double wall_seconds = 0.0;
  std::size_t step = 0;
  double val_log_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingTrace {
  std::vector<CurvePoint> points;
  std::size_t best_step = 0;
  double best_val_log_loss = 0.0;
};

// Training clock. The default is a virtual clock advanced by work done, which
// makes traces byte-reproducible; a real clock is used when a wall-clock
// time budget must be enforced.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double seconds() = 0;
  virtual void advance(double /*work_units*/) {}
};

class RealClock : public Clock {
 public:
  RealClock();
  double seconds() override;

 private:
  std::int64_t start_ns_;
};

class VirtualClock : public Clock {
 public:
  double seconds() override { return t_; }
  void advance(double work_units) override { t_ += work_units; }

 private:
  double t_ = 0.0;
};

// True iff the last `patience` evaluations each failed to improve the best
// validation log loss by at least min_delta.
bool early_stop_check(const TrainingTrace& trace, std::size_t patience,
                      double min_delta);

// Eval-mode metrics over a record list.
MetricsReport evaluate_checkpoint(Model& model,
                                  std::span<const PreferenceRecord> records);

// CSV: wall_seconds,step,val_log_loss,val_accuracy
void export_curve(const TrainingTrace& trace, std::ostream& sink);

// Supervised fine-tuning (chat-model + task-specific SFT path): minimizes
// cross entropy on train batches, evaluates on validation every eval_every
// steps, stops on max_steps / time budget / early stopping, and leaves the
// model at the checkpoint with minimum validation log loss.
TrainingTrace train_sft(Model& model, const DatasetSplit& split,
                        const TrainConfig& cfg, Clock* clock = nullptr);

}  // namespace preftune
