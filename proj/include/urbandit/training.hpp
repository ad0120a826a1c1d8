#pragma once

// Multi-dataset, multi-task training: every iteration draws a (dataset,
// task) pair uniformly, samples a batch of training windows from that
// dataset, masks them for the task and takes one rectified-flow step.

#include "urbandit/diffusion.hpp"
#include "urbandit/evaluation.hpp"

#include <filesystem>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>

namespace urbandit {

struct TrainPlan {
  std::vector<std::shared_ptr<Dataset>> datasets;
  std::vector<TaskKind> tasks;
  int max_epochs = 500;
  int patience = 20;
  double min_delta = 0.0;  // improvement needed to reset patience
  int iterations_per_epoch = 200;
  /// Reference batch size; each dataset's batch is scaled by its share of
  /// training windows and clamped to [batch_min, batch_max].
  Index batch_size = 8;
  Index batch_min = 2;
  Index batch_max = 32;
  Index t_in = 12;
  Index t_out = 12;
  double missing_ratio = 0.5;
  AdamConfig adam;
  // Validation: n samples per window, inference steps, windows per
  // (dataset, task); metrics in normalized units.
  int val_samples = 4;
  int val_steps = 20;
  Index val_windows = 4;
  bool validate = true;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty = keep everything in memory
  std::ostream* log = nullptr;

  Index window_length() const { return t_in + t_out; }
  void check() const;
};

/// Per-dataset batch sizes (same order as plan.datasets).
std::vector<Index> batch_sizes(const TrainPlan& plan);

/// Independent uniform draws over dataset and task indices.
std::pair<std::size_t, std::size_t> draw_pair(std::size_t n_datasets, std::size_t n_tasks, Rng& rng);
std::pair<std::size_t, std::size_t> draw_pair(const TrainPlan& plan, Rng& rng);

struct IterationRecord {
  long long iteration = 0;
  int epoch = 0;
  std::string dataset;
  std::string task;
  double loss = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's iterations
  double val_rmse = 0.0;    // mean over (dataset, task)
  std::vector<std::pair<std::string, double>> val_detail;  // "dataset/task" -> rmse
  bool improved = false;
};

struct RunRecord {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::string best_checkpoint;

  void write_jsonl(std::ostream& os) const;
  void write_epoch_table(std::ostream& os) const;
};

class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta = 0.0) : patience_(patience), min_delta_(min_delta) {}
  /// Returns true when `value` improves on the best seen so far.
  bool update(double value);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct TrainResult {
  RunRecord record;
  std::optional<Denoiser> best;  // parameters at the best validation epoch
  int epochs_run = 0;
  bool early_stopped = false;
  long long leaks = 0;
};

/// Mean validation RMSE over every (dataset, task) of the plan.
EpochRecord validate(Denoiser& model, const TrainPlan& plan);

/// Trains `model` in place (final parameters); the best-validation copy is
/// returned and, with an out_dir, written to out_dir/best.ckpt together with
/// run.jsonl and epochs.tsv.
TrainResult train(const TrainPlan& plan, Denoiser& model);

/// Restricts `ds` to the earliest floor(fraction * n) training windows.
Index apply_few_shot(Dataset& ds, double fraction, Index window_length);

/// Restricts the named plan dataset and fine-tunes `model` from its current
/// parameters.
TrainResult few_shot(TrainPlan plan, double fraction, const std::string& target, Denoiser& model);

/// Evaluation on a dataset never used in training; normalization comes from
/// the target's own training segment and no parameter changes.
EvalReport zero_shot(Denoiser& model, const Dataset& target, const EvalOptions& opt, int n_samples, int steps);

}  // namespace urbandit
