#pragma once

// Metrics, baselines and the per-task evaluation harness. Any predictor
// (the diffusion model, a baseline, a test oracle) plugs in through
// Predictor.

#include "urbandit/datasets.hpp"
#include "urbandit/denoiser.hpp"
#include "urbandit/masking.hpp"

#include <json.hpp>

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace urbandit {

/// Errors over cells with M = 0 only. Throws when no cell is masked.
double rmse(const Mat& pred, const Mat& truth, const Mat& mask);
double mae(const Mat& pred, const Mat& truth, const Mat& mask);

/// forecast[i] = mean of history rows whose index is congruent to
/// start_offset + i modulo period. start_offset defaults to the history
/// length (the step right after it).
Mat historical_average(const Mat& history, Index horizon, Index period, Index start_offset = -1);

/// Fills every masked cell from the nearest earlier observed step at the same
/// location, else the nearest later one, else the mean of the observed cells
/// at the same step (else the mean of all observed cells).
Mat copy_last_observed(const Mat& observed, const Mat& mask);

struct WindowContext {
  const Dataset* dataset = nullptr;
  TaskKind task = TaskKind::forward_prediction;
  Index window_start = 0;
  std::uint64_t seed = 0;  // per-window sampling seed
};

struct Prediction {
  Mat mean;                  // normalized units, window shape
  std::vector<Mat> samples;  // optional per-sample outputs
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  /// observed = x0 * M (normalized); unobserved cells are zero.
  virtual Prediction predict(const Mat& observed, const Mat& mask, const WindowContext& ctx) = 0;
};

/// Mean of the same time-of-day over the dataset's training segment, indexed
/// by absolute series position. Period defaults to steps per day.
class HistoricalAveragePredictor : public Predictor {
 public:
  explicit HistoricalAveragePredictor(Index period = 0) : period_(period) {}
  std::string name() const override { return "historical_average"; }
  Prediction predict(const Mat& observed, const Mat& mask, const WindowContext& ctx) override;

 private:
  Index period_;
};

class CopyLastObservedPredictor : public Predictor {
 public:
  std::string name() const override { return "copy_last_observed"; }
  Prediction predict(const Mat& observed, const Mat& mask, const WindowContext& ctx) override;
};

class DiffusionPredictor : public Predictor {
 public:
  DiffusionPredictor(Denoiser& model, int n_samples, int steps, bool keep_samples = false)
      : model_(model), n_samples_(n_samples), steps_(steps), keep_(keep_samples) {}
  std::string name() const override { return "urbandit"; }
  Prediction predict(const Mat& observed, const Mat& mask, const WindowContext& ctx) override;

 private:
  Denoiser& model_;
  int n_samples_;
  int steps_;
  bool keep_;
};

struct EvalOptions {
  TaskKind task = TaskKind::forward_prediction;
  Index t_in = 12;
  Index t_out = 12;
  double missing_ratio = 0.5;
  Split split = Split::test;
  Index window_stride = 1;
  Index max_windows = 0;  // 0 = all; otherwise evenly spaced subset
  std::uint64_t seed = 0;
  bool original_units = true;
  bool keep_windows = false;  // store per-window masks and predictions

  Index window_length() const { return t_in + t_out; }
  MaskSpec mask_spec(Index locations, std::uint64_t mask_seed) const;
};

/// Mask seed of a window: mix_seed(seed, window_start).
std::uint64_t window_mask_seed(std::uint64_t seed, Index window_start);
std::uint64_t window_sample_seed(std::uint64_t seed, Index window_start);

/// The window starts evaluate() visits.
std::vector<Index> evaluation_starts(const Dataset& ds, const EvalOptions& opt);

struct HorizonRow {
  Index step = 0;  // time step within the window
  double rmse = 0.0;
  double mae = 0.0;
  Index count = 0;
};

struct WindowRecord {
  Index start = 0;
  Mat truth;
  Mat mask;
  Prediction prediction;
};

struct EvalReport {
  std::string dataset;
  std::string task;
  std::string predictor;
  double rmse = 0.0;
  double mae = 0.0;
  Index n_windows = 0;
  Index n_cells = 0;
  int n_samples = 0;
  std::uint64_t seed = 0;
  bool original_units = true;
  std::vector<HorizonRow> per_step;
  std::vector<WindowRecord> windows;

  nlohmann::json to_json() const;
  void write_horizon_table(std::ostream& os) const;  // tab-separated
};

EvalReport evaluate(Predictor& predictor, const Dataset& ds, const EvalOptions& opt, int n_samples = 1);

}  // namespace urbandit
