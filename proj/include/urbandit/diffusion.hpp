#pragma once

// Rectified flow between data (t = 0) and standard normal noise (t = 1):
// x_t = (1 - t) x0 + t z with constant velocity z - x0. Sampling integrates
// dx/dt = v from t = 1 to 0 with Euler steps, re-imposing the observed cells
// after every step.

#include "urbandit/datasets.hpp"
#include "urbandit/denoiser.hpp"
#include "urbandit/optimizer.hpp"

#include <functional>

namespace urbandit {

struct RFConfig {
  int inference_steps = 20;
  int diffusion_steps = 500;  // reporting grid only
  int n_eval_samples = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PathPoint {
  Mat x_t;
  Mat v_target;
};

PathPoint rf_interpolate(const Mat& x0, const Mat& z, double t);

/// Initial noise used by sample() for a given seed.
Mat draw_initial_noise(Index rows, Index cols, std::uint64_t seed);

/// v(x_t, t) in window shape.
using VelocityField = std::function<Mat(const Mat& x_t, double t)>;

VelocityField model_velocity(Denoiser& model, const Mat& mask, const SpatialShape& space);

/// Masked cells start from draw_initial_noise(seed), observed cells from
/// x_observed; `steps` uniform Euler steps from t = 1 down to 0.
Mat sample(const VelocityField& v, const Mat& x_observed, const Mat& mask, int steps, std::uint64_t seed);
Mat sample(Denoiser& model, const SpatialShape& space, const Mat& x_observed, const Mat& mask, int steps,
           std::uint64_t seed);

struct ProbabilisticPrediction {
  Mat mean;
  std::vector<Mat> samples;
};

/// Mean of n sample() calls with seeds base_seed + i.
ProbabilisticPrediction probabilistic_predict(const VelocityField& v, const Mat& x_observed, const Mat& mask,
                                              int n_samples, int steps, std::uint64_t base_seed,
                                              bool keep_samples = true);

/// Mean over masked cells of (v_pred - v_target)^2.
double masked_velocity_loss(const Mat& v_pred, const Mat& v_target, const Mat& mask);

struct TrainItem {
  Mat x0;    // normalized window
  Mat mask;  // 1 = observed
  Split split = Split::train;
  const SpatialShape* space = nullptr;
};

/// Counts batches that carried a non-training window into a gradient step.
struct LeakCounter {
  long long leaks = 0;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// One optimizer step on a batch: per sample t ~ U[0, 1], z ~ N(0, 1),
/// network input compose(x_t, x0, M), loss pooled over every masked cell of
/// the batch. A non-train item increments `leaks` and throws.
StepResult train_step(Denoiser& model, Adam& opt, const std::vector<TrainItem>& batch, Rng& rng,
                      LeakCounter* leaks = nullptr);

}  // namespace urbandit
