#include "urbandit/diffusion.hpp"

#include "urbandit/masking.hpp"

namespace urbandit {

void RFConfig::validate() const {
  if (inference_steps < 1 || inference_steps > 500) throw Error("inference_steps must lie in [1, 500]");
  if (diffusion_steps < 1) throw Error("diffusion_steps must be >= 1");
  if (n_eval_samples < 1) throw Error("n_eval_samples must be >= 1");
}

PathPoint rf_interpolate(const Mat& x0, const Mat& z, double t) {
  if (x0.rows() != z.rows() || x0.cols() != z.cols())
    throw Error("rf_interpolate: shape mismatch " + shape_str(x0) + " vs " + shape_str(z));
  if (t < 0.0 || t > 1.0) throw Error("rf_interpolate: t must lie in [0, 1]");
  return {(1.0 - t) * x0 + t * z, z - x0};
}

Mat draw_initial_noise(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5A));
  return standard_normal(rows, cols, rng);
}

VelocityField model_velocity(Denoiser& model, const Mat& mask, const SpatialShape& space) {
  return [&model, mask, &space](const Mat& x, double t) { return model.predict_velocity(x, mask, t, space); };
}

Mat sample(const VelocityField& v, const Mat& x_observed, const Mat& mask, int steps, std::uint64_t seed) {
  if (steps < 1) throw Error("sample: steps must be >= 1");
  if (mask.rows() != x_observed.rows() || mask.cols() != x_observed.cols())
    throw Error("sample: mask " + shape_str(mask) + " does not match window " + shape_str(x_observed));
  Mat x = compose(draw_initial_noise(x_observed.rows(), x_observed.cols(), seed), x_observed, mask);
  const double dt = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = 1.0 - i * dt;
    Mat vel = v(x, t);
    if (vel.rows() != x.rows() || vel.cols() != x.cols()) throw Error("sample: velocity field returned wrong shape");
    x = compose(x - dt * vel, x_observed, mask);
  }
  return x;
}

Mat sample(Denoiser& model, const SpatialShape& space, const Mat& x_observed, const Mat& mask, int steps,
           std::uint64_t seed) {
  return sample(model_velocity(model, mask, space), x_observed, mask, steps, seed);
}

ProbabilisticPrediction probabilistic_predict(const VelocityField& v, const Mat& x_observed, const Mat& mask,
                                              int n_samples, int steps, std::uint64_t base_seed, bool keep_samples) {
  if (n_samples < 1) throw Error("probabilistic_predict: n_samples must be >= 1");
  ProbabilisticPrediction out;
  Mat sum = Mat::Zero(x_observed.rows(), x_observed.cols());
  for (int i = 0; i < n_samples; ++i) {
    Mat s = sample(v, x_observed, mask, steps, base_seed + static_cast<std::uint64_t>(i));
    sum += s;
    if (keep_samples) out.samples.push_back(std::move(s));
  }
  out.mean = sum / static_cast<double>(n_samples);
  return out;
}

double masked_velocity_loss(const Mat& v_pred, const Mat& v_target, const Mat& mask) {
  if (v_pred.rows() != v_target.rows() || v_pred.cols() != v_target.cols() || mask.rows() != v_pred.rows() ||
      mask.cols() != v_pred.cols())
    throw Error("masked_velocity_loss: shape mismatch");
  const double n = (1.0 - mask.array()).sum();
  if (n <= 0) throw Error("masked_velocity_loss: mask has no target cells");
  return ((v_pred - v_target).array().square() * (1.0 - mask.array())).sum() / n;
}

StepResult train_step(Denoiser& model, Adam& opt, const std::vector<TrainItem>& batch, Rng& rng, LeakCounter* leaks) {
  if (batch.empty()) throw Error("train_step: empty batch");
  double targets = 0.0;
  for (const auto& item : batch) {
    if (item.split != Split::train) {
      if (leaks) ++leaks->leaks;
      throw Error("train_step: batch contains a " + to_string(item.split) + " window");
    }
    if (!item.space) throw Error("train_step: item without spatial shape");
    targets += (1.0 - item.mask.array()).sum();
  }
  if (targets <= 0) throw Error("train_step: masks have no target cells");

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  model.zero_grad();
  double sq = 0.0;
  for (const auto& item : batch) {
    const double t = unif(rng);
    const Mat z = standard_normal(item.x0.rows(), item.x0.cols(), rng);
    const PathPoint p = rf_interpolate(item.x0, z, t);
    const Mat input = compose(p.x_t, item.x0, item.mask);

    ad::Graph g;
    ad::Var out = model.forward(g, input, item.mask, t, *item.space);
    const TokenLayout layout = model.layout_for(input, *item.space);
    const Mat target = layout.flatten(p.v_target);
    const Mat unmasked = (1.0 - item.mask.array()).matrix();
    const Mat weight = layout.flatten(unmasked);
    const Mat diff = (out.value() - target).cwiseProduct(weight);
    sq += diff.squaredNorm();
    g.backward(out, (2.0 / targets) * diff);
  }
  StepResult r;
  r.loss = sq / targets;
  r.grad_norm = opt.step();
  return r;
}

}  // namespace urbandit
