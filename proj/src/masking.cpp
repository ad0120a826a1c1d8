#include "urbandit/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace urbandit {

std::string task_name(TaskKind t) {
  switch (t) {
    case TaskKind::forward_prediction: return "forward";
    case TaskKind::backward_prediction: return "backward";
    case TaskKind::temporal_interpolation: return "interp";
    case TaskKind::spatial_extrapolation: return "extrap";
    case TaskKind::st_imputation: return "impute";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  for (TaskKind t : kAllTasks)
    if (task_name(t) == name) return t;
  throw Error("unknown task '" + name + "' (expected forward|backward|interp|extrap|impute)");
}

namespace {

Mat impute_mask(Index T, Index S, double ratio, Rng& rng) {
  const Index n = T * S;
  const Index hidden = std::clamp<Index>(static_cast<Index>(std::llround(ratio * static_cast<double>(n))), 1, n - 1);
  std::vector<Index> cells(static_cast<std::size_t>(n));
  std::iota(cells.begin(), cells.end(), Index{0});
  Mat m = Mat::Ones(T, S);
  for (Index i = 0; i < hidden; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(pick(rng))]);
    m.data()[cells[static_cast<std::size_t>(i)]] = 0.0;
  }
  return m;
}

}  // namespace

Mat build_mask(const MaskSpec& spec) {
  const Index T = spec.t_steps, S = spec.locations;
  if (T < 1 || S < 1) throw Error("mask shape must be positive");
  if (!(spec.missing_ratio > 0.0 && spec.missing_ratio < 1.0))
    throw Error("missing ratio must lie in (0, 1), got " + std::to_string(spec.missing_ratio));
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.task) + 1));
  Mat m = Mat::Ones(T, S);
  switch (spec.task) {
    case TaskKind::forward_prediction:
    case TaskKind::backward_prediction: {
      if (spec.t_in < 1 || spec.t_in >= T)
        throw Error("prediction needs 1 <= t_in < T (t_in=" + std::to_string(spec.t_in) + ", T=" + std::to_string(T) + ")");
      if (spec.task == TaskKind::forward_prediction)
        m.bottomRows(T - spec.t_in).setZero();
      else
        m.topRows(T - spec.t_in).setZero();
      return m;
    }
    case TaskKind::temporal_interpolation: {
      if (spec.missing_ratio != 0.5) return impute_mask(T, S, spec.missing_ratio, rng);
      if (T < 2) throw Error("temporal interpolation needs at least 2 steps");
      for (Index t = 1; t < T; t += 2) m.row(t).setZero();
      return m;
    }
    case TaskKind::spatial_extrapolation: {
      if (S < 2) throw Error("spatial extrapolation needs more than one location");
      Index hidden = static_cast<Index>(std::ceil(spec.missing_ratio * static_cast<double>(S) - 1e-12));
      hidden = std::clamp<Index>(hidden, 1, S - 1);
      std::vector<Index> locs(static_cast<std::size_t>(S));
      std::iota(locs.begin(), locs.end(), Index{0});
      std::shuffle(locs.begin(), locs.end(), rng);
      for (Index i = 0; i < hidden; ++i) m.col(locs[static_cast<std::size_t>(i)]).setZero();
      return m;
    }
    case TaskKind::st_imputation:
      if (T * S < 2) throw Error("imputation needs at least two cells");
      return impute_mask(T, S, spec.missing_ratio, rng);
  }
  throw Error("unhandled task");
}

Mat compose(const Mat& x_noisy, const Mat& x0, const Mat& mask) {
  if (x_noisy.rows() != x0.rows() || x_noisy.cols() != x0.cols() || mask.rows() != x0.rows() || mask.cols() != x0.cols())
    throw Error("compose: shape mismatch " + shape_str(x_noisy) + ", " + shape_str(x0) + ", " + shape_str(mask));
  return (x_noisy.array() * (1.0 - mask.array()) + x0.array() * mask.array()).matrix();
}

Mat token_mask_fraction(const Mat& mask, const TokenLayout& layout) {
  const Mat patches = layout.flatten(mask);
  return (1.0 - patches.array()).rowwise().mean().matrix();
}

}  // namespace urbandit
