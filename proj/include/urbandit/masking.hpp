#pragma once

#include "urbandit/tokenizer.hpp"

#include <cstdint>
#include <string>

namespace urbandit {

enum class TaskKind { forward_prediction, backward_prediction, temporal_interpolation, spatial_extrapolation, st_imputation };

inline constexpr TaskKind kAllTasks[] = {TaskKind::forward_prediction, TaskKind::backward_prediction,
                                         TaskKind::temporal_interpolation, TaskKind::spatial_extrapolation,
                                         TaskKind::st_imputation};

/// CLI/config names: forward, backward, interp, extrap, impute.
std::string task_name(TaskKind t);
TaskKind parse_task(const std::string& name);

struct MaskSpec {
  TaskKind task = TaskKind::forward_prediction;
  Index t_steps = 24;
  Index locations = 1;
  Index t_in = 12;  // observed steps for forward/backward prediction
  Index t_out = 12;
  double missing_ratio = 0.5;
  std::uint64_t seed = 0;
};

/// T x S observability mask, 1 = observed, 0 = target.
///
/// forward: first t_in steps observed. backward: last t_in steps observed.
/// interp: even steps observed (ratio 0.5; any other ratio is routed to the
/// imputation pattern). extrap: ceil(ratio * S) random locations hidden at
/// every step. impute: round(ratio * T * S) cells hidden uniformly at random.
Mat build_mask(const MaskSpec& spec);

/// x_noisy * (1 - M) + x0 * M, elementwise.
Mat compose(const Mat& x_noisy, const Mat& x0, const Mat& mask);

/// Fraction of masked (M = 0) cells inside each token's patch; L x 1.
Mat token_mask_fraction(const Mat& mask, const TokenLayout& layout);

}  // namespace urbandit
