#pragma once

#include "urbandit/autodiff.hpp"

#include <vector>

namespace urbandit {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
};

double global_grad_norm(const std::vector<ad::Parameter*>& params);

/// Adam without weight decay. Moment buffers are tied to the parameter list
/// passed at construction.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig cfg = {});

  /// Clips, applies one update and returns the pre-clip gradient norm.
  double step();
  long long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long long t_ = 0;
};

}  // namespace urbandit
