#include "urbandit/optimizer.hpp"

#include <cmath>

namespace urbandit {

double global_grad_norm(const std::vector<ad::Parameter*>& params) {
  double s = 0.0;
  for (const auto* p : params) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0) throw Error("adam: learning rate must be positive");
  for (const auto* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

double Adam::step() {
  const double norm = global_grad_norm(params_);
  if (!std::isfinite(norm)) throw Error("adam: non-finite gradient");
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    const auto g = (p.grad.array() * clip).eval();
    m_[i].array() = cfg_.beta1 * m_[i].array() + (1.0 - cfg_.beta1) * g;
    v_[i].array() = cfg_.beta2 * v_[i].array() + (1.0 - cfg_.beta2) * g.square();
    p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

}  // namespace urbandit
