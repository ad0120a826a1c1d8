#include "urbandit/diffusion.hpp"

#include "urbandit/masking.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace urbandit;
using testutil::random_mat;

namespace {

ModelConfig small_model() {
  ModelConfig c = ModelConfig::from_preset("S");
  c.dim = 16;
  c.layers = 1;
  c.heads = 2;
  c.pool_size = 8;
  c.seed = 3;
  return c;
}

Mat mask_for(TaskKind task, Index T, Index S, std::uint64_t seed = 0) {
  MaskSpec s;
  s.task = task;
  s.t_steps = T;
  s.locations = S;
  s.t_in = T / 2;
  s.t_out = T - T / 2;
  s.seed = seed;
  return build_mask(s);
}

}  // namespace

TEST_CASE("rectified-flow interpolation") {
  const Mat x0 = random_mat(3, 4, 1), z = random_mat(3, 4, 2);
  CHECK(rf_interpolate(x0, z, 0.0).x_t == x0);
  CHECK(rf_interpolate(x0, z, 1.0).x_t == z);
  CHECK(rf_interpolate(x0, z, 0.3).v_target == z - x0);
  const auto same = rf_interpolate(x0, x0, 0.6);
  CHECK((same.x_t - x0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(same.v_target.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(rf_interpolate(x0, Mat::Zero(2, 2), 0.5), Error);
}

TEST_CASE("Euler sampling is exact on the straight path") {
  const Index T = 8, S = 6;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Mat x0 = random_mat(T, S, 10 + seed);
    const Mat mask = mask_for(TaskKind::st_imputation, T, S, seed);
    const Mat obs = x0.cwiseProduct(mask);
    const Mat z = draw_initial_noise(T, S, seed);
    const VelocityField v = [&](const Mat&, double) { return Mat(z - x0); };
    for (int steps : {1, 5, 20}) {
      const Mat out = sample(v, obs, mask, steps, seed);
      for (Index i = 0; i < out.size(); ++i) {
        if (mask.data()[i] != 0.0)
          CHECK(out.data()[i] == obs.data()[i]);
        else
          CHECK(std::abs(out.data()[i] - x0.data()[i]) < 1e-10);
      }
    }
  }
}

TEST_CASE("sampler conditioning with a real model") {
  Denoiser m(small_model());
  const SpatialShape space = SpatialShape::grid(4, 4);
  const Mat x0 = random_mat(4, 16, 20);
  Mat mask = Mat::Ones(4, 16);
  mask(2, 5) = 0;
  const Mat obs = x0.cwiseProduct(mask);
  const Mat out = sample(m, space, obs, mask, 3, 7);
  for (Index i = 0; i < out.size(); ++i)
    if (mask.data()[i] != 0.0) CHECK(out.data()[i] == obs.data()[i]);
  CHECK(out(2, 5) != obs(2, 5));

  const Mat imask = mask_for(TaskKind::st_imputation, 4, 16, 1);
  const Mat a = sample(m, space, x0.cwiseProduct(imask), imask, 4, 1);
  const Mat b = sample(m, space, x0.cwiseProduct(imask), imask, 4, 2);
  CHECK(sample(m, space, x0.cwiseProduct(imask), imask, 4, 1) == a);
  for (Index i = 0; i < a.size(); ++i) {
    if (imask.data()[i] != 0.0)
      CHECK(a.data()[i] == b.data()[i]);
    else
      CHECK(a.data()[i] != b.data()[i]);
  }
  CHECK_THROWS_AS(sample(m, space, obs, mask, 0, 1), Error);
}

TEST_CASE("probabilistic prediction averages independent samples") {
  Denoiser m(small_model());
  const SpatialShape space = SpatialShape::grid(4, 4);
  const Mat x0 = random_mat(4, 16, 21);
  const Mat mask = mask_for(TaskKind::forward_prediction, 4, 16);
  const Mat obs = x0.cwiseProduct(mask);
  const VelocityField v = model_velocity(m, mask, space);
  const auto one = probabilistic_predict(v, obs, mask, 1, 3, 40);
  CHECK(one.mean == sample(v, obs, mask, 3, 40));
  const auto p = probabilistic_predict(v, obs, mask, 5, 3, 40);
  REQUIRE(p.samples.size() == 5);
  Mat sum = Mat::Zero(4, 16);
  for (int i = 0; i < 5; ++i) {
    CHECK(p.samples[i] == sample(v, obs, mask, 3, 40 + i));
    sum += p.samples[i];
  }
  CHECK(p.mean == sum / 5.0);
  double var = 0;
  for (Index i = 0; i < x0.size(); ++i) {
    if (mask.data()[i] != 0.0) {
      CHECK(p.mean.data()[i] == doctest::Approx(obs.data()[i]).epsilon(1e-14));
      continue;
    }
    for (const auto& s : p.samples) var += std::pow(s.data()[i] - p.mean.data()[i], 2);
  }
  CHECK(var > 0);
}

TEST_CASE("masked loss ignores observed cells") {
  const Mat target = random_mat(3, 3, 30), mask = mask_for(TaskKind::st_imputation, 3, 3, 4);
  CHECK(masked_velocity_loss(target, target, mask) == 0.0);
  const Mat pred = random_mat(3, 3, 31);
  Mat moved = pred;
  for (Index i = 0; i < moved.size(); ++i)
    if (mask.data()[i] != 0.0) moved.data()[i] += 5.0;
  CHECK(masked_velocity_loss(moved, target, mask) == masked_velocity_loss(pred, target, mask));
  // Finite differences w.r.t. v_pred vanish on observed cells.
  for (Index i = 0; i < pred.size(); ++i) {
    Mat p1 = pred, p2 = pred;
    p1.data()[i] += 1e-5;
    p2.data()[i] -= 1e-5;
    const double d = (masked_velocity_loss(p1, target, mask) - masked_velocity_loss(p2, target, mask)) / 2e-5;
    if (mask.data()[i] != 0.0) CHECK(d == 0.0);
  }
  CHECK_THROWS_AS(masked_velocity_loss(pred, target, Mat::Ones(3, 3)), Error);
}

TEST_CASE("train_step reports the pooled masked loss and updates parameters") {
  Denoiser m(small_model());
  Denoiser before = m;
  Adam opt(m.parameters());
  const SpatialShape space = SpatialShape::grid(4, 4);
  std::vector<TrainItem> batch;
  for (int i = 0; i < 2; ++i)
    batch.push_back({random_mat(4, 16, 50 + i), mask_for(TaskKind::st_imputation, 4, 16, i), Split::train, &space});

  Rng rng(9), replay(9);
  const StepResult r = train_step(m, opt, batch, rng);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double sq = 0, n = 0;
  for (const auto& it : batch) {
    const double t = unif(replay);
    const Mat z = standard_normal(4, 16, replay);
    const auto p = rf_interpolate(it.x0, z, t);
    const Mat v = before.predict_velocity(compose(p.x_t, it.x0, it.mask), it.mask, t, space);
    sq += ((v - p.v_target).array().square() * (1.0 - it.mask.array())).sum();
    n += (1.0 - it.mask.array()).sum();
  }
  CHECK(r.loss == doctest::Approx(sq / n).epsilon(1e-12));
  CHECK(m.param("head.grid.w").value != before.param("head.grid.w").value);
}

TEST_CASE("train_step guards") {
  Denoiser m(small_model());
  Adam opt(m.parameters());
  const SpatialShape space = SpatialShape::grid(4, 4);
  Rng rng(1);
  LeakCounter leaks;
  std::vector<TrainItem> val = {{random_mat(4, 16, 1), mask_for(TaskKind::forward_prediction, 4, 16), Split::val, &space}};
  CHECK_THROWS_AS(train_step(m, opt, val, rng, &leaks), Error);
  CHECK(leaks.leaks == 1);
  std::vector<TrainItem> full = {{random_mat(4, 16, 1), Mat::Ones(4, 16), Split::train, &space}};
  CHECK_THROWS_AS(train_step(m, opt, full, rng, &leaks), Error);
  CHECK(leaks.leaks == 1);
}

TEST_CASE("Adam clips the global gradient norm") {
  ad::Parameter p("p", Mat::Zero(1, 2));
  p.grad << 30, 40;
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt({&p}, cfg);
  CHECK(opt.step() == doctest::Approx(50.0));
  // First Adam step moves each coordinate by lr regardless of scale.
  CHECK(p.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("RF config validation") {
  RFConfig c;
  c.validate();
  c.inference_steps = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.inference_steps = 501;
  CHECK_THROWS_AS(c.validate(), Error);
}
