#include "urbandit/masking.hpp"

#include <doctest.h>

#include <cmath>

using namespace urbandit;

namespace {

MaskSpec spec(TaskKind task, Index T, Index S, std::uint64_t seed = 0) {
  MaskSpec m;
  m.task = task;
  m.t_steps = T;
  m.locations = S;
  m.t_in = T / 2;
  m.t_out = T - T / 2;
  m.seed = seed;
  return m;
}

}  // namespace

TEST_CASE("task names round trip") {
  for (TaskKind t : kAllTasks) CHECK(parse_task(task_name(t)) == t);
  CHECK(task_name(TaskKind::temporal_interpolation) == "interp");
  CHECK_THROWS_AS(parse_task("nowcast"), Error);
}

TEST_CASE("forward and backward masks") {
  MaskSpec s = spec(TaskKind::forward_prediction, 4, 3);
  s.t_in = 2;
  s.t_out = 2;
  const Mat f = build_mask(s);
  for (Index t = 0; t < 4; ++t)
    for (Index j = 0; j < 3; ++j) CHECK(f(t, j) == (t < 2 ? 1.0 : 0.0));
  s.task = TaskKind::backward_prediction;
  const Mat b = build_mask(s);
  for (Index t = 0; t < 4; ++t)
    for (Index j = 0; j < 3; ++j) CHECK(b(t, j) == (t >= 2 ? 1.0 : 0.0));
}

TEST_CASE("interpolation keeps even steps") {
  const Mat m = build_mask(spec(TaskKind::temporal_interpolation, 6, 2));
  const double expect[] = {1, 0, 1, 0, 1, 0};
  for (Index t = 0; t < 6; ++t) CHECK(m.row(t).minCoeff() == expect[t]);
  for (Index t = 0; t < 6; ++t) CHECK(m.row(t).maxCoeff() == expect[t]);
}

TEST_CASE("extrapolation hides whole locations") {
  MaskSpec s = spec(TaskKind::spatial_extrapolation, 5, 4);
  const Mat m = build_mask(s);
  int hidden = 0;
  for (Index j = 0; j < 4; ++j) {
    CHECK(m.col(j).minCoeff() == m.col(j).maxCoeff());
    hidden += m(0, j) == 0.0;
  }
  CHECK(hidden == 2);
  s.missing_ratio = 0.3;
  s.locations = 10;
  const Mat m2 = build_mask(s);
  CHECK((m2.row(0).array() == 0.0).count() == 3);
  s.missing_ratio = 0.31;
  CHECK((build_mask(s).row(0).array() == 0.0).count() == 4);  // ceil
  s.locations = 1;
  CHECK_THROWS_AS(build_mask(s), Error);
}

TEST_CASE("imputation ratio and determinism") {
  MaskSpec s = spec(TaskKind::st_imputation, 24, 64, 5);
  const Mat a = build_mask(s), b = build_mask(s);
  CHECK(a == b);
  s.seed = 6;
  CHECK(build_mask(s) != a);
  const double n = 24 * 64;
  double total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    s.seed = seed;
    const Mat m = build_mask(s);
    const double miss = (m.array() == 0.0).count();
    CHECK(std::abs(miss - 0.5 * n) <= 3 * std::sqrt(n * 0.25));
    CHECK(miss == 0.5 * n);
    total += miss;
  }
  CHECK(total / (200 * n) == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("invalid ratios are rejected") {
  MaskSpec s = spec(TaskKind::st_imputation, 4, 4);
  s.missing_ratio = 0.0;
  CHECK_THROWS_AS(build_mask(s), Error);
  s.missing_ratio = 1.0;
  CHECK_THROWS_AS(build_mask(s), Error);
}

TEST_CASE("masks always contain an observed and a target cell") {
  for (TaskKind t : kAllTasks)
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const Mat m = build_mask(spec(t, 4, 2, seed));
      CHECK(m.maxCoeff() == 1.0);
      CHECK(m.minCoeff() == 0.0);
    }
}

TEST_CASE("compose") {
  Mat m(1, 2), x0(1, 2), xn(1, 2);
  m << 1, 0;
  x0 << 5, 7;
  xn << 9, 9;
  const Mat c = compose(xn, x0, m);
  CHECK(c(0, 0) == 5);
  CHECK(c(0, 1) == 9);
  CHECK(compose(xn, x0, Mat::Ones(1, 2)) == x0);
  CHECK(compose(xn, x0, Mat::Zero(1, 2)) == xn);
  CHECK_THROWS_AS(compose(xn, Mat::Zero(2, 2), m), Error);
}

TEST_CASE("token mask fraction") {
  const auto l = TokenLayout::make(SpatialShape::grid(2, 2), 4, {2, 2, 1});
  CHECK(token_mask_fraction(Mat::Zero(4, 4), l).minCoeff() == 1.0);
  MaskSpec s = spec(TaskKind::forward_prediction, 4, 4);
  s.t_in = 2;
  const Mat fr = token_mask_fraction(build_mask(s), l);
  CHECK(fr(0, 0) == 0.0);
  CHECK(fr(1, 0) == 1.0);
  const auto g = TokenLayout::make(SpatialShape::graph(Mat::Zero(1, 1)), 2, {2, 1, 1});
  Mat m(2, 1);
  m << 1, 0;
  CHECK(token_mask_fraction(m, g)(0, 0) == 0.5);
}
