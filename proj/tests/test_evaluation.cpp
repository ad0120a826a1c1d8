#include "urbandit/evaluation.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace urbandit;

namespace {

class OraclePredictor : public Predictor {
 public:
  std::string name() const override { return "oracle"; }
  Prediction predict(const Mat& observed, const Mat&, const WindowContext& ctx) override {
    return {ctx.dataset->window(ctx.window_start, observed.rows()), {}};
  }
};

class ZeroPredictor : public Predictor {
 public:
  std::string name() const override { return "zero"; }
  Prediction predict(const Mat& observed, const Mat&, const WindowContext&) override {
    return {Mat::Zero(observed.rows(), observed.cols()), {}};
  }
};

Dataset small_grid(std::uint64_t seed = 3) {
  GridSynthParams p;
  p.height = 4;
  p.width = 4;
  p.t_total = 300;
  p.period = 12;
  p.seed = seed;
  return gen_synthetic_grid(p, "eval_grid");
}

}  // namespace

TEST_CASE("rmse and mae over masked cells") {
  Mat pred(1, 3), truth(1, 3), mask(1, 3);
  pred << 0, 0, 100;
  truth << 1, 3, 0;
  mask << 0, 0, 1;
  CHECK(rmse(pred, truth, mask) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
  CHECK(mae(pred, truth, mask) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(rmse(pred, truth, Mat::Ones(1, 3)), Error);
  CHECK_THROWS_AS(mae(pred, truth, Mat::Zero(2, 3)), Error);
}

TEST_CASE("historical average examples") {
  Mat h(4, 1);
  h << 1, 3, 1, 3;
  Mat f = historical_average(h, 2, 2);
  CHECK(f(0, 0) == 1.0);
  CHECK(f(1, 0) == 3.0);
  h << 1, 3, 5, 7;
  f = historical_average(h, 2, 2);
  CHECK(f(0, 0) == 3.0);
  CHECK(f(1, 0) == 5.0);
  f = historical_average(Mat::Constant(10, 2, 4.5), 7, 3);
  CHECK((f.array() == 4.5).all());
  f = historical_average(h, 1, 2, 3);
  CHECK(f(0, 0) == 5.0);
  CHECK_THROWS_AS(historical_average(h, 2, 5), Error);
  CHECK_THROWS_AS(historical_average(h, 2, 0), Error);
}

TEST_CASE("historical average through the harness matches a direct computation") {
  const Dataset ds = small_grid();
  EvalOptions opt;
  opt.t_in = 6;
  opt.t_out = 6;
  opt.original_units = false;
  opt.keep_windows = true;
  opt.max_windows = 5;
  HistoricalAveragePredictor ha(12);
  const EvalReport rep = evaluate(ha, ds, opt);
  REQUIRE(rep.windows.size() == 5);
  const Index train_end = train_segment_end(ds.normalized.rows(), ds.split_ratios);
  double sq = 0;
  Index n = 0;
  for (const auto& w : rep.windows) {
    for (Index i = 0; i < 12; ++i)
      for (Index s = 0; s < 16; ++s) {
        double sum = 0;
        int c = 0;
        for (Index t = (w.start + i) % 12; t < train_end; t += 12) {
          sum += ds.normalized(t, s);
          ++c;
        }
        CHECK(w.prediction.mean(i, s) == doctest::Approx(sum / c).epsilon(1e-12));
        if (w.mask(i, s) == 0.0) {
          sq += std::pow(sum / c - w.truth(i, s), 2);
          ++n;
        }
      }
  }
  CHECK(rep.n_cells == n);
  CHECK(rep.rmse == doctest::Approx(std::sqrt(sq / n)).epsilon(1e-12));
}

TEST_CASE("oracle predictor scores zero on every task") {
  const Dataset ds = small_grid();
  OraclePredictor o;
  for (TaskKind t : kAllTasks) {
    EvalOptions opt;
    opt.task = t;
    opt.t_in = 6;
    opt.t_out = 6;
    opt.window_stride = 7;
    const EvalReport r = evaluate(o, ds, opt);
    CHECK(r.rmse == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.mae == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.n_cells > 0);
  }
}

TEST_CASE("evaluation is deterministic and seed-dependent for random masks") {
  const Dataset ds = small_grid();
  EvalOptions opt;
  opt.task = TaskKind::st_imputation;
  opt.t_in = 6;
  opt.t_out = 6;
  opt.seed = 11;
  CopyLastObservedPredictor c;
  const EvalReport a = evaluate(c, ds, opt), b = evaluate(c, ds, opt);
  CHECK(a.rmse == b.rmse);
  CHECK(a.n_cells == b.n_cells);
  opt.seed = 12;
  CHECK(evaluate(c, ds, opt).rmse != a.rmse);
}

TEST_CASE("original units scale z-score errors by the standard deviation") {
  const Dataset ds = small_grid();
  EvalOptions opt;
  opt.t_in = 6;
  opt.t_out = 6;
  ZeroPredictor z;
  const double orig = evaluate(z, ds, opt).rmse;
  opt.original_units = false;
  const double norm = evaluate(z, ds, opt).rmse;
  // Predicting 0 in normalized units means predicting the training mean.
  CHECK(orig == doctest::Approx(norm * ds.stats.std).epsilon(1e-10));
}

TEST_CASE("copy-last-observed fills from the nearest observed step") {
  Mat x(4, 2), m(4, 2);
  x << 1, 10, 2, 20, 0, 0, 0, 0;
  m << 1, 1, 1, 1, 0, 0, 0, 0;
  Mat f = copy_last_observed(x, m);
  CHECK(f(2, 0) == 2.0);
  CHECK(f(3, 1) == 20.0);
  // backward: no earlier observation, take the next one
  x << 0, 0, 0, 0, 3, 30, 4, 40;
  m << 0, 0, 0, 0, 1, 1, 1, 1;
  f = copy_last_observed(x, m);
  CHECK(f(0, 0) == 3.0);
  CHECK(f(1, 1) == 30.0);
  // hidden location: mean of the observed cells at the same step
  x << 1, 0, 3, 0, 5, 0, 7, 0;
  m << 1, 0, 1, 0, 1, 0, 1, 0;
  f = copy_last_observed(x, m);
  CHECK(f(2, 1) == 5.0);
  CHECK(f(2, 0) == 5.0);
}

TEST_CASE("copy-last on backward masks mirrors the forward case in time") {
  Mat x(6, 3);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = std::sin(0.7 * i) * 3.0;
  const Mat xr = x.colwise().reverse();
  MaskSpec f{TaskKind::forward_prediction, 6, 3, 3, 3, 0.5, 1};
  MaskSpec b{TaskKind::backward_prediction, 6, 3, 3, 3, 0.5, 1};
  const Mat mf = build_mask(f), mb = build_mask(b);
  REQUIRE(mb == Mat(mf.colwise().reverse()));
  const Mat pf = copy_last_observed(x.cwiseProduct(mf), mf);
  const Mat pb = copy_last_observed(xr.cwiseProduct(mb), mb);
  CHECK(pb == Mat(pf.colwise().reverse()));
  CHECK(rmse(pf, x, mf) == doctest::Approx(rmse(pb, xr, mb)).epsilon(1e-14));
}

TEST_CASE("window stride and max_windows") {
  const Dataset ds = small_grid();
  EvalOptions opt;
  opt.t_in = 6;
  opt.t_out = 6;
  const auto all = evaluation_starts(ds, opt);
  const auto r = ds.splits(12).test;
  CHECK(static_cast<Index>(all.size()) == r.count());
  opt.window_stride = 5;
  const auto strided = evaluation_starts(ds, opt);
  CHECK(strided.front() == r.first);
  CHECK(strided[1] - strided[0] == 5);
  opt.window_stride = 1;
  opt.max_windows = 4;
  const auto few = evaluation_starts(ds, opt);
  CHECK(few.size() == 4);
  CHECK(few.front() == r.first);
  for (Index s : few) CHECK(r.contains(s));
  opt.window_stride = 0;
  CHECK_THROWS_AS(evaluation_starts(ds, opt), Error);
}

TEST_CASE("per-step table and json report") {
  const Dataset ds = small_grid();
  EvalOptions opt;
  opt.t_in = 6;
  opt.t_out = 6;
  ZeroPredictor z;
  const EvalReport r = evaluate(z, ds, opt);
  CHECK(r.per_step.size() == 6);
  CHECK(r.per_step.front().step == 6);
  std::ostringstream os;
  r.write_horizon_table(os);
  CHECK(os.str().rfind("step\trmse\tmae\tcount\n", 0) == 0);
  const auto j = r.to_json();
  CHECK(j["task"] == "forward");
  CHECK(j["units"] == "original");
}
