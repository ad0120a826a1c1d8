#include "urbandit/evaluation.hpp"

#include "urbandit/diffusion.hpp"

#include <cmath>
#include <ostream>

namespace urbandit {

namespace {

void check_metric_args(const Mat& pred, const Mat& truth, const Mat& mask, const char* fn) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || mask.rows() != pred.rows() ||
      mask.cols() != pred.cols())
    throw Error(std::string(fn) + ": shape mismatch " + shape_str(pred) + " / " + shape_str(truth) + " / " +
                shape_str(mask));
  if ((mask.array() == 0.0).count() == 0) throw Error(std::string(fn) + ": mask has no target cells");
}

}  // namespace

double rmse(const Mat& pred, const Mat& truth, const Mat& mask) {
  check_metric_args(pred, truth, mask, "rmse");
  const auto target = (mask.array() == 0.0).cast<double>();
  return std::sqrt(((pred - truth).array().square() * target).sum() / target.sum());
}

double mae(const Mat& pred, const Mat& truth, const Mat& mask) {
  check_metric_args(pred, truth, mask, "mae");
  const auto target = (mask.array() == 0.0).cast<double>();
  return ((pred - truth).array().abs() * target).sum() / target.sum();
}

Mat historical_average(const Mat& history, Index horizon, Index period, Index start_offset) {
  if (period < 1) throw Error("historical_average: period must be >= 1");
  if (history.rows() < period)
    throw Error("historical_average: history of " + std::to_string(history.rows()) +
                " steps is shorter than one period (" + std::to_string(period) + ")");
  if (start_offset < 0) start_offset = history.rows();
  Mat sums = Mat::Zero(period, history.cols());
  std::vector<Index> counts(static_cast<std::size_t>(period), 0);
  for (Index t = 0; t < history.rows(); ++t) {
    sums.row(t % period) += history.row(t);
    ++counts[static_cast<std::size_t>(t % period)];
  }
  Mat out(horizon, history.cols());
  for (Index i = 0; i < horizon; ++i) {
    const Index ph = (start_offset + i) % period;
    out.row(i) = sums.row(ph) / static_cast<double>(counts[static_cast<std::size_t>(ph)]);
  }
  return out;
}

Mat copy_last_observed(const Mat& observed, const Mat& mask) {
  if (observed.rows() != mask.rows() || observed.cols() != mask.cols())
    throw Error("copy_last_observed: shape mismatch");
  const Index T = observed.rows(), S = observed.cols();
  const double n_obs = mask.sum();
  const double global = n_obs > 0 ? observed.cwiseProduct(mask).sum() / n_obs : 0.0;
  Mat out = observed;
  for (Index t = 0; t < T; ++t) {
    const double row_obs = mask.row(t).sum();
    const double row_mean = row_obs > 0 ? observed.row(t).cwiseProduct(mask.row(t)).sum() / row_obs : global;
    for (Index s = 0; s < S; ++s) {
      if (mask(t, s) != 0.0) continue;
      Index src = -1;
      for (Index u = t - 1; u >= 0 && src < 0; --u)
        if (mask(u, s) != 0.0) src = u;
      for (Index u = t + 1; u < T && src < 0; ++u)
        if (mask(u, s) != 0.0) src = u;
      out(t, s) = src >= 0 ? observed(src, s) : row_mean;
    }
  }
  return out;
}

Prediction HistoricalAveragePredictor::predict(const Mat& observed, const Mat&, const WindowContext& ctx) {
  const Dataset& ds = *ctx.dataset;
  const Index period = period_ > 0 ? period_ : ds.manifest.steps_per_day();
  const Index train_end = train_segment_end(ds.normalized.rows(), ds.split_ratios);
  return {historical_average(ds.normalized.topRows(train_end), observed.rows(), period, ctx.window_start), {}};
}

Prediction CopyLastObservedPredictor::predict(const Mat& observed, const Mat& mask, const WindowContext&) {
  return {copy_last_observed(observed, mask), {}};
}

Prediction DiffusionPredictor::predict(const Mat& observed, const Mat& mask, const WindowContext& ctx) {
  const SpatialShape space = SpatialShape::of(*ctx.dataset);
  auto p = probabilistic_predict(model_velocity(model_, mask, space), observed, mask, n_samples_, steps_, ctx.seed, keep_);
  return {std::move(p.mean), std::move(p.samples)};
}

MaskSpec EvalOptions::mask_spec(Index locations, std::uint64_t mask_seed) const {
  MaskSpec m;
  m.task = task;
  m.t_steps = window_length();
  m.locations = locations;
  m.t_in = t_in;
  m.t_out = t_out;
  m.missing_ratio = missing_ratio;
  m.seed = mask_seed;
  return m;
}

std::uint64_t window_mask_seed(std::uint64_t seed, Index window_start) {
  return mix_seed(seed, static_cast<std::uint64_t>(window_start));
}

std::uint64_t window_sample_seed(std::uint64_t seed, Index window_start) {
  return mix_seed(mix_seed(seed, 0x5EED), static_cast<std::uint64_t>(window_start));
}

std::vector<Index> evaluation_starts(const Dataset& ds, const EvalOptions& opt) {
  if (opt.window_stride < 1) throw Error("evaluate: window_stride must be >= 1");
  std::vector<Index> starts = enumerate_starts(ds, opt.split, opt.window_length(), opt.window_stride);
  if (starts.empty())
    throw Error("dataset '" + ds.manifest.name + "': " + to_string(opt.split) + " split has no evaluation window");
  if (opt.max_windows > 0 && static_cast<Index>(starts.size()) > opt.max_windows) {
    std::vector<Index> picked;
    const double stepw = static_cast<double>(starts.size()) / static_cast<double>(opt.max_windows);
    for (Index i = 0; i < opt.max_windows; ++i)
      picked.push_back(starts[static_cast<std::size_t>(std::floor(static_cast<double>(i) * stepw))]);
    starts = std::move(picked);
  }
  return starts;
}

EvalReport evaluate(Predictor& predictor, const Dataset& ds, const EvalOptions& opt, int n_samples) {
  const Index T = opt.window_length(), S = ds.manifest.locations();
  EvalReport rep;
  rep.dataset = ds.manifest.name;
  rep.task = task_name(opt.task);
  rep.predictor = predictor.name();
  rep.n_samples = n_samples;
  rep.seed = opt.seed;
  rep.original_units = opt.original_units;

  Mat sq = Mat::Zero(T, 1), ab = Mat::Zero(T, 1);
  std::vector<Index> cnt(static_cast<std::size_t>(T), 0);
  for (Index start : evaluation_starts(ds, opt)) {
    const Mat x0 = ds.window(start, T);
    const Mat mask = build_mask(opt.mask_spec(S, window_mask_seed(opt.seed, start)));
    const Mat observed = x0.cwiseProduct(mask);
    WindowContext ctx{&ds, opt.task, start, window_sample_seed(opt.seed, start)};
    Prediction pred = predictor.predict(observed, mask, ctx);
    if (pred.mean.rows() != T || pred.mean.cols() != S)
      throw Error("predictor '" + predictor.name() + "' returned " + shape_str(pred.mean) + ", expected " +
                  std::to_string(T) + "x" + std::to_string(S));
    const Mat p = opt.original_units ? ds.stats.denormalize(pred.mean) : pred.mean;
    const Mat truth = opt.original_units ? ds.stats.denormalize(x0) : x0;
    for (Index t = 0; t < T; ++t)
      for (Index s = 0; s < S; ++s) {
        if (mask(t, s) != 0.0) continue;
        const double e = p(t, s) - truth(t, s);
        sq(t, 0) += e * e;
        ab(t, 0) += std::abs(e);
        ++cnt[static_cast<std::size_t>(t)];
      }
    ++rep.n_windows;
    if (opt.keep_windows) rep.windows.push_back({start, x0, mask, std::move(pred)});
  }
  for (Index t = 0; t < T; ++t) {
    const Index c = cnt[static_cast<std::size_t>(t)];
    rep.n_cells += c;
    if (c > 0) rep.per_step.push_back({t, std::sqrt(sq(t, 0) / c), ab(t, 0) / c, c});
  }
  if (rep.n_cells == 0) throw Error("evaluate: no target cells");
  rep.rmse = std::sqrt(sq.sum() / static_cast<double>(rep.n_cells));
  rep.mae = ab.sum() / static_cast<double>(rep.n_cells);
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"dataset", dataset},     {"task", task},           {"predictor", predictor},
                      {"rmse", rmse},           {"mae", mae},             {"n_windows", n_windows},
                      {"n_cells", n_cells},     {"n_samples", n_samples}, {"seed", seed},
                      {"units", original_units ? "original" : "normalized"}};
  return j;
}

void EvalReport::write_horizon_table(std::ostream& os) const {
  os << "step\trmse\tmae\tcount\n";
  for (const auto& r : per_step) os << r.step << '\t' << r.rmse << '\t' << r.mae << '\t' << r.count << '\n';
}

}  // namespace urbandit
