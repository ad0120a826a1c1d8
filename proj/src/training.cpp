#include "urbandit/training.hpp"

#include "urbandit/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

namespace urbandit {

void TrainPlan::check() const {
  if (datasets.empty()) throw Error("train plan: no datasets");
  if (tasks.empty()) throw Error("train plan: no tasks");
  for (const auto& d : datasets)
    if (!d) throw Error("train plan: null dataset");
  if (max_epochs < 1) throw Error("train plan: max_epochs must be >= 1");
  if (iterations_per_epoch < 1) throw Error("train plan: iterations_per_epoch must be >= 1");
  if (patience < 1) throw Error("train plan: patience must be >= 1");
  if (batch_min < 1 || batch_max < batch_min || batch_size < 1) throw Error("train plan: invalid batch sizes");
  if (val_samples < 1 || val_steps < 1) throw Error("train plan: invalid validation settings");
}

std::vector<Index> batch_sizes(const TrainPlan& plan) {
  std::vector<double> counts;
  for (const auto& d : plan.datasets) {
    const Index n = d->splits(plan.window_length()).train.count();
    if (n < 1)
      throw Error("dataset '" + d->manifest.name + "' has no training window of length " +
                  std::to_string(plan.window_length()));
    counts.push_back(static_cast<double>(n));
  }
  double mean = 0.0;
  for (double c : counts) mean += c;
  mean /= static_cast<double>(counts.size());
  std::vector<Index> out;
  for (double c : counts) {
    const auto b = static_cast<Index>(std::llround(static_cast<double>(plan.batch_size) * c / mean));
    out.push_back(std::clamp(b, plan.batch_min, plan.batch_max));
  }
  return out;
}

std::pair<std::size_t, std::size_t> draw_pair(std::size_t n_datasets, std::size_t n_tasks, Rng& rng) {
  if (n_datasets == 0 || n_tasks == 0) throw Error("draw_pair: empty dataset or task list");
  std::uniform_int_distribution<std::size_t> d(0, n_datasets - 1), t(0, n_tasks - 1);
  const std::size_t di = d(rng);
  return {di, t(rng)};
}

std::pair<std::size_t, std::size_t> draw_pair(const TrainPlan& plan, Rng& rng) {
  return draw_pair(plan.datasets.size(), plan.tasks.size(), rng);
}

void RunRecord::write_jsonl(std::ostream& os) const {
  for (const auto& r : iterations)
    os << nlohmann::json{{"iteration", r.iteration}, {"epoch", r.epoch}, {"dataset", r.dataset}, {"task", r.task},
                         {"loss", r.loss}}
              .dump()
       << '\n';
}

void RunRecord::write_epoch_table(std::ostream& os) const {
  os << "epoch\ttrain_loss\tval_rmse\timproved";
  if (!epochs.empty())
    for (const auto& [k, v] : epochs.front().val_detail) os << '\t' << k;
  os << '\n';
  for (const auto& e : epochs) {
    os << e.epoch << '\t' << e.train_loss << '\t' << e.val_rmse << '\t' << (e.improved ? 1 : 0);
    for (const auto& [k, v] : e.val_detail) os << '\t' << v;
    os << '\n';
  }
}

bool EarlyStopper::update(double value) {
  if (value < best_ - min_delta_) {
    best_ = value;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

EpochRecord validate(Denoiser& model, const TrainPlan& plan) {
  EpochRecord e;
  double sum = 0.0;
  for (const auto& ds : plan.datasets)
    for (TaskKind task : plan.tasks) {
      EvalOptions opt;
      opt.task = task;
      opt.t_in = plan.t_in;
      opt.t_out = plan.t_out;
      opt.missing_ratio = plan.missing_ratio;
      opt.split = Split::val;
      opt.max_windows = plan.val_windows;
      opt.seed = plan.seed;
      opt.original_units = false;
      DiffusionPredictor pred(model, plan.val_samples, plan.val_steps);
      const double r = evaluate(pred, *ds, opt, plan.val_samples).rmse;
      e.val_detail.emplace_back(ds->manifest.name + "/" + task_name(task), r);
      sum += r;
    }
  e.val_rmse = sum / static_cast<double>(e.val_detail.size());
  return e;
}

namespace {

Checkpoint make_checkpoint(const Denoiser& model, const TrainPlan& plan, int epoch) {
  Checkpoint ck = Checkpoint::capture(model);
  for (const auto& d : plan.datasets) ck.norm[d->manifest.name] = d->stats;
  ck.meta["epoch"] = epoch;
  ck.meta["t_in"] = plan.t_in;
  ck.meta["t_out"] = plan.t_out;
  return ck;
}

}  // namespace

TrainResult train(const TrainPlan& plan, Denoiser& model) {
  plan.check();
  const Index W = plan.window_length();
  const std::vector<Index> batches = batch_sizes(plan);
  std::vector<SpatialShape> spaces;
  for (const auto& d : plan.datasets) spaces.push_back(SpatialShape::of(*d));
  if (!plan.out_dir.empty()) std::filesystem::create_directories(plan.out_dir);

  Rng rng(mix_seed(plan.seed, 0x7A));
  Adam opt(model.parameters(), plan.adam);
  EarlyStopper stopper(plan.patience, plan.min_delta);
  LeakCounter leaks;
  TrainResult res;
  long long iteration = 0;

  for (int epoch = 1; epoch <= plan.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int it = 0; it < plan.iterations_per_epoch; ++it, ++iteration) {
      const auto [di, ti] = draw_pair(plan, rng);
      const Dataset& ds = *plan.datasets[di];
      const TaskKind task = plan.tasks[ti];
      std::vector<STSample> samples = sample_windows(ds, Split::train, W, batches[di], rng());
      std::vector<TrainItem> items;
      for (auto& s : samples) {
        MaskSpec ms{task, W, ds.manifest.locations(), plan.t_in, plan.t_out, plan.missing_ratio, rng()};
        items.push_back({std::move(s.values), build_mask(ms), s.split, &spaces[di]});
      }
      const StepResult r = train_step(model, opt, items, rng, &leaks);
      loss_sum += r.loss;
      res.record.iterations.push_back({iteration, epoch, ds.manifest.name, task_name(task), r.loss});
    }

    EpochRecord er;
    if (plan.validate) er = validate(model, plan);
    er.epoch = epoch;
    er.train_loss = loss_sum / plan.iterations_per_epoch;
    if (!plan.validate) er.val_rmse = er.train_loss;
    er.improved = stopper.update(er.val_rmse);
    if (er.improved) {
      res.best = model;
      res.record.best_epoch = epoch;
      if (!plan.out_dir.empty()) {
        const auto path = plan.out_dir / "best.ckpt";
        save_checkpoint(path, make_checkpoint(model, plan, epoch));
        res.record.best_checkpoint = path.string();
      }
    }
    res.record.epochs.push_back(er);
    res.epochs_run = epoch;
    if (plan.log)
      *plan.log << "epoch " << epoch << " train_loss " << er.train_loss << " val_rmse " << er.val_rmse
                << (er.improved ? " *" : "") << std::endl;
    if (stopper.should_stop()) {
      res.early_stopped = epoch < plan.max_epochs;
      break;
    }
  }
  res.leaks = leaks.leaks;

  if (!plan.out_dir.empty()) {
    std::ofstream jl(plan.out_dir / "run.jsonl");
    res.record.write_jsonl(jl);
    std::ofstream et(plan.out_dir / "epochs.tsv");
    res.record.write_epoch_table(et);
    save_checkpoint(plan.out_dir / "last.ckpt", make_checkpoint(model, plan, res.epochs_run));
  }
  return res;
}

Index apply_few_shot(Dataset& ds, double fraction, Index window_length) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("few-shot fraction must lie in (0, 1]");
  ds.train_window_limit = 0;
  const Index n = ds.splits(window_length).train.count();
  const auto keep = static_cast<Index>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (keep < 1)
    throw Error("few-shot fraction " + std::to_string(fraction) + " leaves no training window of dataset '" +
                ds.manifest.name + "' (" + std::to_string(n) + " available)");
  ds.train_window_limit = keep;
  return keep;
}

TrainResult few_shot(TrainPlan plan, double fraction, const std::string& target, Denoiser& model) {
  bool found = false;
  for (auto& d : plan.datasets) {
    if (!d || d->manifest.name != target) continue;
    d = std::make_shared<Dataset>(*d);
    apply_few_shot(*d, fraction, plan.window_length());
    found = true;
  }
  if (!found) throw Error("few-shot target '" + target + "' is not part of the plan");
  return train(plan, model);
}

EvalReport zero_shot(Denoiser& model, const Dataset& target, const EvalOptions& opt, int n_samples, int steps) {
  DiffusionPredictor pred(model, n_samples, steps);
  return evaluate(pred, target, opt, n_samples);
}

}  // namespace urbandit
