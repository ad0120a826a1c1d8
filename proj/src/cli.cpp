#include "urbandit/cli.hpp"

#include "urbandit/array_io.hpp"
#include "urbandit/checkpoint.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace urbandit {

namespace {

std::string num(double v) {
  for (int prec : {15, 17}) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    if (prec == 17 || std::stod(os.str()) == v) return os.str();
  }
  return {};
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ",") + i;
  return s;
}

}  // namespace

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "data.datasets",         "data.tasks",          "data.t_in",           "data.t_out",
      "data.missing_ratio",    "model.preset",        "model.layers",        "model.dim",
      "model.heads",           "model.p_t",           "model.p_s",           "model.pool_size",
      "model.f_max",           "model.freq_embed_dim", "model.max_t_patches", "model.max_s_patches",
      "model.fft_mode",        "model.topk_k",        "model.disable_prompt", "model.seed",
      "train.max_epochs",      "train.patience",      "train.min_delta",     "train.iterations_per_epoch",
      "train.batch_size",      "train.batch_min",     "train.batch_max",     "train.lr",
      "train.clip_norm",       "train.val_samples",   "train.val_steps",     "train.val_windows",
      "train.seed",            "diffusion.inference_steps", "diffusion.diffusion_steps",
      "diffusion.n_eval_samples", "diffusion.seed",   "eval.window_stride",  "eval.max_windows",
      "eval.split"};
  return keys;
}

Config resolve_config(const Config& user) {
  user.reject_unknown(known_config_keys());
  const ModelConfig m = ModelConfig::from_preset(user.get_string("model.preset", "S"));
  const TrainPlan tp;
  const RFConfig rf;
  std::vector<std::string> all_tasks;
  for (TaskKind t : kAllTasks) all_tasks.push_back(task_name(t));

  Config c;
  c.set("data.datasets", "");
  c.set("data.tasks", join(all_tasks));
  c.set("data.t_in", std::to_string(tp.t_in));
  c.set("data.t_out", std::to_string(tp.t_out));
  c.set("data.missing_ratio", num(tp.missing_ratio));
  c.set("model.preset", m.preset);
  c.set("model.layers", std::to_string(m.layers));
  c.set("model.dim", std::to_string(m.dim));
  c.set("model.heads", std::to_string(m.heads));
  c.set("model.p_t", std::to_string(m.p_t));
  c.set("model.p_s", std::to_string(m.p_s));
  c.set("model.pool_size", std::to_string(m.pool_size));
  c.set("model.f_max", std::to_string(m.f_max));
  c.set("model.freq_embed_dim", std::to_string(m.freq_embed_dim));
  c.set("model.max_t_patches", std::to_string(m.max_t_patches));
  c.set("model.max_s_patches", std::to_string(m.max_s_patches));
  c.set("model.fft_mode", m.fft.name());
  c.set("model.topk_k", std::to_string(m.fft.k));
  c.set("model.disable_prompt", m.prompts.disabled());
  c.set("model.seed", std::to_string(m.seed));
  c.set("train.max_epochs", std::to_string(tp.max_epochs));
  c.set("train.patience", std::to_string(tp.patience));
  c.set("train.min_delta", num(tp.min_delta));
  c.set("train.iterations_per_epoch", std::to_string(tp.iterations_per_epoch));
  c.set("train.batch_size", std::to_string(tp.batch_size));
  c.set("train.batch_min", std::to_string(tp.batch_min));
  c.set("train.batch_max", std::to_string(tp.batch_max));
  c.set("train.lr", num(tp.adam.lr));
  c.set("train.clip_norm", num(tp.adam.clip_norm));
  c.set("train.val_samples", std::to_string(tp.val_samples));
  c.set("train.val_steps", std::to_string(tp.val_steps));
  c.set("train.val_windows", std::to_string(tp.val_windows));
  c.set("train.seed", std::to_string(tp.seed));
  c.set("diffusion.inference_steps", std::to_string(rf.inference_steps));
  c.set("diffusion.diffusion_steps", std::to_string(rf.diffusion_steps));
  c.set("diffusion.n_eval_samples", std::to_string(rf.n_eval_samples));
  c.set("diffusion.seed", std::to_string(rf.seed));
  c.set("eval.window_stride", "1");
  c.set("eval.max_windows", "0");
  c.set("eval.split", "test");
  c.merge(user);
  // Fail early on malformed values.
  model_config_from(c);
  rf_config_from(c).validate();
  return c;
}

ModelConfig model_config_from(const Config& c) {
  ModelConfig m = ModelConfig::from_preset(c.get_string("model.preset"));
  m.layers = static_cast<int>(c.get_int("model.layers"));
  m.dim = c.get_int("model.dim");
  m.heads = static_cast<int>(c.get_int("model.heads"));
  m.p_t = c.get_int("model.p_t");
  m.p_s = c.get_int("model.p_s");
  m.pool_size = c.get_int("model.pool_size");
  m.f_max = c.get_int("model.f_max");
  m.freq_embed_dim = c.get_int("model.freq_embed_dim");
  m.max_t_patches = c.get_int("model.max_t_patches");
  m.max_s_patches = c.get_int("model.max_s_patches");
  m.fft = FFTMode::parse(c.get_string("model.fft_mode"), static_cast<int>(c.get_int("model.topk_k")));
  m.prompts = PromptToggles::from_disabled(c.get_string("model.disable_prompt", ""));
  m.seed = static_cast<std::uint64_t>(c.get_int("model.seed"));
  m.validate();
  return m;
}

RFConfig rf_config_from(const Config& c) {
  RFConfig rf;
  rf.inference_steps = static_cast<int>(c.get_int("diffusion.inference_steps"));
  rf.diffusion_steps = static_cast<int>(c.get_int("diffusion.diffusion_steps"));
  rf.n_eval_samples = static_cast<int>(c.get_int("diffusion.n_eval_samples"));
  rf.seed = static_cast<std::uint64_t>(c.get_int("diffusion.seed"));
  return rf;
}

Dataset load_dataset_arg(const std::string& path) {
  std::filesystem::path p(path);
  if (std::filesystem::is_directory(p)) p /= "manifest.cfg";
  try {
    return load_dataset(p);
  } catch (const std::exception& e) {
    throw Error("failed to load dataset '" + path + "': " + e.what());
  }
}

TrainPlan plan_from(const Config& c) {
  TrainPlan p;
  for (const auto& d : c.get_list("data.datasets")) p.datasets.push_back(std::make_shared<Dataset>(load_dataset_arg(d)));
  for (const auto& t : c.get_list("data.tasks")) p.tasks.push_back(parse_task(t));
  p.t_in = c.get_int("data.t_in");
  p.t_out = c.get_int("data.t_out");
  p.missing_ratio = c.get_double("data.missing_ratio");
  p.max_epochs = static_cast<int>(c.get_int("train.max_epochs"));
  p.patience = static_cast<int>(c.get_int("train.patience"));
  p.min_delta = c.get_double("train.min_delta");
  p.iterations_per_epoch = static_cast<int>(c.get_int("train.iterations_per_epoch"));
  p.batch_size = c.get_int("train.batch_size");
  p.batch_min = c.get_int("train.batch_min");
  p.batch_max = c.get_int("train.batch_max");
  p.adam.lr = c.get_double("train.lr");
  p.adam.clip_norm = c.get_double("train.clip_norm");
  p.val_samples = static_cast<int>(c.get_int("train.val_samples"));
  p.val_steps = static_cast<int>(c.get_int("train.val_steps"));
  p.val_windows = c.get_int("train.val_windows");
  p.seed = static_cast<std::uint64_t>(c.get_int("train.seed"));
  p.check();
  return p;
}

std::vector<std::pair<std::string, PromptToggles>> ablation_variants() {
  return {{"full", PromptToggles::from_disabled("")},  {"w/o F", PromptToggles::from_disabled("f")},
          {"w/o T", PromptToggles::from_disabled("t")}, {"w/o S", PromptToggles::from_disabled("s")},
          {"w/o M", PromptToggles::from_disabled("m")}, {"w/o P", PromptToggles::from_disabled("tfsm")}};
}

std::vector<int> ablation_steps() { return {1, 2, 5, 10, 20, 50}; }

namespace {

struct Session {
  std::ostream& out;
  std::ostream& err;
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flag_overrides;

  Config resolved() const {
    Config user;
    if (!config_path.empty()) user = Config::load(config_path);
    user.reject_unknown(known_config_keys());
    user.apply_env(kEnvPrefix, known_config_keys());
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
      user.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : flag_overrides) user.set(k, v);
    Config c = resolve_config(user);
    err << "# resolved config\n" << c.to_string();
    return c;
  }
};

std::vector<TaskKind> tasks_arg(const std::string& s) {
  if (s == "all") return {std::begin(kAllTasks), std::end(kAllTasks)};
  std::vector<TaskKind> out;
  for (const auto& t : split_list(s)) out.push_back(parse_task(t));
  if (out.empty()) throw Error("no task given");
  return out;
}

EvalOptions eval_options(const Config& c, TaskKind task) {
  EvalOptions o;
  o.task = task;
  o.t_in = c.get_int("data.t_in");
  o.t_out = c.get_int("data.t_out");
  o.missing_ratio = c.get_double("data.missing_ratio");
  o.window_stride = c.get_int("eval.window_stride");
  o.max_windows = c.get_int("eval.max_windows");
  o.seed = static_cast<std::uint64_t>(c.get_int("diffusion.seed"));
  const std::string split = c.get_string("eval.split");
  if (split == "test")
    o.split = Split::test;
  else if (split == "val")
    o.split = Split::val;
  else
    throw Error("eval.split must be test or val");
  return o;
}

void print_report(std::ostream& out, const EvalReport& r) { out << r.to_json().dump() << '\n'; }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatio-temporal diffusion transformer for urban data"};
  app.require_subcommand(1);
  app.fallthrough();
  Session ses{out, err, {}, {}, {}};
  app.add_option("--config", ses.config_path, "Config file (section.key = value)");
  app.add_option("--set", ses.sets, "Override a config key: section.key=value (repeatable)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string s_kind, s_out, s_name;
  GridSynthParams gp;
  GraphSynthParams hp;
  Index s_T = 480, s_period = 48;
  std::uint64_t s_seed = 0;
  double s_noise = 0.05;
  synth->add_option("--kind", s_kind, "grid or graph")->required()->check(CLI::IsMember({"grid", "graph"}));
  synth->add_option("--out", s_out, "Output directory")->required();
  synth->add_option("--name", s_name, "Dataset name");
  synth->add_option("--H", gp.height, "Grid height");
  synth->add_option("--W", gp.width, "Grid width");
  synth->add_option("--N", hp.nodes, "Graph nodes");
  synth->add_option("--T", s_T, "Time steps");
  synth->add_option("--seed", s_seed, "Generator seed");
  synth->add_option("--period", s_period, "Steps per day");
  synth->add_option("--noise", s_noise, "Observation noise std");
  synth->add_option("--jitter", gp.jitter, "Grid hotspot modulation amplitude");
  synth->add_option("--hotspots", gp.hotspots, "Grid hotspot count");
  synth->add_option("--diffusion", hp.diffusion, "Graph neighbour coupling");

  // train
  auto* trn = app.add_subcommand("train", "Train on the datasets of a plan");
  std::string t_plan, t_preset, t_out;
  trn->add_option("--plan", t_plan, "Plan config file");
  trn->add_option("--preset", t_preset, "Model preset")->check(CLI::IsMember({"S", "M", "L"}));
  trn->add_option("--out", t_out, "Run directory")->required();

  // fewshot
  auto* fs = app.add_subcommand("fewshot", "Fine-tune a checkpoint on a fraction of a dataset");
  std::string f_plan, f_from, f_target, f_out;
  double f_fraction = 0.05;
  fs->add_option("--plan", f_plan, "Plan config file");
  fs->add_option("--from", f_from, "Pretrained checkpoint")->required();
  fs->add_option("--fraction", f_fraction, "Training-window fraction (e.g. 0.01, 0.05, 0.10)")->required();
  fs->add_option("--dataset", f_target, "Target dataset name (default: first plan dataset)");
  fs->add_option("--out", f_out, "Run directory")->required();

  // zeroshot
  auto* zs = app.add_subcommand("zeroshot", "Evaluate a checkpoint on an unseen dataset");
  std::string z_from, z_dataset, z_task = "all";
  zs->add_option("--from", z_from, "Pretrained checkpoint")->required();
  zs->add_option("--dataset", z_dataset, "Dataset manifest or directory")->required();
  zs->add_option("--task", z_task, "Task name, comma list or 'all'");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or baseline on a test split");
  std::string e_ckpt, e_dataset, e_task, e_baseline = "none", e_out;
  ev->add_option("--ckpt", e_ckpt, "Checkpoint");
  ev->add_option("--dataset", e_dataset, "Dataset manifest or directory")->required();
  ev->add_option("--task", e_task, "forward, backward, interp, extrap, impute, or all")->required();
  ev->add_option("--baseline", e_baseline, "none, ha or copy")->check(CLI::IsMember({"none", "ha", "copy"}));
  ev->add_option("--out", e_out, "Prefix for <prefix>.<task>.json and <prefix>.<task>.tsv");

  // sample
  auto* smp = app.add_subcommand("sample", "Generate one conditioned window");
  std::string g_ckpt, g_dataset, g_task, g_out, g_mask_out;
  Index g_start = -1;
  smp->add_option("--ckpt", g_ckpt, "Checkpoint")->required();
  smp->add_option("--dataset", g_dataset, "Dataset manifest or directory")->required();
  smp->add_option("--task", g_task, "Task name")->required();
  smp->add_option("--start", g_start, "Window start (default: first test window)");
  smp->add_option("--out", g_out, "Output array file")->required();
  smp->add_option("--mask-out", g_mask_out, "Also write the mask");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Prompt ablation and inference-step sweep");
  std::string a_ckpt, a_dataset, a_task, a_out;
  std::vector<std::string> a_variant_ckpts;
  abl->add_option("--ckpt", a_ckpt, "Checkpoint of the full model")->required();
  abl->add_option("--dataset", a_dataset, "Dataset manifest or directory")->required();
  abl->add_option("--task", a_task, "Task name")->required();
  abl->add_option("--variant-ckpt", a_variant_ckpts, "Separately trained variant: 'w/o F=path' (repeatable)");
  abl->add_option("--out", a_out, "Comparison table (tab-separated)");

  // Flags shared by evaluation-style commands.
  int samples = 0, steps = 0;
  std::uint64_t eval_seed = 0;
  Index stride = 0, max_windows = 0;
  for (auto* sc : {zs, ev, smp, abl}) {
    sc->add_option("--samples", samples, "Samples per window (diffusion.n_eval_samples)");
    sc->add_option("--steps", steps, "Euler steps (diffusion.inference_steps)");
    sc->add_option("--seed", eval_seed, "Evaluation seed (diffusion.seed)");
    sc->add_option("--stride", stride, "Window stride (eval.window_stride)");
    sc->add_option("--max-windows", max_windows, "Cap on evaluated windows (eval.max_windows)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  auto flag = [&](CLI::App* sc, const char* opt, const char* key, const std::string& v) {
    if (sc->count(opt) > 0) ses.flag_overrides.emplace_back(key, v);
  };
  for (auto* sc : {zs, ev, smp, abl}) {
    flag(sc, "--samples", "diffusion.n_eval_samples", std::to_string(samples));
    flag(sc, "--steps", "diffusion.inference_steps", std::to_string(steps));
    flag(sc, "--seed", "diffusion.seed", std::to_string(eval_seed));
    flag(sc, "--stride", "eval.window_stride", std::to_string(stride));
    flag(sc, "--max-windows", "eval.max_windows", std::to_string(max_windows));
  }

  try {
    if (synth->parsed()) {
      Dataset ds;
      if (s_kind == "grid") {
        gp.t_total = s_T, gp.seed = s_seed, gp.period = s_period, gp.noise_std = s_noise;
        gp.resolution_minutes = 1440.0 / static_cast<double>(s_period);
        ds = gen_synthetic_grid(gp, s_name.empty() ? "synth_grid" : s_name);
      } else {
        hp.t_total = s_T, hp.seed = s_seed, hp.period = s_period, hp.noise_std = s_noise;
        hp.resolution_minutes = 1440.0 / static_cast<double>(s_period);
        ds = gen_synthetic_graph(hp, s_name.empty() ? "synth_graph" : s_name);
      }
      save_dataset(s_out, ds);
      out << "wrote " << ds.manifest.name << " (" << ds.raw.rows() << " x " << ds.raw.cols() << ") to " << s_out
          << '\n';
      return 0;
    }

    if (trn->parsed() || fs->parsed()) {
      const std::string plan_file = trn->parsed() ? t_plan : f_plan;
      if (!plan_file.empty()) ses.config_path = plan_file;
      if (trn->parsed() && !t_preset.empty()) ses.flag_overrides.emplace_back("model.preset", t_preset);
      const std::string out_dir = trn->parsed() ? t_out : f_out;
      const Config c = ses.resolved();
      std::filesystem::create_directories(out_dir);
      c.save(std::filesystem::path(out_dir) / "resolved.cfg");
      TrainPlan plan = plan_from(c);
      plan.out_dir = out_dir;
      plan.log = &err;
      TrainResult r;
      if (trn->parsed()) {
        Denoiser model(model_config_from(c));
        err << "model parameters: " << model.parameter_count() << '\n';
        r = train(plan, model);
      } else {
        Denoiser model = load_checkpoint(f_from).restore();
        const std::string target = f_target.empty() ? plan.datasets.front()->manifest.name : f_target;
        r = few_shot(plan, f_fraction, target, model);
      }
      out << "epochs " << r.epochs_run << (r.early_stopped ? " (early stop)" : "") << ", best epoch "
          << r.record.best_epoch << ", checkpoint " << r.record.best_checkpoint << '\n';
      return 0;
    }

    if (zs->parsed() || ev->parsed()) {
      const Config c = ses.resolved();
      const RFConfig rf = rf_config_from(c);
      const std::string ds_path = zs->parsed() ? z_dataset : e_dataset;
      const Dataset ds = load_dataset_arg(ds_path);
      const std::string ckpt = zs->parsed() ? z_from : e_ckpt;
      std::optional<Denoiser> model;
      std::unique_ptr<Predictor> pred;
      if (ev->parsed() && e_baseline == "ha") {
        pred = std::make_unique<HistoricalAveragePredictor>();
      } else if (ev->parsed() && e_baseline == "copy") {
        pred = std::make_unique<CopyLastObservedPredictor>();
      } else {
        if (ckpt.empty()) throw Error("eval needs --ckpt (or --baseline)");
        model.emplace(load_checkpoint(ckpt).restore());
        pred = std::make_unique<DiffusionPredictor>(*model, rf.n_eval_samples, rf.inference_steps);
      }
      for (TaskKind task : tasks_arg(zs->parsed() ? z_task : e_task)) {
        const EvalOptions opt = eval_options(c, task);
        const EvalReport rep = evaluate(*pred, ds, opt, model ? rf.n_eval_samples : 1);
        print_report(out, rep);
        if (ev->parsed() && !e_out.empty()) {
          std::ofstream js(e_out + "." + task_name(task) + ".json");
          js << rep.to_json().dump(2) << '\n';
          std::ofstream ts(e_out + "." + task_name(task) + ".tsv");
          rep.write_horizon_table(ts);
        }
      }
      return 0;
    }

    if (smp->parsed()) {
      const Config c = ses.resolved();
      const RFConfig rf = rf_config_from(c);
      const Dataset ds = load_dataset_arg(g_dataset);
      Denoiser model = load_checkpoint(g_ckpt).restore();
      const EvalOptions opt = eval_options(c, parse_task(g_task));
      const Index start = g_start >= 0 ? g_start : evaluation_starts(ds, opt).front();
      const Mat x0 = ds.window(start, opt.window_length());
      const Mat mask = build_mask(opt.mask_spec(ds.manifest.locations(), window_mask_seed(opt.seed, start)));
      const Mat gen = sample(model, SpatialShape::of(ds), x0.cwiseProduct(mask), mask, rf.inference_steps,
                             window_sample_seed(opt.seed, start));
      write_matrix(g_out, ds.stats.denormalize(gen));
      if (!g_mask_out.empty()) write_matrix(g_mask_out, mask);
      out << "wrote window " << start << " (" << gen.rows() << " x " << gen.cols() << ") to " << g_out << '\n';
      return 0;
    }

    if (abl->parsed()) {
      const Config c = ses.resolved();
      const RFConfig rf = rf_config_from(c);
      const Dataset ds = load_dataset_arg(a_dataset);
      const Denoiser full = load_checkpoint(a_ckpt).restore();
      std::map<std::string, std::string> variant_paths;
      for (const auto& kv : a_variant_ckpts) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--variant-ckpt expects name=path");
        variant_paths[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      const EvalOptions opt = eval_options(c, parse_task(a_task));
      std::ostringstream table;
      table << "section\tvariant\tsteps\trmse\tmae\n";
      for (const auto& [name, toggles] : ablation_variants()) {
        auto it = variant_paths.find(name);
        Denoiser m = it != variant_paths.end() ? load_checkpoint(it->second).restore() : full;
        m.set_prompt_toggles(toggles);
        DiffusionPredictor p(m, rf.n_eval_samples, rf.inference_steps);
        const EvalReport r = evaluate(p, ds, opt, rf.n_eval_samples);
        table << "prompt\t" << name << '\t' << rf.inference_steps << '\t' << r.rmse << '\t' << r.mae << '\n';
      }
      for (int st : ablation_steps()) {
        Denoiser m = full;
        DiffusionPredictor p(m, rf.n_eval_samples, st);
        const EvalReport r = evaluate(p, ds, opt, rf.n_eval_samples);
        table << "steps\tfull\t" << st << '\t' << r.rmse << '\t' << r.mae << '\n';
      }
      out << table.str();
      if (!a_out.empty()) std::ofstream(a_out) << table.str();
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace urbandit
