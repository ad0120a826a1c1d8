#include "urbandit/datasets.hpp"

#include "urbandit/array_io.hpp"
#include "urbandit/config.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <sstream>

namespace urbandit {

std::string to_string(DataKind k) { return k == DataKind::grid ? "grid" : "graph"; }
std::string to_string(NormKind k) { return k == NormKind::zscore ? "zscore" : "minmax"; }
std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

DataKind parse_data_kind(const std::string& s) {
  if (s == "grid") return DataKind::grid;
  if (s == "graph") return DataKind::graph;
  throw Error("unknown dataset kind '" + s + "' (expected grid|graph)");
}

NormKind parse_norm_kind(const std::string& s) {
  if (s == "zscore") return NormKind::zscore;
  if (s == "minmax") return NormKind::minmax;
  throw Error("unknown normalization '" + s + "' (expected zscore|minmax)");
}

Index DatasetManifest::steps_per_day() const {
  if (resolution_minutes <= 0) throw Error("dataset '" + name + "': resolution must be positive");
  return std::max<Index>(1, static_cast<Index>(std::llround(1440.0 / resolution_minutes)));
}

void DatasetManifest::validate() const {
  if (t_total <= 0) throw Error("dataset '" + name + "': t_total must be positive");
  if (kind == DataKind::grid && (height <= 0 || width <= 0))
    throw Error("dataset '" + name + "': grid needs positive height and width");
  if (kind == DataKind::graph) {
    if (nodes <= 0) throw Error("dataset '" + name + "': graph needs a positive node count");
    if (!adjacency_path) throw Error("dataset '" + name + "': graph dataset requires an adjacency path");
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const Config c = Config::load(path);
  DatasetManifest m;
  m.name = c.get_string("dataset.name");
  m.kind = parse_data_kind(c.get_string("dataset.kind"));
  const auto shape = c.get_list("dataset.shape");
  auto dim = [&](std::size_t i) {
    try {
      return static_cast<Index>(std::stol(shape.at(i)));
    } catch (const std::exception&) {
      throw Error(path.string() + ": malformed dataset.shape");
    }
  };
  if (m.kind == DataKind::grid) {
    if (shape.size() != 3) throw Error(path.string() + ": grid shape must be T_total,H,W");
    m.t_total = dim(0);
    m.height = dim(1);
    m.width = dim(2);
  } else {
    if (shape.size() != 2) throw Error(path.string() + ": graph shape must be N_nodes,T_total");
    m.nodes = dim(0);
    m.t_total = dim(1);
  }
  m.resolution_minutes = c.get_double("dataset.resolution_minutes", 30.0);
  const auto base = path.parent_path();
  m.file_path = (base / c.get_string("dataset.file")).string();
  if (auto adj = c.find("dataset.adjacency")) m.adjacency_path = (base / *adj).string();
  m.norm = parse_norm_kind(c.get_string("dataset.norm", "zscore"));
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  Config c;
  c.set("dataset.name", m.name);
  c.set("dataset.kind", to_string(m.kind));
  if (m.kind == DataKind::grid)
    c.set("dataset.shape", std::to_string(m.t_total) + "," + std::to_string(m.height) + "," + std::to_string(m.width));
  else
    c.set("dataset.shape", std::to_string(m.nodes) + "," + std::to_string(m.t_total));
  std::ostringstream res;
  res.precision(17);
  res << m.resolution_minutes;
  c.set("dataset.resolution_minutes", res.str());
  c.set("dataset.file", std::filesystem::path(m.file_path).filename().string());
  if (m.adjacency_path) c.set("dataset.adjacency", std::filesystem::path(*m.adjacency_path).filename().string());
  c.set("dataset.norm", to_string(m.norm));
  c.save(path);
}

NormStats NormStats::fit(const Mat& v, NormKind kind) {
  if (v.size() == 0) throw Error("cannot fit normalization on an empty training segment");
  NormStats s;
  s.kind = kind;
  s.mean = v.mean();
  s.std = std::sqrt((v.array() - s.mean).square().mean());
  s.min = v.minCoeff();
  s.max = v.maxCoeff();
  if (kind == NormKind::zscore && !(s.std > 0)) throw Error("zscore normalization of a constant series (std = 0)");
  if (kind == NormKind::minmax && !(s.max > s.min)) throw Error("minmax normalization of a constant series (max = min)");
  return s;
}

double NormStats::normalize(double x) const {
  return kind == NormKind::zscore ? (x - mean) / std : (x - min) / (max - min);
}

double NormStats::denormalize(double x) const {
  return kind == NormKind::zscore ? x * std + mean : x * (max - min) + min;
}

Mat NormStats::normalize(const Mat& x) const {
  return x.unaryExpr([this](double v) { return normalize(v); });
}

Mat NormStats::denormalize(const Mat& x) const {
  return x.unaryExpr([this](double v) { return denormalize(v); });
}

const StartRange& SplitRanges::of(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  throw Error("bad split");
}

namespace {

void check_ratios(const SplitSpec& spec) {
  if (spec.train <= 0 || spec.val < 0 || spec.test < 0 || std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw Error("split ratios must be nonnegative and sum to 1");
}

}  // namespace

Index train_segment_end(Index n, const SplitSpec& spec) {
  check_ratios(spec);
  return static_cast<Index>(std::llround(spec.train * static_cast<double>(n)));
}

SplitRanges split_temporal(Index n, const SplitSpec& spec) {
  check_ratios(spec);
  if (spec.window_length < 1) throw Error("window length must be at least 1");
  const Index min_len = 3 * spec.window_length;
  if (n < min_len)
    throw Error("series of length " + std::to_string(n) + " is too short for window " +
                std::to_string(spec.window_length) + "; minimum length is " + std::to_string(min_len));
  SplitRanges r;
  r.train_end = static_cast<Index>(std::llround(spec.train * static_cast<double>(n)));
  r.val_end = static_cast<Index>(std::llround((spec.train + spec.val) * static_cast<double>(n)));
  const Index w = spec.window_length;
  r.train = {0, r.train_end - w};
  r.val = {r.train_end, r.val_end - w};
  r.test = {r.val_end, n - w};
  return r;
}

SplitRanges Dataset::splits(Index window_length) const {
  SplitSpec spec = split_ratios;
  spec.window_length = window_length;
  SplitRanges r = split_temporal(raw.rows(), spec);
  if (train_window_limit > 0 && r.train.count() > train_window_limit) r.train.last = r.train.first + train_window_limit - 1;
  return r;
}

Mat Dataset::window(Index start, Index length) const {
  if (start < 0 || start + length > normalized.rows())
    throw Error("window [" + std::to_string(start) + ", " + std::to_string(start + length) + ") outside series of length " +
                std::to_string(normalized.rows()));
  return normalized.middleRows(start, length);
}

Dataset make_dataset(DatasetManifest manifest, Mat raw, Mat adjacency, SplitSpec ratios) {
  manifest.t_total = raw.rows();
  manifest.validate();
  if (raw.cols() != manifest.locations())
    throw Error("dataset '" + manifest.name + "': value columns do not match the manifest's location count");
  if (!raw.allFinite()) throw Error("dataset '" + manifest.name + "': values must be finite");
  if (manifest.kind == DataKind::graph) {
    if (adjacency.rows() != manifest.nodes || adjacency.cols() != manifest.nodes)
      throw Error("dataset '" + manifest.name + "': adjacency must be " + std::to_string(manifest.nodes) + "x" +
                  std::to_string(manifest.nodes));
    if ((adjacency.array() < 0).any()) throw Error("dataset '" + manifest.name + "': adjacency must be nonnegative");
  }
  Dataset ds;
  ds.split_ratios = ratios;
  const Index train_end = train_segment_end(raw.rows(), ratios);
  ds.stats = NormStats::fit(raw.topRows(train_end), manifest.norm);
  ds.normalized = ds.stats.normalize(raw);
  ds.manifest = std::move(manifest);
  ds.raw = std::move(raw);
  ds.adjacency = std::move(adjacency);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = load_manifest(manifest_path);
  const DenseArray values = read_array(m.file_path);
  Mat raw;
  if (m.kind == DataKind::grid) {
    if (values.shape != std::vector<std::uint64_t>{std::uint64_t(m.t_total), std::uint64_t(m.height), std::uint64_t(m.width)})
      throw Error("dataset '" + m.name + "': value file shape does not match manifest");
    raw.resize(m.t_total, m.height * m.width);
    std::copy(values.data.begin(), values.data.end(), raw.data());
  } else {
    if (values.shape != std::vector<std::uint64_t>{std::uint64_t(m.nodes), std::uint64_t(m.t_total)})
      throw Error("dataset '" + m.name + "': value file shape does not match manifest");
    Mat nt(m.nodes, m.t_total);
    std::copy(values.data.begin(), values.data.end(), nt.data());
    raw = nt.transpose();
  }
  Mat adjacency;
  if (m.kind == DataKind::graph) adjacency = read_matrix(*m.adjacency_path);
  return make_dataset(m, std::move(raw), std::move(adjacency));
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  DatasetManifest m = ds.manifest;
  m.file_path = (dir / "values.uda").string();
  if (m.kind == DataKind::grid) {
    write_array(m.file_path, {std::uint64_t(m.t_total), std::uint64_t(m.height), std::uint64_t(m.width)}, ds.raw.data());
  } else {
    const Mat nt = ds.raw.transpose();
    write_array(m.file_path, {std::uint64_t(m.nodes), std::uint64_t(m.t_total)}, nt.data());
    m.adjacency_path = (dir / "adjacency.uda").string();
    write_matrix(*m.adjacency_path, ds.adjacency);
  }
  save_manifest(dir / "manifest.cfg", m);
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double phase_of(Index t, Index period) { return kTwoPi * static_cast<double>(t % period) / static_cast<double>(period); }

// Stationary AR(1) path with unit marginal variance.
std::vector<double> ar1_path(Index n, double rho, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(n));
  double v = n01(rng);
  const double innov = std::sqrt(1.0 - rho * rho);
  for (Index t = 0; t < n; ++t) {
    x[static_cast<std::size_t>(t)] = v;
    v = rho * v + innov * n01(rng);
  }
  return x;
}

}  // namespace

Dataset gen_synthetic_grid(const GridSynthParams& p, const std::string& name) {
  if (p.height < 4 || p.width < 4) throw Error("synthetic grid needs H, W >= 4");
  if (p.t_total < 200) throw Error("synthetic grid needs T_total >= 200");
  if (p.period < 2) throw Error("synthetic grid period must be at least 2");
  Rng rng(mix_seed(p.seed, 0x67726964));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Index H = p.height, W = p.width, S = H * W;

  // Per-cell daily cycle; phase varies smoothly across the grid.
  std::vector<double> level(S), amp(S), phase(S);
  const double gx = kTwoPi * u01(rng), gy = kTwoPi * u01(rng);
  for (Index h = 0; h < H; ++h)
    for (Index w = 0; w < W; ++w) {
      const Index s = h * W + w;
      level[s] = 0.5 + 0.5 * u01(rng);
      amp[s] = 0.5 + u01(rng);
      phase[s] = 0.6 * std::sin(gx + 0.7 * h) + 0.6 * std::cos(gy + 0.5 * w);
    }

  struct Hotspot {
    double cy, cx, radius, orbit, sigma, intensity, psi;
    std::vector<double> amp_mod, dy, dx;
  };
  std::vector<Hotspot> hs(static_cast<std::size_t>(p.hotspots));
  for (auto& hsp : hs) {
    hsp.cy = 1.0 + u01(rng) * static_cast<double>(H - 2);
    hsp.cx = 1.0 + u01(rng) * static_cast<double>(W - 2);
    hsp.radius = 0.5 + 1.5 * u01(rng);
    hsp.orbit = kTwoPi * u01(rng);
    hsp.sigma = 0.8 + 0.8 * u01(rng);
    hsp.intensity = 1.0 + 2.0 * u01(rng);
    hsp.psi = kTwoPi * u01(rng);
    hsp.amp_mod = ar1_path(p.t_total, 0.97, rng);
    hsp.dy = ar1_path(p.t_total, 0.98, rng);
    hsp.dx = ar1_path(p.t_total, 0.98, rng);
  }

  Mat raw(p.t_total, S);
  for (Index t = 0; t < p.t_total; ++t) {
    const double ph = phase_of(t, p.period);
    const auto ti = static_cast<std::size_t>(t);
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        const Index s = h * W + w;
        double v = level[s] + amp[s] * (1.0 + std::sin(ph + phase[s]));
        for (const auto& hsp : hs) {
          const double cy = hsp.cy + hsp.radius * std::sin(ph + hsp.orbit) + p.jitter * hsp.dy[ti];
          const double cx = hsp.cx + hsp.radius * std::cos(ph + hsp.orbit) + p.jitter * hsp.dx[ti];
          const double gain = std::max(0.0, 1.0 + 0.5 * p.jitter * hsp.amp_mod[ti]);
          const double daily = 0.5 * (1.0 + std::sin(ph + hsp.psi));
          const double d2 = (h - cy) * (h - cy) + (w - cx) * (w - cx);
          v += hsp.intensity * gain * daily * std::exp(-d2 / (2.0 * hsp.sigma * hsp.sigma));
        }
        if (p.noise_std > 0) v += p.noise_std * n01(rng);
        raw(t, s) = std::max(0.0, v);
      }
  }

  DatasetManifest m;
  m.name = name;
  m.kind = DataKind::grid;
  m.t_total = p.t_total;
  m.height = H;
  m.width = W;
  m.resolution_minutes = p.resolution_minutes;
  return make_dataset(std::move(m), std::move(raw));
}

namespace {

Mat random_connected_graph(Index n, double extra_prob, Rng& rng) {
  Mat a = Mat::Zero(n, n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // Random spanning tree over a shuffled order, then sparse extra edges.
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (Index i = 1; i < n; ++i) {
    std::uniform_int_distribution<Index> pick(0, i - 1);
    const Index u = order[static_cast<std::size_t>(i)];
    const Index v = order[static_cast<std::size_t>(pick(rng))];
    a(u, v) = a(v, u) = 1.0;
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (a(i, j) == 0.0 && u01(rng) < extra_prob) a(i, j) = a(j, i) = 1.0;
  return a;
}

}  // namespace

Dataset gen_synthetic_graph(const GraphSynthParams& p, const std::string& name) {
  if (p.nodes < 4) throw Error("synthetic graph needs at least 4 nodes");
  if (p.t_total < 1) throw Error("synthetic graph needs a positive length");
  if (p.diffusion < 0 || p.diffusion >= 1) throw Error("graph diffusion weight must lie in [0, 1)");
  Rng rng(mix_seed(p.seed, 0x6772617068));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Index n = p.nodes;
  Mat adj = random_connected_graph(n, p.extra_edge_prob, rng);

  std::vector<double> level(n), amp(n), phase(n);
  for (Index i = 0; i < n; ++i) {
    level[i] = 0.5 + u01(rng);
    amp[i] = 0.5 + u01(rng);
    phase[i] = kTwoPi * u01(rng);
  }
  std::vector<std::vector<Index>> nbrs(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (adj(i, j) > 0) nbrs[i].push_back(j);

  // Burn-in lets the lagged diffusion reach its stationary regime.
  const Index burn = p.diffusion > 0 ? 4 * p.period : 0;
  const Index total = p.t_total + burn;
  Mat x = Mat::Zero(total, n);
  std::vector<double> event(n, 0.0);
  constexpr double rho = 0.95;
  for (Index t = 0; t < total; ++t) {
    const Index tt = t - burn;  // recorded time index; phase is anchored to it
    const double ph = phase_of(((tt % p.period) + p.period) % p.period, p.period);
    for (Index i = 0; i < n; ++i) {
      double v = level[i] + amp[i] * (1.0 + std::sin(ph + phase[i]));
      if (p.diffusion > 0 && t > 0) {
        double acc = 0.0;
        for (Index j : nbrs[i]) acc += x(t - 1, j);
        v += p.diffusion * acc / static_cast<double>(nbrs[i].size());
      }
      if (p.event_std > 0) {
        event[i] = rho * event[i] + p.event_std * n01(rng);
        v += event[i];
      }
      if (p.noise_std > 0) v += p.noise_std * n01(rng);
      x(t, i) = std::max(0.0, v);
    }
  }

  DatasetManifest m;
  m.name = name;
  m.kind = DataKind::graph;
  m.nodes = n;
  m.t_total = p.t_total;
  m.resolution_minutes = p.resolution_minutes;
  m.adjacency_path = "adjacency.uda";
  return make_dataset(std::move(m), x.bottomRows(p.t_total), std::move(adj));
}

Dataset gen_synthetic_grid(Index height, Index width, Index t_total, std::uint64_t seed) {
  GridSynthParams p;
  p.height = height;
  p.width = width;
  p.t_total = t_total;
  p.seed = seed;
  return gen_synthetic_grid(p);
}

Dataset gen_synthetic_graph(Index nodes, Index t_total, std::uint64_t seed) {
  GraphSynthParams p;
  p.nodes = nodes;
  p.t_total = t_total;
  p.seed = seed;
  return gen_synthetic_graph(p);
}

std::vector<STSample> sample_windows(const Dataset& ds, Split split, Index window_length, Index batch_size,
                                     std::uint64_t seed) {
  const StartRange range = ds.splits(window_length).of(split);
  if (range.empty())
    throw Error("dataset '" + ds.manifest.name + "': " + to_string(split) + " split has no window of length " +
                std::to_string(window_length));
  Rng rng(seed);
  std::uniform_int_distribution<Index> pick(range.first, range.last);
  std::vector<STSample> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (Index b = 0; b < batch_size; ++b) {
    const Index s = pick(rng);
    out.push_back({ds.window(s, window_length), s, split, &ds});
  }
  return out;
}

std::vector<Index> enumerate_starts(const Dataset& ds, Split split, Index window_length, Index stride) {
  if (stride < 1) throw Error("window stride must be at least 1");
  const StartRange range = ds.splits(window_length).of(split);
  std::vector<Index> out;
  for (Index s = range.first; s <= range.last; s += stride) out.push_back(s);
  return out;
}

}  // namespace urbandit
