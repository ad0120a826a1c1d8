#include "urbandit/denoiser.hpp"

#include <cmath>
#include <numbers>

namespace urbandit {

ModelConfig ModelConfig::from_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "S") {
    c.layers = 4, c.dim = 256, c.heads = 4;
  } else if (name == "M") {
    c.layers = 6, c.dim = 384, c.heads = 6;
  } else if (name == "L") {
    c.layers = 12, c.dim = 384, c.heads = 12;
  } else {
    throw Error("unknown preset '" + name + "' (expected S, M or L)");
  }
  return c;
}

void ModelConfig::validate() const {
  if (layers < 0) throw Error("model: layers must be >= 0");
  if (dim < 1 || heads < 1 || dim % heads != 0)
    throw Error("model: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  if (p_t < 1 || p_s < 1) throw Error("model: patch sizes must be >= 1");
  if (pool_size < 1) throw Error("model: pool_size must be >= 1");
  if (f_max < 1) throw Error("model: f_max must be >= 1");
  if (freq_embed_dim < 2 || freq_embed_dim % 2 != 0) throw Error("model: freq_embed_dim must be even");
  if (max_t_patches < 1 || max_s_patches < 1) throw Error("model: positional table sizes must be >= 1");
  if (fft.kind == FFTModeKind::topk && fft.k < 1) throw Error("model: topk_k must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"preset", preset},       {"layers", layers},
          {"dim", dim},             {"heads", heads},
          {"p_t", p_t},             {"p_s", p_s},
          {"pool_size", pool_size}, {"f_max", f_max},
          {"freq_embed_dim", freq_embed_dim},
          {"max_t_patches", max_t_patches},
          {"max_s_patches", max_s_patches},
          {"fft_mode", fft.name()}, {"topk_k", fft.k},
          {"disable_prompt", prompts.disabled()},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.layers = j.at("layers").get<int>();
  c.dim = j.at("dim").get<Index>();
  c.heads = j.at("heads").get<int>();
  c.p_t = j.at("p_t").get<Index>();
  c.p_s = j.at("p_s").get<Index>();
  c.pool_size = j.at("pool_size").get<Index>();
  c.f_max = j.at("f_max").get<Index>();
  c.freq_embed_dim = j.at("freq_embed_dim").get<Index>();
  c.max_t_patches = j.at("max_t_patches").get<Index>();
  c.max_s_patches = j.at("max_s_patches").get<Index>();
  c.fft = FFTMode::parse(j.at("fft_mode").get<std::string>(), j.at("topk_k").get<int>());
  c.prompts = PromptToggles::from_disabled(j.at("disable_prompt").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

Mat timestep_features(double t, Index dim) {
  const Index half = dim / 2;
  Mat f(1, 2 * half);
  for (Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    f(0, i) = std::cos(1000.0 * t * freq);
    f(0, half + i) = std::sin(1000.0 * t * freq);
  }
  return f;
}

std::vector<ad::AttentionGroup> temporal_groups(const TokenLayout& layout) {
  std::vector<ad::AttentionGroup> groups(static_cast<std::size_t>(layout.s_patches));
  for (Index s = 0; s < layout.s_patches; ++s) {
    auto& g = groups[static_cast<std::size_t>(s)];
    for (Index tp = 0; tp < layout.t_patches; ++tp) g.queries.push_back(kPromptCount + layout.token_index(tp, s));
    for (Index p = 0; p < kPromptCount; ++p) g.keys.push_back(p);
    g.keys.insert(g.keys.end(), g.queries.begin(), g.queries.end());
  }
  return groups;
}

std::vector<ad::AttentionGroup> spatial_groups(const TokenLayout& layout) {
  std::vector<ad::AttentionGroup> groups(static_cast<std::size_t>(layout.t_patches));
  for (Index tp = 0; tp < layout.t_patches; ++tp) {
    auto& g = groups[static_cast<std::size_t>(tp)];
    for (Index s = 0; s < layout.s_patches; ++s) g.queries.push_back(kPromptCount + layout.token_index(tp, s));
    for (Index p = 0; p < kPromptCount; ++p) g.keys.push_back(p);
    g.keys.insert(g.keys.end(), g.queries.begin(), g.queries.end());
  }
  return groups;
}

ad::AttentionGroup prompt_group(const TokenLayout& layout) {
  ad::AttentionGroup g;
  for (Index p = 0; p < kPromptCount; ++p) g.queries.push_back(p);
  for (Index r = 0; r < kPromptCount + layout.token_count(); ++r) g.keys.push_back(r);
  return g;
}

namespace {

Mat xavier(Index fan_in, Index fan_out, Rng& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-lim, lim);
  Mat m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Mat normal(Index rows, Index cols, double std, Rng& rng) { return std * standard_normal(rows, cols, rng); }

}  // namespace

Denoiser::Denoiser(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 0xD1));
  build(rng);
}

Denoiser::Denoiser(const Denoiser& other) : cfg_(other.cfg_) {
  for (const auto* p : other.order_) add(p->name, p->value);
  rebind();
}

Denoiser& Denoiser::operator=(const Denoiser& other) {
  if (this == &other) return *this;
  cfg_ = other.cfg_;
  storage_.clear();
  order_.clear();
  by_name_.clear();
  for (const auto* p : other.order_) add(p->name, p->value);
  rebind();
  return *this;
}

ad::Parameter* Denoiser::add(const std::string& name, Mat value) {
  if (by_name_.count(name)) throw Error("duplicate parameter '" + name + "'");
  storage_.push_back(std::make_unique<ad::Parameter>(name, std::move(value)));
  ad::Parameter* p = storage_.back().get();
  order_.push_back(p);
  by_name_[name] = p;
  return p;
}

ad::Parameter& Denoiser::param(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("no parameter named '" + name + "'");
  return *it->second;
}

const ad::Parameter& Denoiser::param(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("no parameter named '" + name + "'");
  return *it->second;
}

Index Denoiser::parameter_count() const {
  Index n = 0;
  for (const auto* p : order_) n += p->value.size();
  return n;
}

void Denoiser::zero_grad() {
  for (auto* p : order_) p->zero_grad();
}

void Denoiser::build(Rng& rng) {
  const Index D = cfg_.dim, pg = cfg_.p_t * cfg_.p_s * cfg_.p_s, F = cfg_.freq_embed_dim;
  add("embed.grid.w", xavier(pg, D, rng));
  add("embed.grid.b", Mat::Zero(1, D));
  add("embed.graph.conv", xavier(cfg_.p_t, D, rng));
  add("embed.graph.gcn", xavier(D, D, rng));
  add("embed.graph.b", Mat::Zero(1, D));
  add("pos.t", normal(cfg_.max_t_patches, D, 0.02, rng));
  add("pos.s", normal(cfg_.max_s_patches, D, 0.02, rng));
  add("time.w1", normal(F, D, 0.02, rng));
  add("time.b1", Mat::Zero(1, D));
  add("time.w2", normal(D, D, 0.02, rng));
  add("time.b2", Mat::Zero(1, D));

  for (const char* fam : {"time", "freq", "space"}) {
    MemoryPool pool = MemoryPool::make(std::string("pool.") + fam, cfg_.pool_size, D, rng);
    add(pool.keys.name, std::move(pool.keys.value));
    add(pool.values.name, std::move(pool.values.value));
  }
  add("prompt.time.query", normal(1, D, 0.02, rng));
  add("prompt.space.query", normal(1, D, 0.02, rng));
  add("prompt.freq.w", xavier(2 * cfg_.f_max, D, rng));
  add("prompt.freq.b", Mat::Zero(1, D));
  add("prompt.mask.w", xavier(1, D, rng));
  add("prompt.mask.b", Mat::Zero(1, D));
  add("prompt.mask.pos_t", normal(cfg_.max_t_patches, D, 0.02, rng));
  add("prompt.mask.pos_s", normal(cfg_.max_s_patches, D, 0.02, rng));
  add("prompt.mask.query", normal(1, D, 0.02, rng));
  for (const char* fam : {"t", "f", "s", "m"}) add(std::string("prompt.null.") + fam, normal(1, D, 0.02, rng));

  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    add(b + "ada.w", Mat::Zero(D, 9 * D));
    add(b + "ada.b", Mat::Zero(1, 9 * D));
    for (const char* a : {"t", "s"})
      for (const char* m : {"q", "k", "v", "o"}) {
        add(b + a + m + ".w", xavier(D, D, rng));
        add(b + a + m + ".b", Mat::Zero(1, D));
      }
    add(b + "mlp1.w", xavier(D, 4 * D, rng));
    add(b + "mlp1.b", Mat::Zero(1, 4 * D));
    add(b + "mlp2.w", xavier(4 * D, D, rng));
    add(b + "mlp2.b", Mat::Zero(1, D));
  }
  add("head.grid.w", xavier(D, pg, rng));
  add("head.grid.b", Mat::Zero(1, pg));
  add("head.graph.w", xavier(D, cfg_.p_t, rng));
  add("head.graph.b", Mat::Zero(1, cfg_.p_t));
  rebind();
}

void Denoiser::rebind() {
  blocks_.clear();
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    auto P = [&](const std::string& n) { return &param(b + n); };
    blocks_.push_back({P("ada.w"),  P("ada.b"),  P("tq.w"),   P("tq.b"),   P("tk.w"),   P("tk.b"),
                       P("tv.w"),   P("tv.b"),   P("to.w"),   P("to.b"),   P("sq.w"),   P("sq.b"),
                       P("sk.w"),   P("sk.b"),   P("sv.w"),   P("sv.b"),   P("so.w"),   P("so.b"),
                       P("mlp1.w"), P("mlp1.b"), P("mlp2.w"), P("mlp2.b")});
  }
}

void Denoiser::zero_adaptive() {
  for (auto& b : blocks_) {
    b.ada_w->value.setZero();
    b.ada_b->value.setZero();
  }
}

TokenLayout Denoiser::layout_for(const Mat& x, const SpatialShape& space) const {
  if (x.cols() != space.locations())
    throw Error("denoiser: window has " + std::to_string(x.cols()) + " locations, spatial shape has " +
                std::to_string(space.locations()));
  TokenLayout layout = TokenLayout::make(space, x.rows(), PatchConfig{cfg_.p_t, cfg_.p_s, cfg_.dim});
  if (layout.t_patches > cfg_.max_t_patches)
    throw Error("denoiser: " + std::to_string(layout.t_patches) + " time patches exceed max_t_patches " +
                std::to_string(cfg_.max_t_patches));
  if (layout.s_patches > cfg_.max_s_patches)
    throw Error("denoiser: " + std::to_string(layout.s_patches) + " spatial patches exceed max_s_patches " +
                std::to_string(cfg_.max_s_patches));
  return layout;
}

ad::Var Denoiser::embed(ad::Graph& g, const Mat& x, const TokenLayout& layout, const SpatialShape& space) {
  if (layout.kind == DataKind::grid)
    return embed_grid(g, x, layout, g.param(param("embed.grid.w")), g.param(param("embed.grid.b")));
  return embed_graph(g, x, layout, space.norm_adjacency, g.param(param("embed.graph.conv")),
                     g.param(param("embed.graph.gcn")), g.param(param("embed.graph.b")));
}

ad::Var Denoiser::add_positions(ad::Graph& g, const ad::Var& tokens, const TokenLayout& layout) {
  ad::Var x = ad::add(tokens, ad::gather_rows(g.param(param("pos.t")), layout.time_index_per_token()));
  return ad::add(x, ad::gather_rows(g.param(param("pos.s")), layout.space_index_per_token()));
}

ad::Var Denoiser::head(ad::Graph& g, const ad::Var& tokens, const TokenLayout& layout) {
  if (layout.kind == DataKind::grid)
    return project_tokens(tokens, g.param(param("head.grid.w")), g.param(param("head.grid.b")));
  return project_tokens(tokens, g.param(param("head.graph.w")), g.param(param("head.graph.b")));
}

ad::Var Denoiser::block(ad::Graph& g, const Block& b, const ad::Var& seq, const ad::Var& cond,
                        const TokenLayout& layout) {
  const Index D = cfg_.dim, L = layout.token_count();
  ad::Var mod = ad::linear(cond, g.param(*b.ada_w), g.param(*b.ada_b));
  auto chunk = [&](int i) { return ad::slice_cols(mod, i * D, D); };

  // Temporal attention; the prompt rows get their update here.
  ad::Var h = ad::modulate(ad::layer_norm(seq), chunk(0), chunk(1));
  ad::Var q = ad::linear(h, g.param(*b.tq_w), g.param(*b.tq_b));
  ad::Var k = ad::linear(h, g.param(*b.tk_w), g.param(*b.tk_b));
  ad::Var v = ad::linear(h, g.param(*b.tv_w), g.param(*b.tv_b));
  auto groups = temporal_groups(layout);
  groups.push_back(prompt_group(layout));
  ad::Var att = ad::linear(ad::grouped_attention(q, k, v, groups, cfg_.heads), g.param(*b.to_w), g.param(*b.to_b));
  ad::Var x = ad::add(seq, ad::mul_row(att, chunk(2)));

  // Spatial attention over data rows only.
  h = ad::modulate(ad::layer_norm(x), chunk(3), chunk(4));
  q = ad::linear(h, g.param(*b.sq_w), g.param(*b.sq_b));
  k = ad::linear(h, g.param(*b.sk_w), g.param(*b.sk_b));
  v = ad::linear(h, g.param(*b.sv_w), g.param(*b.sv_b));
  ad::Var sp = ad::slice_rows(ad::grouped_attention(q, k, v, spatial_groups(layout), cfg_.heads), kPromptCount, L);
  sp = ad::linear(sp, g.param(*b.so_w), g.param(*b.so_b));
  sp = ad::concat_rows({g.constant(Mat::Zero(kPromptCount, D)), sp});
  x = ad::add(x, ad::mul_row(sp, chunk(5)));

  h = ad::modulate(ad::layer_norm(x), chunk(6), chunk(7));
  ad::Var m = ad::gelu(ad::linear(h, g.param(*b.m1_w), g.param(*b.m1_b)));
  m = ad::linear(m, g.param(*b.m2_w), g.param(*b.m2_b));
  return ad::add(x, ad::mul_row(m, chunk(8)));
}

ad::Var Denoiser::forward(ad::Graph& g, const Mat& x, const Mat& mask, double t, const SpatialShape& space) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols())
    throw Error("denoiser: mask " + shape_str(mask) + " does not match window " + shape_str(x));
  if (t < 0.0 || t > 1.0) throw Error("denoiser: diffusion time must lie in [0, 1]");
  const TokenLayout layout = layout_for(x, space);
  ad::Var tokens = embed(g, x, layout, space);

  ad::Var c = ad::linear(g.constant(timestep_features(t, cfg_.freq_embed_dim)), g.param(param("time.w1")),
                         g.param(param("time.b1")));
  c = ad::linear(ad::silu(c), g.param(param("time.w2")), g.param(param("time.b2")));
  ad::Var cond = ad::silu(c);

  const PromptToggles& on = cfg_.prompts;
  auto pool = [&](const std::string& fam, const ad::Var& query) {
    return retrieve(g.param(param("pool." + fam + ".keys")), g.param(param("pool." + fam + ".values")), query).prompt;
  };
  std::array<ad::Var, kPromptCount> bundle;
  bundle[0] = on.time ? pool("time", time_pattern(tokens, layout, g.param(param("prompt.time.query"))))
                      : g.param(param("prompt.null.t"));
  if (on.freq) {
    const Mat features = freq_filter(x, cfg_.fft, cfg_.f_max).features;
    bundle[1] = pool("freq", freq_pattern(g, features, x.rows(), g.param(param("prompt.freq.w")),
                                          g.param(param("prompt.freq.b"))));
  } else {
    bundle[1] = g.param(param("prompt.null.f"));
  }
  bundle[2] = on.space ? pool("space", spatial_pattern(tokens, layout, g.param(param("prompt.space.query"))))
                       : g.param(param("prompt.null.s"));
  if (on.mask) {
    MaskPromptParams mp{g.param(param("prompt.mask.w")), g.param(param("prompt.mask.b")),
                        g.param(param("prompt.mask.pos_t")), g.param(param("prompt.mask.pos_s")),
                        g.param(param("prompt.mask.query"))};
    bundle[3] = mask_prompt(g, mask, layout, mp);
  } else {
    bundle[3] = g.param(param("prompt.null.m"));
  }

  ad::Var seq = assemble(bundle, add_positions(g, tokens, layout));
  for (const Block& b : blocks_) seq = block(g, b, seq, cond, layout);
  return head(g, strip_prompts(seq), layout);
}

Mat Denoiser::predict_velocity(const Mat& x, const Mat& mask, double t, const SpatialShape& space) {
  ad::Graph g(false);
  const TokenLayout layout = layout_for(x, space);
  return layout.unflatten(forward(g, x, mask, t, space).value());
}

Mat Denoiser::embed_project_path(const Mat& x, const SpatialShape& space) {
  ad::Graph g(false);
  const TokenLayout layout = layout_for(x, space);
  return layout.unflatten(head(g, add_positions(g, embed(g, x, layout, space), layout), layout).value());
}

}  // namespace urbandit
