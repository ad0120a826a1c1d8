#include "urbandit/tokenizer.hpp"

#include <cmath>

namespace urbandit {

SpatialShape SpatialShape::grid(Index height, Index width) {
  SpatialShape s;
  s.kind = DataKind::grid;
  s.height = height;
  s.width = width;
  return s;
}

SpatialShape SpatialShape::graph(const Mat& adjacency) {
  SpatialShape s;
  s.kind = DataKind::graph;
  s.nodes = adjacency.rows();
  s.norm_adjacency = normalized_adjacency(adjacency);
  return s;
}

SpatialShape SpatialShape::of(const Dataset& ds) {
  return ds.manifest.kind == DataKind::grid ? grid(ds.manifest.height, ds.manifest.width) : graph(ds.adjacency);
}

Mat normalized_adjacency(const Mat& a) {
  if (a.rows() != a.cols()) throw Error("adjacency must be square, got " + shape_str(a));
  if ((a.array() < 0).any()) throw Error("adjacency must be nonnegative");
  Mat ai = a + Mat::Identity(a.rows(), a.cols());
  Vec inv_sqrt = ai.rowwise().sum().array().rsqrt();
  return inv_sqrt.asDiagonal() * ai * inv_sqrt.asDiagonal();
}

TokenLayout TokenLayout::make(const SpatialShape& space, Index t_steps, const PatchConfig& cfg) {
  if (cfg.p_t < 1 || cfg.p_s < 1 || cfg.dim < 1) throw Error("patch sizes and embedding dim must be >= 1");
  if (t_steps % cfg.p_t != 0)
    throw Error("time dimension T=" + std::to_string(t_steps) + " is not divisible by p_t=" + std::to_string(cfg.p_t));
  TokenLayout l;
  l.kind = space.kind;
  l.t_steps = t_steps;
  l.p_t = cfg.p_t;
  l.t_patches = t_steps / cfg.p_t;
  if (space.kind == DataKind::grid) {
    if (space.height % cfg.p_s != 0)
      throw Error("height H=" + std::to_string(space.height) + " is not divisible by p_s=" + std::to_string(cfg.p_s));
    if (space.width % cfg.p_s != 0)
      throw Error("width W=" + std::to_string(space.width) + " is not divisible by p_s=" + std::to_string(cfg.p_s));
    l.p_s = cfg.p_s;
    l.height = space.height;
    l.width = space.width;
    l.s_patches = (space.height / cfg.p_s) * (space.width / cfg.p_s);
  } else {
    l.p_s = 1;
    l.nodes = space.nodes;
    l.s_patches = space.nodes;
  }
  return l;
}

std::pair<Index, Index> TokenLayout::cell(Index token, Index e) const {
  const auto [tp, sp] = token_coords(token);
  if (kind == DataKind::graph) return {tp * p_t + e, sp};
  const Index dt = e / (p_s * p_s);
  const Index dh = (e / p_s) % p_s;
  const Index dw = e % p_s;
  const Index wp_count = width / p_s;
  const Index hp = sp / wp_count;
  const Index wp = sp % wp_count;
  return {tp * p_t + dt, (hp * p_s + dh) * width + wp * p_s + dw};
}

Mat TokenLayout::flatten(const Mat& window) const {
  if (window.rows() != t_steps || window.cols() != locations())
    throw Error("window " + shape_str(window) + " does not match token layout " + std::to_string(t_steps) + "x" +
                std::to_string(locations()));
  const Index P = patch_size();
  Mat out(token_count(), P);
  for (Index tok = 0; tok < token_count(); ++tok)
    for (Index e = 0; e < P; ++e) {
      const auto [t, s] = cell(tok, e);
      out(tok, e) = window(t, s);
    }
  return out;
}

Mat TokenLayout::unflatten(const Mat& patches) const {
  if (patches.rows() != token_count() || patches.cols() != patch_size())
    throw Error("patch matrix " + shape_str(patches) + " does not match token layout");
  Mat out(t_steps, locations());
  for (Index tok = 0; tok < token_count(); ++tok)
    for (Index e = 0; e < patch_size(); ++e) {
      const auto [t, s] = cell(tok, e);
      out(t, s) = patches(tok, e);
    }
  return out;
}

std::vector<Index> TokenLayout::time_index_per_token() const {
  std::vector<Index> out(static_cast<std::size_t>(token_count()));
  for (Index i = 0; i < token_count(); ++i) out[static_cast<std::size_t>(i)] = i / s_patches;
  return out;
}

std::vector<Index> TokenLayout::space_index_per_token() const {
  std::vector<Index> out(static_cast<std::size_t>(token_count()));
  for (Index i = 0; i < token_count(); ++i) out[static_cast<std::size_t>(i)] = i % s_patches;
  return out;
}

ad::Var embed_grid(ad::Graph& g, const Mat& x, const TokenLayout& layout, const ad::Var& weight, const ad::Var& bias) {
  if (layout.kind != DataKind::grid) throw Error("embed_grid: layout is not a grid layout");
  return ad::linear(g.constant(layout.flatten(x)), weight, bias);
}

Mat embed_grid(const Mat& x, const TokenLayout& layout, const Mat& weight, const Mat& bias) {
  ad::Graph g(false);
  return embed_grid(g, x, layout, g.constant(weight), g.constant(bias)).value();
}

Mat gcn_layer(const Mat& h, const Mat& adjacency, const Mat& weight) {
  if (adjacency.rows() != h.rows()) throw Error("gcn_layer: adjacency " + shape_str(adjacency) + " vs features " + shape_str(h));
  return normalized_adjacency(adjacency) * h * weight;
}

ad::Var embed_graph(ad::Graph& g, const Mat& x, const TokenLayout& layout, const Mat& norm_adjacency,
                    const ad::Var& conv_weight, const ad::Var& gcn_weight, const ad::Var& bias) {
  if (layout.kind != DataKind::graph) throw Error("embed_graph: layout is not a graph layout");
  if (norm_adjacency.rows() != layout.nodes || norm_adjacency.cols() != layout.nodes)
    throw Error("embed_graph: adjacency " + shape_str(norm_adjacency) + " does not match " +
                std::to_string(layout.nodes) + " nodes");
  ad::Var conv = ad::matmul(g.constant(layout.flatten(x)), conv_weight);
  ad::Var mixed = ad::matmul(ad::block_left_mul(norm_adjacency, conv), gcn_weight);
  // Skip connection: without it a node's own series is averaged into its
  // neighbours' before any attention sees it.
  return ad::add_row(ad::add(conv, mixed), bias);
}

Mat embed_graph(const Mat& x, const TokenLayout& layout, const Mat& adjacency, const Mat& conv_weight,
                const Mat& gcn_weight, const Mat& bias) {
  if (adjacency.rows() != layout.nodes || adjacency.cols() != layout.nodes)
    throw Error("embed_graph: adjacency " + shape_str(adjacency) + " does not match " + std::to_string(layout.nodes) +
                " nodes");
  ad::Graph g(false);
  return embed_graph(g, x, layout, normalized_adjacency(adjacency), g.constant(conv_weight), g.constant(gcn_weight),
                     g.constant(bias))
      .value();
}

ad::Var project_tokens(const ad::Var& tokens, const ad::Var& weight, const ad::Var& bias) {
  return ad::linear(tokens, weight, bias);
}

Mat project_tokens(const Mat& tokens, const TokenLayout& layout, const Mat& weight, const Mat& bias) {
  ad::Graph g(false);
  return layout.unflatten(project_tokens(g.constant(tokens), g.constant(weight), g.constant(bias)).value());
}

}  // namespace urbandit
