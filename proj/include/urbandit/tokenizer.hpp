#pragma once

#include "urbandit/autodiff.hpp"
#include "urbandit/datasets.hpp"

#include <utility>

namespace urbandit {

struct PatchConfig {
  Index p_t = 2;
  Index p_s = 2;  // grid only
  Index dim = 64;
};

/// Spatial organisation of a window: an H x W grid or a graph whose
/// symmetric-normalised adjacency (with self loops) is precomputed.
struct SpatialShape {
  DataKind kind = DataKind::grid;
  Index height = 0;
  Index width = 0;
  Index nodes = 0;
  Mat norm_adjacency;

  Index locations() const { return kind == DataKind::grid ? height * width : nodes; }

  static SpatialShape grid(Index height, Index width);
  static SpatialShape graph(const Mat& adjacency);
  static SpatialShape of(const Dataset& ds);
};

/// D^{-1/2} (A + I) D^{-1/2}
Mat normalized_adjacency(const Mat& adjacency);

/// Token order is t-major then spatial row-major: token = t_patch * s_patches
/// + s_patch. Within a grid patch the values are ordered (dt, dh, dw).
struct TokenLayout {
  DataKind kind = DataKind::grid;
  Index t_steps = 0;
  Index t_patches = 0;
  Index s_patches = 0;
  Index p_t = 1;
  Index p_s = 1;
  Index height = 0;
  Index width = 0;
  Index nodes = 0;

  static TokenLayout make(const SpatialShape& space, Index t_steps, const PatchConfig& cfg);

  Index token_count() const { return t_patches * s_patches; }
  Index patch_size() const { return kind == DataKind::grid ? p_t * p_s * p_s : p_t; }
  Index locations() const { return kind == DataKind::grid ? height * width : nodes; }
  Index token_index(Index t_patch, Index s_patch) const { return t_patch * s_patches + s_patch; }
  std::pair<Index, Index> token_coords(Index token) const { return {token / s_patches, token % s_patches}; }

  /// (time, location) cell of element `e` of token `token`.
  std::pair<Index, Index> cell(Index token, Index e) const;

  /// T x S window -> L x P patch matrix, and its inverse.
  Mat flatten(const Mat& window) const;
  Mat unflatten(const Mat& patches) const;

  std::vector<Index> time_index_per_token() const;
  std::vector<Index> space_index_per_token() const;
};

/// Conv3D with kernel = stride = (p_t, p_s, p_s), as a patch matmul.
/// weight: (p_t p_s p_s) x D, bias: 1 x D. Returns L x D.
ad::Var embed_grid(ad::Graph& g, const Mat& x, const TokenLayout& layout, const ad::Var& weight, const ad::Var& bias);
Mat embed_grid(const Mat& x, const TokenLayout& layout, const Mat& weight, const Mat& bias);

/// A_hat h W with A_hat = normalized_adjacency(adjacency).
Mat gcn_layer(const Mat& h, const Mat& adjacency, const Mat& weight);

/// Per-node Conv1D (kernel = stride = p_t, no bias) to D channels h, then
/// h + gcn_layer(h) per temporal patch, then the bias. Returns (N * T') x D.
ad::Var embed_graph(ad::Graph& g, const Mat& x, const TokenLayout& layout, const Mat& norm_adjacency,
                    const ad::Var& conv_weight, const ad::Var& gcn_weight, const ad::Var& bias);
Mat embed_graph(const Mat& x, const TokenLayout& layout, const Mat& adjacency, const Mat& conv_weight,
                const Mat& gcn_weight, const Mat& bias);

/// Linear head: tokens (L x D) -> patch values (L x P).
ad::Var project_tokens(const ad::Var& tokens, const ad::Var& weight, const ad::Var& bias);
/// Full reconstruction including un-flattening to the window shape.
Mat project_tokens(const Mat& tokens, const TokenLayout& layout, const Mat& weight, const Mat& bias);

}  // namespace urbandit
