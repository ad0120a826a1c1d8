#pragma once

// Prompt tokens that condition the denoiser: three data-driven prompts
// retrieved from learnable key/value memory pools (time, frequency and
// spatial patterns) and one prompt derived from the task mask.

#include "urbandit/autodiff.hpp"
#include "urbandit/spectral.hpp"
#include "urbandit/tokenizer.hpp"

#include <array>
#include <string>

namespace urbandit {

struct MemoryPool {
  ad::Parameter keys;    // N_pool x D
  ad::Parameter values;  // N_pool x D

  /// Keys ~ N(0, 1), values ~ N(0, value_std^2).
  static MemoryPool make(const std::string& name, Index pool_size, Index dim, Rng& rng, double value_std = 0.02);
  Index size() const { return keys.value.rows(); }
};

/// Which prompts are active. Disabled prompts are replaced by a learned null
/// token.
struct PromptToggles {
  bool time = true;
  bool freq = true;
  bool space = true;
  bool mask = true;

  /// "disable_prompt" syntax: any combination of the letters t, f, s, m
  /// (e.g. "fs"); "all" or "p" disables every prompt, "" disables none.
  static PromptToggles from_disabled(const std::string& letters);
  std::string disabled() const;
  bool operator==(const PromptToggles&) const = default;
};

/// Single-query attention pooling over the time patches of each spatial
/// index, then the mean over spatial indices. tokens: L x D, query: 1 x D.
ad::Var time_pattern(const ad::Var& tokens, const TokenLayout& layout, const ad::Var& query);

/// Pooling over the spatial indices of each time patch, then the mean over
/// time patches.
ad::Var spatial_pattern(const ad::Var& tokens, const TokenLayout& layout, const ad::Var& query);

/// Mean over locations of the spectral features, scaled by 1/T, then a
/// linear map to D. features: S x 2 f_max.
ad::Var freq_pattern(ad::Graph& g, const Mat& features, Index t_steps, const ad::Var& weight, const ad::Var& bias);

/// alpha = softmax(K q / sqrt(D)), prompt = alpha V. alpha is 1 x N_pool.
struct Retrieval {
  ad::Var prompt;
  ad::Var alpha;
};
Retrieval retrieve(const ad::Var& keys, const ad::Var& values, const ad::Var& query);

struct RetrievalResult {
  Mat prompt;
  Mat alpha;
};
RetrievalResult retrieve(const Mat& keys, const Mat& values, const Mat& query);

struct MaskPromptParams {
  ad::Var weight;  // 1 x D
  ad::Var bias;    // 1 x D
  ad::Var pos_t;   // max_t_patches x D
  ad::Var pos_s;   // max_s_patches x D
  ad::Var query;   // 1 x D
};

/// Embeds the per-token masked fraction (scalar -> D plus positional tables)
/// and pools the sequence with a single learned query.
ad::Var mask_prompt(ad::Graph& g, const Mat& mask, const TokenLayout& layout, const MaskPromptParams& p);

inline constexpr Index kPromptCount = 4;

/// [P_t, P_f, P_s, P_m] followed by the tokens.
ad::Var assemble(const std::array<ad::Var, kPromptCount>& bundle, const ad::Var& tokens);

/// Drops the prompt positions again.
ad::Var strip_prompts(const ad::Var& seq);

}  // namespace urbandit
