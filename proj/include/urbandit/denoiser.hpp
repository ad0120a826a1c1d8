#pragma once

// Spatio-temporal diffusion transformer. A window is tokenized, four prompt
// tokens are prepended, the sequence passes through factorized
// temporal/spatial attention blocks conditioned on the diffusion time via
// adaptive layer norm, and the data tokens are projected back to the window.

#include "urbandit/autodiff.hpp"
#include "urbandit/prompts.hpp"
#include "urbandit/spectral.hpp"
#include "urbandit/tokenizer.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace urbandit {

struct ModelConfig {
  std::string preset = "S";
  int layers = 4;
  Index dim = 256;
  int heads = 4;
  Index p_t = 2;
  Index p_s = 2;
  Index pool_size = 512;
  Index f_max = 64;           // spectral bins kept per location
  Index freq_embed_dim = 64;  // sinusoidal timestep features
  Index max_t_patches = 64;   // positional table sizes
  Index max_s_patches = 256;
  FFTMode fft;
  PromptToggles prompts;
  std::uint64_t seed = 0;

  /// S = (4 layers, D 256, 4 heads), M = (6, 384, 6), L = (12, 384, 12);
  /// p_t = p_s = 2 for all.
  static ModelConfig from_preset(const std::string& name);
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Sinusoidal features of t * 1000: [cos(t f_i), sin(t f_i)] with
/// f_i = 10000^{-i / (dim / 2)}. Returns 1 x dim.
Mat timestep_features(double t, Index dim);

/// Attention groups over a prompt-prefixed sequence (row = kPromptCount +
/// token). Each data group holds one spatial index (temporal) or one time
/// patch (spatial); its keys are the prompt rows plus the group's rows.
std::vector<ad::AttentionGroup> temporal_groups(const TokenLayout& layout);
std::vector<ad::AttentionGroup> spatial_groups(const TokenLayout& layout);
/// Prompt rows query every row.
ad::AttentionGroup prompt_group(const TokenLayout& layout);

class Denoiser {
 public:
  explicit Denoiser(ModelConfig cfg);
  Denoiser(const Denoiser& other);
  Denoiser& operator=(const Denoiser& other);

  const ModelConfig& config() const { return cfg_; }
  void set_prompt_toggles(const PromptToggles& t) { cfg_.prompts = t; }
  void set_fft_mode(const FFTMode& m) { cfg_.fft = m; }

  /// Registration order; stable across runs and used by checkpoints.
  const std::vector<ad::Parameter*>& parameters() const { return order_; }
  ad::Parameter& param(const std::string& name);
  const ad::Parameter& param(const std::string& name) const;
  Index parameter_count() const;
  void zero_grad();

  TokenLayout layout_for(const Mat& x, const SpatialShape& space) const;

  /// Predicted velocity in patch space (L x P) so losses can be taken
  /// without un-flattening.
  ad::Var forward(ad::Graph& g, const Mat& x_composed, const Mat& mask, double t, const SpatialShape& space);

  /// Same, un-flattened to the window shape (T x S), without recording.
  Mat predict_velocity(const Mat& x_composed, const Mat& mask, double t, const SpatialShape& space);

  /// Embedding (with positional tables) followed directly by the output
  /// head: what forward() reduces to while every adaptive gate is zero.
  Mat embed_project_path(const Mat& x, const SpatialShape& space);

  /// Zeroes the adaptive-LN projections of every block (the init state).
  void zero_adaptive();

 private:
  struct Block {
    ad::Parameter *ada_w, *ada_b;
    ad::Parameter *tq_w, *tq_b, *tk_w, *tk_b, *tv_w, *tv_b, *to_w, *to_b;
    ad::Parameter *sq_w, *sq_b, *sk_w, *sk_b, *sv_w, *sv_b, *so_w, *so_b;
    ad::Parameter *m1_w, *m1_b, *m2_w, *m2_b;
  };

  ad::Parameter* add(const std::string& name, Mat value);
  void build(Rng& rng);
  void rebind();
  ad::Var embed(ad::Graph& g, const Mat& x, const TokenLayout& layout, const SpatialShape& space);
  ad::Var add_positions(ad::Graph& g, const ad::Var& tokens, const TokenLayout& layout);
  ad::Var head(ad::Graph& g, const ad::Var& tokens, const TokenLayout& layout);
  ad::Var block(ad::Graph& g, const Block& b, const ad::Var& seq, const ad::Var& cond, const TokenLayout& layout);

  ModelConfig cfg_;
  std::vector<std::unique_ptr<ad::Parameter>> storage_;
  std::vector<ad::Parameter*> order_;
  std::map<std::string, ad::Parameter*> by_name_;
  std::vector<Block> blocks_;
};

}  // namespace urbandit
