#include "urbandit/prompts.hpp"

#include "urbandit/masking.hpp"

#include <cmath>

namespace urbandit {

MemoryPool MemoryPool::make(const std::string& name, Index pool_size, Index dim, Rng& rng, double value_std) {
  if (pool_size < 1) throw Error("memory pool '" + name + "' needs at least one entry");
  MemoryPool p;
  p.keys = ad::Parameter(name + ".keys", standard_normal(pool_size, dim, rng));
  p.values = ad::Parameter(name + ".values", value_std * standard_normal(pool_size, dim, rng));
  return p;
}

PromptToggles PromptToggles::from_disabled(const std::string& letters) {
  PromptToggles t;
  if (letters == "all" || letters == "p" || letters == "P") return {false, false, false, false};
  for (char c : letters) {
    switch (c) {
      case 't': case 'T': t.time = false; break;
      case 'f': case 'F': t.freq = false; break;
      case 's': case 'S': t.space = false; break;
      case 'm': case 'M': t.mask = false; break;
      case ' ': case ',': break;
      default: throw Error(std::string("disable_prompt: unknown prompt letter '") + c + "' (expected t, f, s, m)");
    }
  }
  return t;
}

std::string PromptToggles::disabled() const {
  std::string s;
  if (!time) s += 't';
  if (!freq) s += 'f';
  if (!space) s += 's';
  if (!mask) s += 'm';
  return s;
}

ad::Var time_pattern(const ad::Var& tokens, const TokenLayout& layout, const ad::Var& query) {
  if (tokens.rows() != layout.token_count()) throw Error("time_pattern: token count does not match layout");
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(layout.s_patches));
  for (Index s = 0; s < layout.s_patches; ++s)
    for (Index tp = 0; tp < layout.t_patches; ++tp) groups[static_cast<std::size_t>(s)].push_back(layout.token_index(tp, s));
  return ad::mean_rows(ad::attention_pool(tokens, query, groups));
}

ad::Var spatial_pattern(const ad::Var& tokens, const TokenLayout& layout, const ad::Var& query) {
  if (tokens.rows() != layout.token_count()) throw Error("spatial_pattern: token count does not match layout");
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(layout.t_patches));
  for (Index tp = 0; tp < layout.t_patches; ++tp)
    for (Index s = 0; s < layout.s_patches; ++s) groups[static_cast<std::size_t>(tp)].push_back(layout.token_index(tp, s));
  return ad::mean_rows(ad::attention_pool(tokens, query, groups));
}

ad::Var freq_pattern(ad::Graph& g, const Mat& features, Index t_steps, const ad::Var& weight, const ad::Var& bias) {
  if (features.cols() != weight.rows())
    throw Error("freq_pattern: feature width " + std::to_string(features.cols()) + " does not match projection " +
                shape_str(weight.value()));
  Mat pooled = features.colwise().mean() / static_cast<double>(std::max<Index>(t_steps, 1));
  return ad::linear(g.constant(std::move(pooled)), weight, bias);
}

Retrieval retrieve(const ad::Var& keys, const ad::Var& values, const ad::Var& query) {
  if (keys.rows() < 1) throw Error("retrieve: empty memory pool");
  if (keys.rows() != values.rows() || keys.cols() != query.cols() || query.rows() != 1)
    throw Error("retrieve: pool/query shape mismatch");
  const double inv = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  ad::Var alpha = ad::softmax_rows(ad::scale(ad::matmul_nt(query, keys), inv));
  return {ad::matmul(alpha, values), alpha};
}

RetrievalResult retrieve(const Mat& keys, const Mat& values, const Mat& query) {
  ad::Graph g(false);
  Retrieval r = retrieve(g.constant(keys), g.constant(values), g.constant(query));
  return {r.prompt.value(), r.alpha.value()};
}

ad::Var mask_prompt(ad::Graph& g, const Mat& mask, const TokenLayout& layout, const MaskPromptParams& p) {
  if (layout.t_patches > p.pos_t.rows() || layout.s_patches > p.pos_s.rows())
    throw Error("mask_prompt: layout exceeds positional table size");
  ad::Var x = ad::add_row(ad::matmul(g.constant(token_mask_fraction(mask, layout)), p.weight), p.bias);
  x = ad::add(x, ad::gather_rows(p.pos_t, layout.time_index_per_token()));
  x = ad::add(x, ad::gather_rows(p.pos_s, layout.space_index_per_token()));
  std::vector<Index> all(static_cast<std::size_t>(layout.token_count()));
  for (Index i = 0; i < layout.token_count(); ++i) all[static_cast<std::size_t>(i)] = i;
  return ad::attention_pool(x, p.query, {all});
}

ad::Var assemble(const std::array<ad::Var, kPromptCount>& bundle, const ad::Var& tokens) {
  for (const auto& b : bundle)
    if (b.rows() != 1 || b.cols() != tokens.cols()) throw Error("assemble: prompt token must be 1 x D");
  return ad::concat_rows({bundle[0], bundle[1], bundle[2], bundle[3], tokens});
}

ad::Var strip_prompts(const ad::Var& seq) { return ad::slice_rows(seq, kPromptCount, seq.rows() - kPromptCount); }

}  // namespace urbandit
