#pragma once

// Checkpoint file: "UDCK" magic, u32 format version, u64 header length, a
// JSON header (model config, normalization stats, parameter names and
// shapes, free-form metadata) and the raw float64 parameter data in header
// order.

#include "urbandit/datasets.hpp"
#include "urbandit/denoiser.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>

namespace urbandit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, NormStats> norm;  // keyed by dataset name
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ad::Parameter> params;

  static Checkpoint capture(const Denoiser& model);
  Denoiser restore() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json norm_to_json(const NormStats& s);
NormStats norm_from_json(const nlohmann::json& j);

}  // namespace urbandit
