#pragma once

// Command-line entry point: synth, train, fewshot, zeroshot, eval, sample,
// ablate. Configuration is resolved in layers (built-in defaults, --config
// file, URBANDIT_* environment variables, --set key=value) and the fully
// resolved config is logged before any work starts.

#include "urbandit/config.hpp"
#include "urbandit/denoiser.hpp"
#include "urbandit/training.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace urbandit {

inline constexpr const char* kEnvPrefix = "URBANDIT";

/// Every accepted config key.
const std::vector<std::string>& known_config_keys();

/// Fills every known key, starting from the model preset named in `user`.
Config resolve_config(const Config& user);

ModelConfig model_config_from(const Config& resolved);
RFConfig rf_config_from(const Config& resolved);
/// Loads the datasets listed in data.datasets.
TrainPlan plan_from(const Config& resolved);

/// full, w/o F, w/o T, w/o S, w/o M, w/o P.
std::vector<std::pair<std::string, PromptToggles>> ablation_variants();
/// 1, 2, 5, 10, 20, 50.
std::vector<int> ablation_steps();

/// Accepts a manifest file or a dataset directory containing manifest.cfg.
Dataset load_dataset_arg(const std::string& path);

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace urbandit
