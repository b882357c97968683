#pragma once
// Command-line front end: one pipeline stage per invocation, JSON run
// configs with flag overrides, run directories with manifests.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "prefopt/analysis.hpp"

namespace prefopt {

// Default output root when --out is absent; the stage name is appended.
inline constexpr const char* kOutRootEnv = "PREFOPT_OUT_ROOT";

struct RunConfig {
    EnvSpec env;
    std::uint64_t master_seed = 0;
    int demos_per_prompt = 8;
    DatasetConfig dataset;
    FeatureSubset rm_subset = FeatureSubset::large;
    RmTrainConfig rm;
    DpoConfig dpo;
    FdpoConfig fdpo;
    RlConfig rl;
    int win_rate_pairs = 1000;
    bool eval_on_train = true;
    ExperimentPlan experiment;
    std::string out;

    // Explicit stage seeds; unset ones derive from master_seed by stage name.
    std::optional<std::uint64_t> env_seed, sft_seed, dataset_seed, rm_seed, dpo_seed, rl_seed, eval_seed;
    std::uint64_t stage_seed(const std::optional<std::uint64_t>& explicit_seed, std::string_view stage) const;
};

// Unknown keys are config errors.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& cfg);

// Non-negative real or "inf".
double parse_margin(std::string_view text);

// Returns the process exit status (0 ok, 2 usage, 3 config, 4 data, 5 numeric).
int run_cli(int argc, const char* const* argv);

}  // namespace prefopt
