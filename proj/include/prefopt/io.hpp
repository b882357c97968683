#pragma once
// Artifact persistence: env/policy/reward JSON with hex-encoded doubles,
// metric CSVs (17 significant digits) and run manifests.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "prefopt/dpo.hpp"
#include "prefopt/env.hpp"
#include "prefopt/fdpo.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/reward.hpp"
#include "prefopt/rl.hpp"

namespace prefopt {

inline constexpr const char* kToolVersion = "prefopt 1.0.0";

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);
// mkdir -p; throws a data error on failure.
void ensure_dir(const std::string& path);

std::string env_json(const Environment& env);
void save_env(const Environment& env, const std::string& path);
Environment load_env(const std::string& path);

std::string policy_json(const PolicyParams& p);
void save_policy(const PolicyParams& p, const std::string& path);
// Rejects a policy built for another environment (when the digest is given).
PolicyParams load_policy(const std::string& path, const std::string& expected_env_digest = {});

void save_reward(const RewardParams& phi, const std::string& path);
RewardParams load_reward(const std::string& path, const std::string& expected_env_digest = {});

std::string dpo_metrics_csv(std::span<const StepRecord> steps);
std::string rl_metrics_csv(std::span<const RlStepRecord> steps);
std::string fdpo_filter_csv(const PreferenceDataset& ds, const FdpoResult& res);
std::string fdpo_epochs_csv(std::span<const FilterEpochReport> reports);
std::string eval_csv(std::span<const EvalRecord> evals);

// manifest.json: tool version, and per stage a config snapshot plus input
// digests; output digests (paths relative to the run directory) are merged
// across stages sharing a directory.
struct Manifest {
    std::string stage;
    std::string config_json;  // serialized JSON object
    std::map<std::string, std::string> inputs;   // path -> digest
    std::map<std::string, std::string> outputs;  // relative path -> digest
};
void write_manifest(const std::string& run_dir, const Manifest& m);

struct DriftEntry {
    std::string path;
    std::string expected;
    std::string actual;
};
// Recomputes output digests; empty result means no drift. A missing manifest
// or a referenced file that no longer exists is a data error.
std::vector<DriftEntry> verify_manifest(const std::string& run_dir);

}  // namespace prefopt
