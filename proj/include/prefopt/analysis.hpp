#pragma once
// Science harness: gradient-geometry statistics behind the chosen/rejected
// sensitivity argument, a first-order sensitivity probe, and multi-seed
// experiment orchestration producing per-seed CSVs and summary verdicts.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prefopt/dpo.hpp"
#include "prefopt/evaluation.hpp"
#include "prefopt/fdpo.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/reward.hpp"
#include "prefopt/rl.hpp"

namespace prefopt {

struct Prop1Row {
    int i = 0;
    int j = 0;
    double log_delta = 0.0;       // log(pi(y_i) / pi(y_j))
    double log_norm_ratio = 0.0;  // log(|grad log pi(y_i)| / |grad log pi(y_j)|)
    double cosine = 0.0;
};

Prop1Row prop1_row(const PolicyParams& theta, PromptId x, ResponseView yi, ResponseView yj, int i = 0, int j = 1);

// K draws at the default sampler, then every unordered pair (i < j).
std::vector<Prop1Row> prop1_stats(const PolicyParams& theta, PromptId x, int k, Rng& rng,
                                  std::vector<Response>* draws = nullptr);

struct SensitivityReport {
    double delta = 0.0;           // pi(y_c) / pi(y_r)
    double measured_ratio = 0.0;  // |d pi(y_c)| / |d pi(y_r)|
    double change_chosen = 0.0;
    double change_rejected = 0.0;
    double cosine = 0.0;
    double log_norm_ratio = 0.0;
    double step_size = 0.0;
    double beta = 0.0;
    double weight = 0.5;
    bool assumptions_met = false;
};

// Applies theta += alpha * beta * w * (grad log pi(y_c) - grad log pi(y_r))
// to a copy of theta and measures both probability changes exactly.
// w defaults to 0.5, its value at theta == theta_ref; it scales both changes alike.
SensitivityReport sensitivity_probe(const PolicyParams& theta, PromptId x, ResponseView chosen,
                                    ResponseView rejected, double alpha = 1e-6, double beta = 0.1,
                                    double weight = 0.5);

// ------------------------------------------------------------- experiments

struct PipelineConfig {
    EnvSpec env;
    int demos_per_prompt = 8;
    std::size_t dataset_size = 4096;
    int bon_n = 16;
    double tilted_fraction = 0.25;
    FeatureSubset rm_subset = FeatureSubset::large;
    RmTrainConfig rm;
    DpoConfig dpo;
    FdpoConfig fdpo;
    RlConfig rl;
    int win_rate_pairs = 1000;
};

struct ExperimentPlan {
    std::string name;
    std::uint64_t master_seed = 0;
    int seeds = 10;
    PipelineConfig pipeline;
    std::string output_dir;  // empty: nothing written
    std::vector<double> margins{0.0, 0.25, 0.5, 1.0};
    std::vector<double> top_ps{1.0, 0.9, 0.7, 0.5};
    int prop1_k = 16;
};

const std::vector<std::string>& experiment_names();

struct ArmStats {
    double mean = 0.0;
    double std_error = 0.0;
    std::vector<double> values;  // one per seed
};

struct Verdict {
    std::size_t passed = 0;
    std::size_t total = 0;
    bool holds = false;
    std::string rule;
};

struct ExperimentReport {
    std::string plan;
    std::map<std::string, ArmStats> arms;
    std::map<std::string, Verdict> verdicts;
    // Named per-seed scalar series used by verdicts (e.g. epoch-0 precision per margin).
    std::map<std::string, std::vector<double>> series;
    std::vector<std::string> files;  // relative paths written
};

ArmStats arm_stats(std::vector<double> values);

ExperimentReport run_experiment(const ExperimentPlan& plan);

// Per-seed pipeline pieces, exposed for the CLI and acceptance suite.
struct SeedContext {
    std::uint64_t seed = 0;
    Environment env;
    PolicyParams sft;
    std::vector<PromptId> eval_prompts;
};
SeedContext prepare_seed(const PipelineConfig& cfg, std::uint64_t seed);

}  // namespace prefopt
