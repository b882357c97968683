#pragma once
// KL-regularized policy-gradient baseline: maximizes
//   mean_x E_{y~pi}[r(x, y)] - beta * KL(pi(.|x) || pi_ref(.|x))
// with an exact enumeration gradient and a sampled score-function estimator.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/dpo.hpp"
#include "prefopt/reward.hpp"

namespace prefopt {

enum class RlMode { exact, sampled };
std::string to_string(RlMode m);
RlMode parse_rl_mode(std::string_view s);

struct RlConfig {
    double beta = 0.1;
    double learning_rate = 0.05;
    int epochs = 8;
    int prompts_per_step = 64;
    int samples_per_prompt = 8;
    RlMode mode = RlMode::exact;
    std::uint64_t seed = 0;
    int max_halvings = 30;

    void validate() const;
};

double rl_objective(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                    const RewardParams& phi, std::span<const PromptId> prompts, double beta);

SparseVec rl_grad_exact(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                        const RewardParams& phi, std::span<const PromptId> prompts, double beta);

// Score-function estimator with a per-prompt mean-reward baseline computed
// leave-one-out, which keeps it unbiased.
SparseVec rl_grad_sampled(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                          const RewardParams& phi, std::span<const PromptId> prompts, double beta,
                          int samples_per_prompt, Rng& rng);

struct RlStepRecord {
    int step = 0;
    int epoch = 0;
    double objective = 0.0;  // batch objective after the accepted update
    double step_scale = 1.0;
    std::optional<double> gold_reward_norm;
    std::optional<double> kl_to_ref;
};

struct RlResult {
    PolicyParams policy;
    std::vector<RlStepRecord> steps;
    std::vector<EvalRecord> evals;
};

// Passes over `prompts` (train prompts by default) in reshuffled batches.
RlResult train_rl(const Environment& env, const PolicyParams& init, const PolicyParams& ref,
                  const RewardParams& phi, const RlConfig& cfg, const EpochHook& hook = {},
                  std::vector<PromptId> prompts = {});

}  // namespace prefopt
