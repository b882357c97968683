#pragma once
// Policy evaluation against the gold reward: exact expected gold reward
// (normalized so the SFT policy sits at zero), exact KL to the reference and
// sampled win rate versus SFT.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/env.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

struct EvalRecord {
    std::string role;
    int epoch = -1;
    double gold_reward_raw = 0.0;
    double gold_reward_norm = 0.0;
    double kl_to_ref = 0.0;
    double win_rate_vs_sft = 0.5;
    std::size_t prompt_count = 0;
    std::uint64_t seed = 0;
};

// Mean over prompts of sum_y pi(y|x) gold(x, y).
double expected_gold(const Environment& env, const PolicyParams& theta, std::span<const PromptId> prompts);
double mean_exact_kl(const PolicyParams& theta, const PolicyParams& ref, std::span<const PromptId> prompts);

struct EvalOptions {
    int win_rate_pairs = 1000;  // 0 disables win-rate sampling
    std::uint64_t seed = 0;
};

class Evaluator {
public:
    Evaluator(const Environment& env, PolicyParams sft, std::vector<PromptId> prompts, EvalOptions opts = {});

    EvalRecord evaluate(const PolicyParams& theta, int epoch = -1) const;
    double sft_gold() const noexcept { return sft_gold_; }
    const PolicyParams& sft() const noexcept { return sft_; }
    std::span<const PromptId> prompts() const noexcept { return prompts_; }

private:
    const Environment* env_;
    PolicyParams sft_;
    std::vector<PromptId> prompts_;
    EvalOptions opts_;
    double sft_gold_ = 0.0;
};

EvalRecord evaluate_policy(const Environment& env, const PolicyParams& theta, const PolicyParams& sft,
                           std::span<const PromptId> prompts, std::uint64_t seed, int win_rate_pairs = 1000);

using EpochHook = std::function<EvalRecord(const PolicyParams&, int epoch)>;

}  // namespace prefopt
