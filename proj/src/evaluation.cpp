#include "prefopt/evaluation.hpp"

#include <algorithm>
#include <cmath>

namespace prefopt {

double expected_gold(const Environment& env, const PolicyParams& theta, std::span<const PromptId> prompts) {
    if (prompts.empty()) fail(ErrorKind::config, "no evaluation prompts");
    if (response_space_size(theta.shape.vocab, theta.shape.length, env.spec().enumeration_budget) == 0) {
        fail(ErrorKind::config, "response space exceeds the enumeration budget");
    }
    double total = 0.0;
    for (PromptId x : prompts) {
        const auto lp = log_prob_table(theta, x);
        const auto g = env.gold_table(x);
        double e = 0.0;
        for (std::size_t c = 0; c < lp.size(); ++c) e += std::exp(lp[c]) * g[c];
        total += e;
    }
    return total / static_cast<double>(prompts.size());
}

double mean_exact_kl(const PolicyParams& theta, const PolicyParams& ref, std::span<const PromptId> prompts) {
    if (prompts.empty()) fail(ErrorKind::config, "no evaluation prompts");
    double total = 0.0;
    for (PromptId x : prompts) total += exact_kl(theta, ref, x);
    return total / static_cast<double>(prompts.size());
}

Evaluator::Evaluator(const Environment& env, PolicyParams sft, std::vector<PromptId> prompts, EvalOptions opts)
    : env_(&env), sft_(std::move(sft)), prompts_(std::move(prompts)), opts_(opts) {
    sft_gold_ = expected_gold(env, sft_, prompts_);
}

EvalRecord Evaluator::evaluate(const PolicyParams& theta, int epoch) const {
    EvalRecord rec;
    rec.role = theta.role;
    rec.epoch = epoch;
    rec.gold_reward_raw = expected_gold(*env_, theta, prompts_);
    rec.gold_reward_norm = rec.gold_reward_raw - sft_gold_;
    rec.kl_to_ref = mean_exact_kl(theta, sft_, prompts_);
    rec.prompt_count = prompts_.size();
    rec.seed = opts_.seed;

    if (opts_.win_rate_pairs > 0) {
        Rng rng = make_rng(derive_seed(opts_.seed, "win-rate"));
        const SamplerConfig sampler;
        double wins = 0.0;
        for (int i = 0; i < opts_.win_rate_pairs; ++i) {
            const PromptId x = prompts_[std::min(prompts_.size() - 1,
                                                 static_cast<std::size_t>(uniform01(rng) * static_cast<double>(prompts_.size())))];
            const double a = env_->gold_score(x, sample(theta, x, sampler, rng));
            const double b = env_->gold_score(x, sample(sft_, x, sampler, rng));
            wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        }
        rec.win_rate_vs_sft = wins / opts_.win_rate_pairs;
    }
    return rec;
}

EvalRecord evaluate_policy(const Environment& env, const PolicyParams& theta, const PolicyParams& sft,
                           std::span<const PromptId> prompts, std::uint64_t seed, int win_rate_pairs) {
    Evaluator ev(env, sft, {prompts.begin(), prompts.end()}, {win_rate_pairs, seed});
    return ev.evaluate(theta);
}

}  // namespace prefopt
