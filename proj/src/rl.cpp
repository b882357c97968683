#include "prefopt/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prefopt {

std::string to_string(RlMode m) { return m == RlMode::exact ? "exact" : "sampled"; }

RlMode parse_rl_mode(std::string_view s) {
    if (s == "exact") return RlMode::exact;
    if (s == "sampled") return RlMode::sampled;
    fail(ErrorKind::config, "unknown RL mode '" + std::string(s) + "'");
}

void RlConfig::validate() const {
    if (!(beta > 0.0)) fail(ErrorKind::config, "beta must be > 0");
    if (!(learning_rate >= 0.0)) fail(ErrorKind::config, "learning rate must be >= 0");
    if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
    if (prompts_per_step < 1) fail(ErrorKind::config, "prompts per step must be >= 1");
    if (samples_per_prompt < 2) fail(ErrorKind::config, "samples per prompt must be >= 2");
    if (max_halvings < 0) fail(ErrorKind::config, "max halvings must be >= 0");
}

namespace {

void check_inputs(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                  const RewardParams& phi, std::span<const PromptId> prompts) {
    if (prompts.empty()) fail(ErrorKind::config, "empty prompt set");
    if (!(theta.shape == ref.shape) || !(theta.shape == PolicyShape::of(env))) {
        fail(ErrorKind::data, "policy shape does not match environment");
    }
    phi.check(env.feature_map());
}

void check_budget(const Environment& env) {
    if (response_space_size(env.vocab(), env.length(), env.spec().enumeration_budget) == 0) {
        fail(ErrorKind::config, "response space exceeds the enumeration budget");
    }
}

// Adds scale * sum_y a[y] * grad log pi(y|x) into `dense`, using the
// row-wise identity grad = onehot(token) - softmax(row).
void accumulate_weighted_scores(const PolicyParams& theta, const PromptTables& tables, PromptId x,
                                const std::vector<double>& a, double scale, std::vector<double>& dense) {
    const auto V = theta.shape.row_width();
    const int L = theta.shape.length;
    std::vector<double> start_hits(V, 0.0);
    std::vector<double> trans_hits(V * V, 0.0);
    std::vector<double> trans_mass(V, 0.0);
    double start_mass = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        if (a[c] == 0.0) continue;
        const Response y = decode_response(static_cast<std::uint32_t>(c), theta.shape.vocab, L);
        start_hits[static_cast<std::size_t>(y[0])] += a[c];
        start_mass += a[c];
        for (std::size_t t = 1; t < y.size(); ++t) {
            const auto prev = static_cast<std::size_t>(y[t - 1]);
            trans_hits[prev * V + static_cast<std::size_t>(y[t])] += a[c];
            trans_mass[prev] += a[c];
        }
    }
    for (std::size_t k = 0; k < V; ++k) {
        dense[theta.shape.start_index(x, static_cast<Token>(k))] +=
            scale * (start_hits[k] - start_mass * std::exp(tables.start[k]));
    }
    for (std::size_t prev = 0; prev < V; ++prev) {
        for (std::size_t k = 0; k < V; ++k) {
            dense[theta.shape.trans_index(x, static_cast<Token>(prev), static_cast<Token>(k))] +=
                scale * (trans_hits[prev * V + k] - trans_mass[prev] * std::exp(tables.trans[prev * V + k]));
        }
    }
}

// Exact gradient: E_y[(r - beta * log(pi/pi_ref)) * grad log pi], mean over prompts.
void accumulate_exact(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                      const RewardParams& phi, std::span<const PromptId> prompts, double beta,
                      std::vector<double>& dense) {
    const double inv = 1.0 / static_cast<double>(prompts.size());
    for (PromptId x : prompts) {
        const auto lp = log_prob_table(theta, x);
        const auto lq = log_prob_table(ref, x);
        const auto r = rm_score_table(env.feature_map(), phi, x);
        std::vector<double> a(lp.size());
        for (std::size_t c = 0; c < lp.size(); ++c) a[c] = std::exp(lp[c]) * (r[c] - beta * (lp[c] - lq[c]));
        accumulate_weighted_scores(theta, log_softmax_tables(theta, x), x, a, inv, dense);
    }
}

}  // namespace

double rl_objective(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                    const RewardParams& phi, std::span<const PromptId> prompts, double beta) {
    check_inputs(env, theta, ref, phi, prompts);
    check_budget(env);
    double total = 0.0;
    for (PromptId x : prompts) {
        const auto lp = log_prob_table(theta, x);
        const auto r = rm_score_table(env.feature_map(), phi, x);
        double expected_reward = 0.0;
        for (std::size_t c = 0; c < lp.size(); ++c) expected_reward += std::exp(lp[c]) * r[c];
        total += expected_reward - beta * exact_kl(theta, ref, x, env.spec().enumeration_budget);
    }
    return total / static_cast<double>(prompts.size());
}

SparseVec rl_grad_exact(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                        const RewardParams& phi, std::span<const PromptId> prompts, double beta) {
    check_inputs(env, theta, ref, phi, prompts);
    check_budget(env);
    std::vector<double> dense(theta.logits.size(), 0.0);
    accumulate_exact(env, theta, ref, phi, prompts, beta, dense);
    return SparseVec::from_dense(dense);
}

SparseVec rl_grad_sampled(const Environment& env, const PolicyParams& theta, const PolicyParams& ref,
                          const RewardParams& phi, std::span<const PromptId> prompts, double beta,
                          int samples_per_prompt, Rng& rng) {
    check_inputs(env, theta, ref, phi, prompts);
    if (samples_per_prompt < 2) fail(ErrorKind::config, "samples per prompt must be >= 2");
    const auto S = static_cast<std::size_t>(samples_per_prompt);
    const double inv_prompts = 1.0 / static_cast<double>(prompts.size());
    std::vector<double> dense(theta.logits.size(), 0.0);
    const SamplerConfig sampler;
    for (PromptId x : prompts) {
        const PromptTables tables = log_softmax_tables(theta, x);
        std::vector<Response> ys(S);
        std::vector<double> reward(S);
        std::vector<double> log_ratio(S);
        double mean_reward = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            ys[s] = sample(theta, x, sampler, rng);
            reward[s] = rm_score(env.feature_map(), phi, x, ys[s]);
            log_ratio[s] = log_prob(theta, x, ys[s]) - log_prob(ref, x, ys[s]);
            mean_reward += reward[s];
        }
        mean_reward /= static_cast<double>(S);
        for (std::size_t s = 0; s < S; ++s) {
            // (r - leave-one-out mean) / S == (r - mean) / (S - 1)
            const double coeff = (reward[s] - mean_reward) / static_cast<double>(S - 1) -
                                 beta * log_ratio[s] / static_cast<double>(S);
            accumulate_grad_log_prob(theta, tables, x, ys[s], coeff * inv_prompts, dense);
        }
    }
    return SparseVec::from_dense(dense);
}

RlResult train_rl(const Environment& env, const PolicyParams& init, const PolicyParams& ref,
                  const RewardParams& phi, const RlConfig& cfg, const EpochHook& hook,
                  std::vector<PromptId> prompts) {
    cfg.validate();
    if (prompts.empty()) prompts = env.train_prompts();
    check_inputs(env, init, ref, phi, prompts);
    if (cfg.mode == RlMode::exact) check_budget(env);

    PolicyParams theta = init;
    Optimizer opt(OptimizerKind::adam, theta.logits.size());
    RlResult res;
    int step = 0;
    std::vector<double> dense(theta.logits.size());
    PolicyParams trial = theta;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<PromptId> order = prompts;
        Rng shuffle = make_rng(derive_seed(derive_seed(cfg.seed, "rl-shuffle"), static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle);

        const auto per_step = static_cast<std::size_t>(cfg.prompts_per_step);
        for (std::size_t start = 0; start < order.size(); start += per_step) {
            const std::span<const PromptId> batch(order.data() + start, std::min(per_step, order.size() - start));
            std::fill(dense.begin(), dense.end(), 0.0);
            if (cfg.mode == RlMode::exact) {
                accumulate_exact(env, theta, ref, phi, batch, cfg.beta, dense);
            } else {
                Rng rng = make_rng(derive_seed(derive_seed(cfg.seed, "rl-sample"), static_cast<std::uint64_t>(step)));
                rl_grad_sampled(env, theta, ref, phi, batch, cfg.beta, cfg.samples_per_prompt, rng).add_to(dense);
            }

            RlStepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            double scale = 1.0;
            if (cfg.mode == RlMode::exact) {
                // Step halving keeps the exact batch objective non-decreasing.
                const double before = rl_objective(env, theta, ref, phi, batch, cfg.beta);
                const auto inc = opt.propose(dense, cfg.learning_rate);
                double after = before;
                bool accepted = false;
                for (int h = 0; h <= cfg.max_halvings; ++h) {
                    for (std::size_t i = 0; i < inc.size(); ++i) trial.logits[i] = theta.logits[i] + scale * inc[i];
                    after = rl_objective(env, trial, ref, phi, batch, cfg.beta);
                    if (after >= before) {
                        accepted = true;
                        break;
                    }
                    scale *= 0.5;
                }
                if (!accepted) scale = 0.0;
                opt.apply(theta.logits, dense, cfg.learning_rate, scale);
                rec.objective = accepted ? after : before;
            } else {
                opt.apply(theta.logits, dense, cfg.learning_rate);
                rec.objective = rl_objective(env, theta, ref, phi, batch, cfg.beta);
            }
            rec.step_scale = scale;
            theta.check_finite();
            res.steps.push_back(rec);
            ++step;
        }
        if (hook) {
            EvalRecord ev = hook(theta, epoch);
            res.steps.back().gold_reward_norm = ev.gold_reward_norm;
            res.steps.back().kl_to_ref = ev.kl_to_ref;
            res.evals.push_back(std::move(ev));
        }
    }
    res.policy = std::move(theta);
    res.policy.role = "rl";
    return res;
}

}  // namespace prefopt
