#pragma once
// Prompt-conditioned first-order Markov categorical policy over fixed-length
// responses: exact enumeration, analytic log-prob gradients, nucleus
// sampling, closed-form SFT and exact KL (enumeration and Markov DP).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/core.hpp"
#include "prefopt/env.hpp"

namespace prefopt {

struct PolicyShape {
    int vocab = 0;
    int length = 0;
    int prompts = 0;

    std::size_t row_width() const noexcept { return static_cast<std::size_t>(vocab); }
    std::size_t start_block() const noexcept { return static_cast<std::size_t>(prompts) * vocab; }
    std::size_t param_count() const noexcept {
        return start_block() + static_cast<std::size_t>(prompts) * vocab * vocab;
    }
    std::size_t start_index(PromptId x, Token k) const noexcept {
        return static_cast<std::size_t>(x) * vocab + k;
    }
    std::size_t trans_index(PromptId x, Token prev, Token k) const noexcept {
        return start_block() + (static_cast<std::size_t>(x) * vocab + prev) * vocab + k;
    }
    std::size_t response_count() const noexcept;

    static PolicyShape of(const Environment& env) {
        return {env.vocab(), env.length(), env.spec().total_prompts()};
    }
    bool operator==(const PolicyShape&) const = default;
};

// theta: flat logits, start block [prompt][token] followed by the transition
// block [prompt][prev][token].
struct PolicyParams {
    PolicyShape shape;
    std::vector<double> logits;
    std::string env_digest;
    std::string role = "sft";

    PolicyParams() = default;
    explicit PolicyParams(PolicyShape s, std::string digest = {})
        : shape(s), logits(s.param_count(), 0.0), env_digest(std::move(digest)) {}

    std::span<const double> start_row(PromptId x) const {
        return {logits.data() + shape.start_index(x, 0), shape.row_width()};
    }
    std::span<const double> trans_row(PromptId x, Token prev) const {
        return {logits.data() + shape.trans_index(x, prev, 0), shape.row_width()};
    }
    std::span<double> start_row(PromptId x) {
        return {logits.data() + shape.start_index(x, 0), shape.row_width()};
    }
    std::span<double> trans_row(PromptId x, Token prev) {
        return {logits.data() + shape.trans_index(x, prev, 0), shape.row_width()};
    }

    void check(PromptId x, ResponseView y) const;
    void check_finite() const;
};

struct SamplerConfig {
    double temperature = 1.0;
    double top_p = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-prompt log-softmax tables; the building block of every exact routine.
struct PromptTables {
    std::vector<double> start;  // V
    std::vector<double> trans;  // V*V, row = previous token
};
PromptTables log_softmax_tables(const PolicyParams& theta, PromptId x);

// log pi(y|x) for every response of x, lexicographic order.
std::vector<double> log_prob_table(const PolicyParams& theta, PromptId x);

double log_prob(const PolicyParams& theta, PromptId x, ResponseView y);
SparseVec grad_log_prob(const PolicyParams& theta, PromptId x, ResponseView y);

// Adds scale * grad log pi(y|x) into a dense parameter-space buffer.
void accumulate_grad_log_prob(const PolicyParams& theta, const PromptTables& tables, PromptId x,
                              ResponseView y, double scale, std::vector<double>& dense);

Response sample(const PolicyParams& theta, PromptId x, const SamplerConfig& cfg, Rng& rng);

// Nucleus-truncated next-token distribution from raw logits (exposed for tests).
std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature,
                                         double top_p);

struct EnumeratedResponse {
    Response response;
    double probability = 0.0;
};
std::vector<EnumeratedResponse> enumerate(const PolicyParams& theta, PromptId x,
                                          std::size_t budget = 65536);

double kl_by_enumeration(const PolicyParams& p, const PolicyParams& q, PromptId x,
                         std::size_t budget = 65536);
double kl_by_markov_dp(const PolicyParams& p, const PolicyParams& q, PromptId x);
// Enumeration value after asserting agreement with the DP route.
double exact_kl(const PolicyParams& theta, const PolicyParams& ref, PromptId x,
                std::size_t budget = 65536);

struct DemoExample {
    PromptId prompt = 0;
    Response response;
};

struct SftConfig {
    double smoothing = 0.5;
};

PolicyParams sft_train(const Environment& env, std::span<const DemoExample> demos,
                       const SftConfig& cfg = {});

// Demonstrations drawn from the gold-tilted distribution at the env's
// demo temperature, `per_prompt` for each train prompt.
std::vector<DemoExample> sample_demos(const Environment& env, int per_prompt, std::uint64_t seed);

}  // namespace prefopt
