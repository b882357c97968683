#pragma once
// Filtered DPO: before every epoch the current policy generates one response
// per remaining sample; samples whose chosen response the proxy reward ranks
// below the generation (by more than a margin) are dropped for good.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "prefopt/dpo.hpp"
#include "prefopt/reward.hpp"

namespace prefopt {

struct FdpoConfig {
    DpoConfig dpo;
    int max_epochs = 16;
    double margin = 0.0;  // may be +inf
    SamplerConfig filter_sampler;
    // Refit the proxy RM on the kept set after each pass (off: trained once up front).
    bool retrain_rm = false;
    RmTrainConfig rm;

    void validate(std::size_t dataset_size) const;
};

struct FilterDecision {
    std::size_t sample_index = 0;  // index into the original dataset
    Response generated;
    double proxy_gen = 0.0;
    double proxy_chosen = 0.0;
    bool discarded = false;
    double gold_gen = 0.0;
    double gold_chosen = 0.0;
};

// Alg. line 8 with margin: discard iff r(x, y) > r(x, y_c) + margin.
inline bool discard_rule(double proxy_gen, double proxy_chosen, double margin) {
    return proxy_gen > proxy_chosen + margin;
}

struct FilterPassResult {
    std::vector<std::size_t> kept;     // original indices, input order
    std::vector<std::size_t> removed;
    std::vector<FilterDecision> decisions;
};

// `remaining` holds original dataset indices; one generation per entry from
// the stream derived from (sampler seed, epoch, index).
FilterPassResult filter_pass(const Environment& env, const PolicyParams& theta, const RewardParams& phi,
                             const PreferenceDataset& ds, std::span<const std::size_t> remaining,
                             double margin, const SamplerConfig& sampler, int epoch);

struct FilterMetrics {
    std::size_t true_removals = 0;
    std::size_t false_removals = 0;
    std::size_t missed_removals = 0;
    std::size_t true_keeps = 0;
    double accuracy = 0.0;
    std::optional<double> precision;  // undefined when nothing was removed
    std::optional<double> recall;     // undefined when no removal was warranted
};

// Ground truth: a removal is warranted iff gold_gen > gold_chosen.
FilterMetrics filtering_metrics(std::span<const FilterDecision> decisions);
FilterMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);

struct FilterEpochReport {
    int epoch = 0;
    std::size_t kept = 0;
    std::size_t removed = 0;
    double unfiltered_ratio = 1.0;
    FilterMetrics metrics;
    double gold_reward_norm = 0.0;
    double kl_to_ref = 0.0;
};

struct FdpoResult {
    PolicyParams policy;
    std::vector<StepRecord> steps;
    std::vector<FilterEpochReport> reports;
    std::vector<std::vector<FilterDecision>> decisions;  // per epoch
    std::vector<EvalRecord> evals;
    bool exhausted = false;  // stopped early on an empty kept set
    int epochs_run = 0;
};

FdpoResult train_fdpo(const Environment& env, const PreferenceDataset& ds, const PolicyParams& init,
                      const RewardParams& phi, const FdpoConfig& cfg, const EpochHook& hook = {});

}  // namespace prefopt
