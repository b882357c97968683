#pragma once
// Log-linear proxy reward model over a feature-subset prefix, trained with
// the (negated) Bradley-Terry log-likelihood.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/datasets.hpp"
#include "prefopt/env.hpp"

namespace prefopt {

// small = unigram block, medium = unigram + bigram, large = full map.
enum class FeatureSubset { small, medium, large };

std::string to_string(FeatureSubset s);
FeatureSubset parse_subset(std::string_view s);
std::size_t subset_dim(const FeatureMap& fm, FeatureSubset s);

struct RewardParams {
    FeatureSubset subset = FeatureSubset::large;
    std::vector<double> weights;
    std::string trained_on;  // dataset digest
    std::string env_digest;
    double heldout_accuracy = 0.5;

    static RewardParams zeros(const FeatureMap& fm, FeatureSubset s);
    void check(const FeatureMap& fm) const;
};

double rm_score(const FeatureMap& fm, const RewardParams& phi, PromptId x, ResponseView y);
std::vector<double> rm_score_table(const FeatureMap& fm, const RewardParams& phi, PromptId x);

struct PairRef {
    PromptId prompt = 0;
    ResponseView chosen;
    ResponseView rejected;
};
std::vector<PairRef> pair_refs(std::span<const PreferenceSample> samples);

struct BtResult {
    double loss = 0.0;
    std::vector<double> grad;  // over the active subset
};

// Mean of -log sigmoid(r(x, y_c) - r(x, y_r)) and its gradient.
BtResult bt_loss_and_grad(const FeatureMap& fm, const RewardParams& phi, std::span<const PairRef> batch);

struct RmTrainConfig {
    double l2 = 1e-4;               // penalty (l2 / 2) * |phi|^2
    double heldout_fraction = 0.1;
    double grad_tol = 1e-6;
    int max_iterations = 10000;
    double initial_step = 1.0;
    std::uint64_t seed = 0;
    bool record_losses = false;

    void validate() const;
};

struct RmTrainResult {
    RewardParams params;
    std::vector<double> accepted_losses;  // penalized training loss per accepted iteration
    int iterations = 0;
    double final_grad_norm = 0.0;
    bool degenerate = false;
    std::size_t train_pairs = 0;
    std::size_t heldout_pairs = 0;
};

RmTrainResult train_rm(const Environment& env, const PreferenceDataset& ds, FeatureSubset subset,
                       const RmTrainConfig& cfg = {});

// Fraction of pairs ranked correctly by a scorer; ties count one half.
template <class Scorer>
double pairwise_accuracy_with(std::span<const PreferenceSample> samples, Scorer&& score) {
    if (samples.empty()) return 0.5;
    double hits = 0.0;
    for (const auto& s : samples) {
        const double c = score(s.prompt, ResponseView(s.chosen));
        const double r = score(s.prompt, ResponseView(s.rejected));
        hits += c > r ? 1.0 : (c == r ? 0.5 : 0.0);
    }
    return hits / static_cast<double>(samples.size());
}

double pairwise_accuracy(const FeatureMap& fm, const RewardParams& phi, std::span<const PreferenceSample> samples);

}  // namespace prefopt
