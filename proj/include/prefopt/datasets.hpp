#pragma once
// Preference-pair synthesis (low / BoN-high / 50-50 mix / source mix),
// gold labeling, summary statistics and JSONL persistence.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/env.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

struct PreferenceSample {
    PromptId prompt = 0;
    Response chosen;
    Response rejected;
    double gold_chosen = 0.0;
    double gold_rejected = 0.0;
    std::string source;  // "sft2", "bon(n)" or "tilted"

    bool operator==(const PreferenceSample&) const = default;
};

enum class DatasetMode { low, high, mix, source_mix };

std::string to_string(DatasetMode m);
DatasetMode parse_dataset_mode(std::string_view s);

struct DatasetConfig {
    DatasetMode mode = DatasetMode::low;
    std::size_t size = 4096;
    int bon_n = 16;
    double tilted_fraction = 0.25;  // source_mix only
    std::uint64_t seed = 0;
    SamplerConfig sampler;          // generation sampler for SFT draws

    void validate() const;
};

struct PreferenceDataset {
    std::vector<PreferenceSample> samples;
    std::string env_digest;
    DatasetConfig config;

    std::size_t size() const noexcept { return samples.size(); }
    std::string digest() const;
};

constexpr int kMaxPairRetries = 100;

// Two draws from theta, gold-labeled. Equivalent to gen_pair_bon with n = 2.
PreferenceSample gen_pair_low(const Environment& env, const PolicyParams& theta, PromptId x,
                              const SamplerConfig& sampler, Rng& rng);
// n draws; the gold-best is chosen, a uniformly random other draw is rejected.
PreferenceSample gen_pair_bon(const Environment& env, const PolicyParams& theta, PromptId x, int n,
                              const SamplerConfig& sampler, Rng& rng);
// Both responses drawn from the gold-tilted distribution.
PreferenceSample gen_pair_tilted(const Environment& env, std::span<const double> tilted, PromptId x,
                                 Rng& rng);

PreferenceDataset build_dataset(const DatasetConfig& cfg, const Environment& env,
                                const PolicyParams& theta_sft);

struct DatasetStats {
    double chosen_mean = 0.0;
    double rejected_mean = 0.0;
    double overall_mean = 0.0;
};
DatasetStats dataset_stats(const PreferenceDataset& ds);

void save_dataset(const PreferenceDataset& ds, const std::string& path);
// Rejects files whose env digest differs from `expected_env_digest` (when non-empty).
PreferenceDataset load_dataset(const std::string& path, const std::string& expected_env_digest = {});

}  // namespace prefopt
