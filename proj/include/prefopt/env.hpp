#pragma once
// Synthetic task universe: tokens, prompts, the n-gram/prompt feature map
// and the seeded, calibrated gold reward that serves as ground truth.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/core.hpp"

namespace prefopt {

using Token = int;
using PromptId = int;
using Response = std::vector<Token>;
using ResponseView = std::span<const Token>;

struct EnvSpec {
    int vocab_size = 8;
    int response_len = 4;
    int train_prompts = 256;
    int eval_prompts = 64;
    std::uint64_t seed = 0;
    double demo_temperature = 0.5;
    std::size_t enumeration_budget = 65536;

    int total_prompts() const noexcept { return train_prompts + eval_prompts; }
    void validate() const;
};

// Number of length-`length` sequences over `vocab` tokens, or 0 when it
// exceeds `cap`.
std::size_t response_space_size(int vocab, int length, std::size_t cap);

// Response <-> lexicographic rank (base-V number, most significant first).
std::uint32_t encode_response(ResponseView y, int vocab);
Response decode_response(std::uint32_t code, int vocab, int length);

// Layout: [unigram counts V][bigram counts V*V][prompt x unigram (P*V)].
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int vocab, int length, int prompts);

    int vocab() const noexcept { return vocab_; }
    int length() const noexcept { return length_; }
    int prompts() const noexcept { return prompts_; }

    std::size_t dim() const noexcept;
    std::size_t unigram_offset() const noexcept { return 0; }
    std::size_t bigram_offset() const noexcept { return static_cast<std::size_t>(vocab_); }
    std::size_t prompt_offset() const noexcept {
        return static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(vocab_) * vocab_;
    }

    void check(PromptId x, ResponseView y) const;

    std::vector<double> features(PromptId x, ResponseView y) const;
    // Nonzero entries restricted to indices < active_dim.
    SparseVec sparse_features(PromptId x, ResponseView y, std::size_t active_dim) const;

    // w . features(x, y) for a weight vector covering a prefix of the layout.
    double dot(std::span<const double> weights, PromptId x, ResponseView y) const;
    // The same dot product for every response of prompt x, lexicographic order.
    std::vector<double> score_table(std::span<const double> weights, PromptId x) const;

private:
    int vocab_ = 0;
    int length_ = 0;
    int prompts_ = 0;
};

struct GoldReward {
    std::vector<double> weights;
    double offset = 0.0;
    double scale = 1.0;
};

class Environment {
public:
    // Draws gold weights and calibrates them over the train grid.
    static Environment build(const EnvSpec& spec);
    // Reassembles an environment from persisted parts (no re-draw).
    static Environment from_parts(const EnvSpec& spec, GoldReward gold);

    const EnvSpec& spec() const noexcept { return spec_; }
    const FeatureMap& feature_map() const noexcept { return map_; }
    const GoldReward& gold() const noexcept { return gold_; }
    const std::string& digest() const noexcept { return digest_; }

    int vocab() const noexcept { return spec_.vocab_size; }
    int length() const noexcept { return spec_.response_len; }
    std::size_t response_count() const noexcept { return responses_; }
    std::vector<PromptId> train_prompts() const;
    std::vector<PromptId> eval_prompts() const;
    bool is_train_prompt(PromptId x) const noexcept { return x >= 0 && x < spec_.train_prompts; }

    std::vector<double> features(PromptId x, ResponseView y) const { return map_.features(x, y); }
    double gold_score(PromptId x, ResponseView y) const;
    // Calibrated gold score of every response of x (lexicographic order).
    std::span<const double> gold_table(PromptId x) const;

private:
    Environment(const EnvSpec& spec, GoldReward gold);

    EnvSpec spec_;
    FeatureMap map_;
    GoldReward gold_;
    std::size_t responses_ = 0;
    std::vector<double> table_;  // [prompt][response code]
    std::string digest_;
};

// Tilted demonstration distribution softmax(gold(x, .) / temperature).
std::vector<double> tilted_distribution(const Environment& env, PromptId x, double temperature);

// Draws an index from a discrete distribution by inverse CDF.
std::size_t draw_index(std::span<const double> probs, Rng& rng);

}  // namespace prefopt
