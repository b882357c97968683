#include "prefopt/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace prefopt {

void EnvSpec::validate() const {
    if (vocab_size < 2) fail(ErrorKind::config, "vocab_size must be >= 2");
    if (response_len < 1) fail(ErrorKind::config, "response_len must be >= 1");
    if (train_prompts < 2) fail(ErrorKind::config, "train_prompts must be >= 2");
    if (eval_prompts < 1) fail(ErrorKind::config, "eval_prompts must be >= 1");
    if (!(demo_temperature > 0.0)) fail(ErrorKind::config, "demo_temperature must be > 0");
    if (response_space_size(vocab_size, response_len, enumeration_budget) == 0) {
        fail(ErrorKind::config, "response space " + std::to_string(vocab_size) + "^" +
                                    std::to_string(response_len) +
                                    " exceeds the enumeration budget of " +
                                    std::to_string(enumeration_budget));
    }
}

std::size_t response_space_size(int vocab, int length, std::size_t cap) {
    std::size_t n = 1;
    for (int t = 0; t < length; ++t) {
        if (n > cap / static_cast<std::size_t>(vocab)) return 0;
        n *= static_cast<std::size_t>(vocab);
    }
    return n <= cap ? n : 0;
}

std::uint32_t encode_response(ResponseView y, int vocab) {
    std::uint32_t code = 0;
    for (Token t : y) code = code * static_cast<std::uint32_t>(vocab) + static_cast<std::uint32_t>(t);
    return code;
}

Response decode_response(std::uint32_t code, int vocab, int length) {
    Response y(static_cast<std::size_t>(length));
    for (int t = length - 1; t >= 0; --t) {
        y[static_cast<std::size_t>(t)] = static_cast<Token>(code % static_cast<std::uint32_t>(vocab));
        code /= static_cast<std::uint32_t>(vocab);
    }
    return y;
}

FeatureMap::FeatureMap(int vocab, int length, int prompts)
    : vocab_(vocab), length_(length), prompts_(prompts) {}

std::size_t FeatureMap::dim() const noexcept {
    return prompt_offset() + static_cast<std::size_t>(prompts_) * vocab_;
}

void FeatureMap::check(PromptId x, ResponseView y) const {
    if (x < 0 || x >= prompts_) {
        fail(ErrorKind::data, "prompt id " + std::to_string(x) + " out of range");
    }
    if (static_cast<int>(y.size()) != length_) {
        fail(ErrorKind::data, "response length " + std::to_string(y.size()) + " != " +
                                  std::to_string(length_));
    }
    for (Token t : y) {
        if (t < 0 || t >= vocab_) {
            fail(ErrorKind::data, "token " + std::to_string(t) + " out of range");
        }
    }
}

std::vector<double> FeatureMap::features(PromptId x, ResponseView y) const {
    check(x, y);
    std::vector<double> f(dim(), 0.0);
    const std::size_t px = prompt_offset() + static_cast<std::size_t>(x) * vocab_;
    for (std::size_t t = 0; t < y.size(); ++t) {
        f[unigram_offset() + y[t]] += 1.0;
        f[px + y[t]] += 1.0;
        if (t > 0) f[bigram_offset() + static_cast<std::size_t>(y[t - 1]) * vocab_ + y[t]] += 1.0;
    }
    return f;
}

SparseVec FeatureMap::sparse_features(PromptId x, ResponseView y, std::size_t active_dim) const {
    check(x, y);
    std::vector<std::pair<std::size_t, double>> e;
    const std::size_t px = prompt_offset() + static_cast<std::size_t>(x) * vocab_;
    auto put = [&](std::size_t i) {
        if (i < active_dim) e.emplace_back(i, 1.0);
    };
    for (std::size_t t = 0; t < y.size(); ++t) {
        put(unigram_offset() + y[t]);
        put(px + y[t]);
        if (t > 0) put(bigram_offset() + static_cast<std::size_t>(y[t - 1]) * vocab_ + y[t]);
    }
    return SparseVec::from_entries(std::move(e));
}

namespace {

// Per-token and per-transition score contributions implied by a prefix
// weight vector, for a fixed prompt.
struct LinearTerms {
    std::vector<double> token;       // V
    std::vector<double> transition;  // V*V, empty when the bigram block is inactive
};

LinearTerms linear_terms(const FeatureMap& fm, std::span<const double> w, PromptId x) {
    const auto V = static_cast<std::size_t>(fm.vocab());
    LinearTerms lt{std::vector<double>(V, 0.0), {}};
    if (w.size() >= V) {
        for (std::size_t k = 0; k < V; ++k) lt.token[k] += w[k];
    }
    if (w.size() >= fm.prompt_offset()) {
        lt.transition.assign(w.begin() + static_cast<std::ptrdiff_t>(fm.bigram_offset()),
                             w.begin() + static_cast<std::ptrdiff_t>(fm.prompt_offset()));
    }
    const std::size_t px = fm.prompt_offset() + static_cast<std::size_t>(x) * V;
    if (w.size() >= px + V) {
        for (std::size_t k = 0; k < V; ++k) lt.token[k] += w[px + k];
    }
    return lt;
}

}  // namespace

double FeatureMap::dot(std::span<const double> weights, PromptId x, ResponseView y) const {
    check(x, y);
    const LinearTerms lt = linear_terms(*this, weights, x);
    double s = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        s += lt.token[y[t]];
        if (t > 0 && !lt.transition.empty()) {
            s += lt.transition[static_cast<std::size_t>(y[t - 1]) * vocab_ + y[t]];
        }
    }
    return s;
}

std::vector<double> FeatureMap::score_table(std::span<const double> weights, PromptId x) const {
    if (x < 0 || x >= prompts_) fail(ErrorKind::data, "prompt id out of range");
    const LinearTerms lt = linear_terms(*this, weights, x);
    const auto V = static_cast<std::size_t>(vocab_);
    std::vector<double> cur(lt.token);
    for (int t = 1; t < length_; ++t) {
        std::vector<double> next(cur.size() * V);
        for (std::size_t c = 0; c < cur.size(); ++c) {
            const std::size_t last = c % V;
            for (std::size_t k = 0; k < V; ++k) {
                double s = cur[c] + lt.token[k];
                if (!lt.transition.empty()) s += lt.transition[last * V + k];
                next[c * V + k] = s;
            }
        }
        cur.swap(next);
    }
    return cur;
}

Environment::Environment(const EnvSpec& spec, GoldReward gold)
    : spec_(spec),
      map_(spec.vocab_size, spec.response_len, spec.total_prompts()),
      gold_(std::move(gold)),
      responses_(response_space_size(spec.vocab_size, spec.response_len, spec.enumeration_budget)) {
    table_.resize(static_cast<std::size_t>(spec_.total_prompts()) * responses_);
    for (PromptId x = 0; x < spec_.total_prompts(); ++x) {
        const auto raw = map_.score_table(gold_.weights, x);
        auto* out = table_.data() + static_cast<std::size_t>(x) * responses_;
        for (std::size_t c = 0; c < responses_; ++c) out[c] = (raw[c] - gold_.offset) / gold_.scale;
    }

    std::uint64_t h = fnv1a64("prefopt-env/1");
    const std::string head = std::to_string(spec_.vocab_size) + "|" + std::to_string(spec_.response_len) +
                             "|" + std::to_string(spec_.train_prompts) + "|" +
                             std::to_string(spec_.eval_prompts) + "|" + std::to_string(spec_.seed) + "|" +
                             hex_double(spec_.demo_temperature) + "|" +
                             std::to_string(spec_.enumeration_budget);
    h = fnv1a64(head, h);
    for (double w : gold_.weights) h = fnv1a64(hex_double(w), h);
    h = fnv1a64(hex_double(gold_.offset), h);
    h = fnv1a64(hex_double(gold_.scale), h);
    digest_ = hex64(h);
}

Environment Environment::build(const EnvSpec& spec) {
    spec.validate();
    const FeatureMap fm(spec.vocab_size, spec.response_len, spec.total_prompts());
    Rng rng = make_rng(derive_seed(spec.seed, "gold-weights"));
    std::normal_distribution<double> normal(0.0, 1.0);
    GoldReward gold;
    gold.weights.resize(fm.dim());
    for (double& w : gold.weights) w = normal(rng);

    // Two-pass mean/std over the train grid.
    long double sum = 0.0L;
    std::size_t count = 0;
    std::vector<std::vector<double>> raw;
    for (PromptId x = 0; x < spec.train_prompts; ++x) {
        raw.push_back(fm.score_table(gold.weights, x));
        for (double s : raw.back()) sum += s;
        count += raw.back().size();
    }
    const double mean = static_cast<double>(sum / static_cast<long double>(count));
    long double ss = 0.0L;
    for (const auto& row : raw) {
        for (double s : row) ss += static_cast<long double>(s - mean) * (s - mean);
    }
    gold.offset = mean;
    gold.scale = std::sqrt(static_cast<double>(ss / static_cast<long double>(count)));
    if (!(gold.scale > 0.0)) fail(ErrorKind::numeric, "degenerate gold reward (zero variance)");
    return Environment(spec, std::move(gold));
}

Environment Environment::from_parts(const EnvSpec& spec, GoldReward gold) {
    spec.validate();
    const FeatureMap fm(spec.vocab_size, spec.response_len, spec.total_prompts());
    if (gold.weights.size() != fm.dim()) {
        fail(ErrorKind::data, "gold weight count " + std::to_string(gold.weights.size()) +
                                  " does not match feature dimension " + std::to_string(fm.dim()));
    }
    if (!(gold.scale > 0.0)) fail(ErrorKind::data, "gold scale must be positive");
    return Environment(spec, std::move(gold));
}

std::vector<PromptId> Environment::train_prompts() const {
    std::vector<PromptId> out(static_cast<std::size_t>(spec_.train_prompts));
    std::iota(out.begin(), out.end(), 0);
    return out;
}

std::vector<PromptId> Environment::eval_prompts() const {
    std::vector<PromptId> out(static_cast<std::size_t>(spec_.eval_prompts));
    std::iota(out.begin(), out.end(), spec_.train_prompts);
    return out;
}

double Environment::gold_score(PromptId x, ResponseView y) const {
    map_.check(x, y);
    return table_[static_cast<std::size_t>(x) * responses_ + encode_response(y, vocab())];
}

std::span<const double> Environment::gold_table(PromptId x) const {
    if (x < 0 || x >= spec_.total_prompts()) fail(ErrorKind::data, "prompt id out of range");
    return {table_.data() + static_cast<std::size_t>(x) * responses_, responses_};
}

std::vector<double> tilted_distribution(const Environment& env, PromptId x, double temperature) {
    const auto g = env.gold_table(x);
    const double mx = *std::max_element(g.begin(), g.end());
    std::vector<double> p(g.size());
    double z = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        p[c] = std::exp((g[c] - mx) / temperature);
        z += p[c];
    }
    for (double& v : p) v /= z;
    return p;
}

std::size_t draw_index(std::span<const double> probs, Rng& rng) {
    double total = 0.0;
    for (double p : probs) total += p;
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // rounding: fall back to the last positive entry
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return i;
    }
    return probs.size() - 1;
}

}  // namespace prefopt
