#pragma once
// Independent oracles and small constructed instances shared by the unit
// tests and the acceptance binary. Nothing here calls the code under test
// to compute an expected value.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "prefopt/analysis.hpp"

namespace fx {

using namespace prefopt;

inline EnvSpec tiny_spec(std::uint64_t seed = 3, int vocab = 3, int length = 2) {
    EnvSpec s;
    s.vocab_size = vocab;
    s.response_len = length;
    s.train_prompts = 4;
    s.eval_prompts = 2;
    s.seed = seed;
    return s;
}

inline PolicyParams random_policy(const Environment& env, Rng& rng, double scale = 1.0) {
    PolicyParams p(PolicyShape::of(env), env.digest());
    std::normal_distribution<double> n(0.0, scale);
    for (double& v : p.logits) v = n(rng);
    return p;
}

inline Response random_response(int vocab, int length, Rng& rng) {
    std::uniform_int_distribution<int> tok(0, vocab - 1);
    Response y(static_cast<std::size_t>(length));
    for (auto& t : y) t = tok(rng);
    return y;
}

// Distinct responses, labelled by gold.
inline PreferenceSample random_pair(const Environment& env, PromptId x, Rng& rng) {
    Response a = random_response(env.vocab(), env.length(), rng);
    Response b = a;
    while (b == a) b = random_response(env.vocab(), env.length(), rng);
    PreferenceSample s;
    s.prompt = x;
    const double ga = env.gold_score(x, a);
    const double gb = env.gold_score(x, b);
    s.chosen = ga >= gb ? a : b;
    s.rejected = ga >= gb ? b : a;
    s.gold_chosen = std::max(ga, gb);
    s.gold_rejected = std::min(ga, gb);
    s.source = "sft2";
    return s;
}

// ---------------------------------------------------------------- oracles

// Chain multiplication of explicit softmax rows, no shared tables.
inline double chain_log_prob(const PolicyParams& th, PromptId x, const Response& y) {
    const int v = th.shape.vocab;
    auto row_softmax = [v](const double* row, int k) {
        double mx = row[0];
        for (int i = 1; i < v; ++i) mx = std::max(mx, row[i]);
        double z = 0.0;
        for (int i = 0; i < v; ++i) z += std::exp(row[i] - mx);
        return std::exp(row[k] - mx) / z;
    };
    double p = row_softmax(th.start_row(x).data(), y[0]);
    for (std::size_t t = 1; t < y.size(); ++t) p *= row_softmax(th.trans_row(x, y[t - 1]).data(), y[t]);
    return std::log(p);
}

// Raw feature vector by direct counting.
inline std::vector<double> count_features(int vocab, int prompts, PromptId x, const Response& y) {
    const std::size_t v = static_cast<std::size_t>(vocab);
    std::vector<double> f(v + v * v + static_cast<std::size_t>(prompts) * v, 0.0);
    for (std::size_t t = 0; t < y.size(); ++t) {
        f[static_cast<std::size_t>(y[t])] += 1;
        f[v + v * v + static_cast<std::size_t>(x) * v + static_cast<std::size_t>(y[t])] += 1;
        if (t > 0) f[v + static_cast<std::size_t>(y[t - 1]) * v + static_cast<std::size_t>(y[t])] += 1;
    }
    return f;
}

inline double dense_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) s += a[i] * b[i];
    return s;
}

// Central differences of f over the listed coordinates of params.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> params, const std::vector<std::size_t>& idx,
                                       double h = 1e-5) {
    std::vector<double> g(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double keep = params[idx[k]];
        params[idx[k]] = keep + h;
        const double up = f(params);
        params[idx[k]] = keep - h;
        const double dn = f(params);
        params[idx[k]] = keep;
        g[k] = (up - dn) / (2 * h);
    }
    return g;
}

// |a - b| / max(|a|, |b|) in the Euclidean norm; 0 when both vanish.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::sqrt(std::max(na, nb));
    return den < 1e-12 ? std::sqrt(d) : std::sqrt(d) / den;
}

inline std::vector<double> pick(const std::vector<double>& dense, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    for (std::size_t i : idx) out.push_back(dense[i]);
    return out;
}

// Parameter indices owned by prompt x.
inline std::vector<std::size_t> prompt_indices(const PolicyShape& s, PromptId x) {
    std::vector<std::size_t> idx;
    for (int k = 0; k < s.vocab; ++k) idx.push_back(s.start_index(x, k));
    for (int a = 0; a < s.vocab; ++a)
        for (int k = 0; k < s.vocab; ++k) idx.push_back(s.trans_index(x, a, k));
    return idx;
}

// Upper chi-square quantile via Wilson-Hilferty.
inline double chi2_critical(double df, double z) {
    const double c = 2.0 / (9.0 * df);
    return df * std::pow(1.0 - c + z * std::sqrt(c), 3);
}
inline constexpr double kZ999 = 3.090232306167813;  // standard normal 0.999 quantile

// --------------------------------------------------------- probe cases

struct ProbeCase {
    PolicyParams theta;
    Response chosen;
    Response rejected;
};

inline PolicyParams flat_policy(int vocab, int length, int prompts = 1) {
    return PolicyParams(PolicyShape{vocab, length, prompts});
}

// V=32, L=2, one prompt. Uniform except transition a->b lifted so that
// pi(b|a) = 1/8 = 4 * (1/32); the pairs share only the start row.
inline ProbeCase delta4_case() {
    ProbeCase c{flat_policy(32, 2), {0, 1}, {2, 3}};
    c.theta.trans_row(0, 0)[1] = std::log(31.0 / 7.0);
    return c;
}

// Same shape, uniform policy: delta = 1 by symmetry.
inline ProbeCase delta1_case() { return {flat_policy(32, 2), {0, 1}, {2, 3}}; }

// Linear teacher over the large subset; pairs labelled by the teacher only.
inline double noiseless_rm_accuracy(std::uint64_t seed, std::size_t pairs = 3000) {
    EnvSpec spec = tiny_spec(seed, 4, 3);
    spec.train_prompts = 8;
    const Environment env = Environment::build(spec);
    const FeatureMap& fm = env.feature_map();
    Rng rng = make_rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> teacher(fm.dim());
    for (double& w : teacher) w = n(rng);
    PreferenceDataset ds;
    ds.env_digest = env.digest();
    std::uniform_int_distribution<int> px(0, spec.train_prompts - 1);
    while (ds.samples.size() < pairs) {
        const PromptId x = px(rng);
        const Response a = random_response(spec.vocab_size, spec.response_len, rng);
        const Response b = random_response(spec.vocab_size, spec.response_len, rng);
        const double sa = dense_dot(teacher, count_features(spec.vocab_size, spec.total_prompts(), x, a));
        const double sb = dense_dot(teacher, count_features(spec.vocab_size, spec.total_prompts(), x, b));
        if (sa == sb) continue;
        PreferenceSample s;
        s.prompt = x;
        s.chosen = sa > sb ? a : b;
        s.rejected = sa > sb ? b : a;
        s.gold_chosen = std::max(sa, sb);
        s.gold_rejected = std::min(sa, sb);
        s.source = "teacher";
        ds.samples.push_back(std::move(s));
    }
    RmTrainConfig cfg;
    cfg.seed = seed;
    return train_rm(env, ds, FeatureSubset::large, cfg).params.heldout_accuracy;
}

}  // namespace fx
