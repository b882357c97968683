#include "prefopt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prefopt {

namespace {

void log_softmax_into(std::span<const double> logits, double* out) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lz;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    log_softmax_into(logits, p.data());
    for (double& v : p) v = std::exp(v);
    return p;
}

}  // namespace

std::size_t PolicyShape::response_count() const noexcept {
    return response_space_size(vocab, length, static_cast<std::size_t>(-1));
}

void PolicyParams::check(PromptId x, ResponseView y) const {
    if (x < 0 || x >= shape.prompts) {
        fail(ErrorKind::data, "prompt id " + std::to_string(x) + " out of range");
    }
    if (static_cast<int>(y.size()) != shape.length) {
        fail(ErrorKind::data, "response length " + std::to_string(y.size()) + " != " +
                                  std::to_string(shape.length));
    }
    for (Token t : y) {
        if (t < 0 || t >= shape.vocab) fail(ErrorKind::data, "token " + std::to_string(t) + " out of range");
    }
}

void PolicyParams::check_finite() const {
    for (double v : logits) {
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite policy logit");
    }
}

void SamplerConfig::validate() const {
    if (!(temperature > 0.0)) fail(ErrorKind::config, "sampler temperature must be > 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) fail(ErrorKind::config, "top_p must lie in (0, 1]");
}

PromptTables log_softmax_tables(const PolicyParams& theta, PromptId x) {
    const auto V = theta.shape.row_width();
    PromptTables t{std::vector<double>(V), std::vector<double>(V * V)};
    log_softmax_into(theta.start_row(x), t.start.data());
    for (std::size_t prev = 0; prev < V; ++prev) {
        log_softmax_into(theta.trans_row(x, static_cast<Token>(prev)), t.trans.data() + prev * V);
    }
    return t;
}

std::vector<double> log_prob_table(const PolicyParams& theta, PromptId x) {
    if (x < 0 || x >= theta.shape.prompts) fail(ErrorKind::data, "prompt id out of range");
    const auto V = theta.shape.row_width();
    const PromptTables t = log_softmax_tables(theta, x);
    std::vector<double> cur(t.start);
    for (int pos = 1; pos < theta.shape.length; ++pos) {
        std::vector<double> next(cur.size() * V);
        for (std::size_t c = 0; c < cur.size(); ++c) {
            const double* row = t.trans.data() + (c % V) * V;
            for (std::size_t k = 0; k < V; ++k) next[c * V + k] = cur[c] + row[k];
        }
        cur.swap(next);
    }
    return cur;
}

double log_prob(const PolicyParams& theta, PromptId x, ResponseView y) {
    theta.check(x, y);
    std::vector<double> buf(theta.shape.row_width());
    log_softmax_into(theta.start_row(x), buf.data());
    double lp = buf[y[0]];
    for (std::size_t t = 1; t < y.size(); ++t) {
        log_softmax_into(theta.trans_row(x, y[t - 1]), buf.data());
        lp += buf[y[t]];
    }
    return lp;
}

void accumulate_grad_log_prob(const PolicyParams& theta, const PromptTables& tables, PromptId x,
                              ResponseView y, double scale, std::vector<double>& dense) {
    const auto V = theta.shape.row_width();
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double* lsm = t == 0 ? tables.start.data()
                                   : tables.trans.data() + static_cast<std::size_t>(y[t - 1]) * V;
        const std::size_t base =
            t == 0 ? theta.shape.start_index(x, 0) : theta.shape.trans_index(x, y[t - 1], 0);
        for (std::size_t k = 0; k < V; ++k) dense[base + k] -= scale * std::exp(lsm[k]);
        dense[base + static_cast<std::size_t>(y[t])] += scale;
    }
}

SparseVec grad_log_prob(const PolicyParams& theta, PromptId x, ResponseView y) {
    theta.check(x, y);
    const auto V = theta.shape.row_width();
    std::vector<std::pair<std::size_t, double>> e;
    e.reserve(y.size() * V);
    std::vector<double> buf(V);
    for (std::size_t t = 0; t < y.size(); ++t) {
        const auto row = t == 0 ? theta.start_row(x) : theta.trans_row(x, y[t - 1]);
        log_softmax_into(row, buf.data());
        const std::size_t base =
            t == 0 ? theta.shape.start_index(x, 0) : theta.shape.trans_index(x, y[t - 1], 0);
        for (std::size_t k = 0; k < V; ++k) {
            const double ind = static_cast<Token>(k) == y[t] ? 1.0 : 0.0;
            e.emplace_back(base + k, ind - std::exp(buf[k]));
        }
    }
    return SparseVec::from_entries(std::move(e));
}

std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature,
                                         double top_p) {
    std::vector<double> scaled(logits.begin(), logits.end());
    for (double& v : scaled) v /= temperature;
    std::vector<double> p = softmax(scaled);
    if (top_p >= 1.0) return p;

    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size()) {
        cum += p[order[keep]];
        ++keep;
        if (cum >= top_p) break;
    }
    std::vector<double> out(p.size(), 0.0);
    for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / cum;
    return out;
}

Response sample(const PolicyParams& theta, PromptId x, const SamplerConfig& cfg, Rng& rng) {
    if (x < 0 || x >= theta.shape.prompts) fail(ErrorKind::data, "prompt id out of range");
    Response y(static_cast<std::size_t>(theta.shape.length));
    for (std::size_t t = 0; t < y.size(); ++t) {
        const auto row = t == 0 ? theta.start_row(x) : theta.trans_row(x, y[t - 1]);
        const auto p = nucleus_distribution(row, cfg.temperature, cfg.top_p);
        y[t] = static_cast<Token>(draw_index(p, rng));
    }
    return y;
}

std::vector<EnumeratedResponse> enumerate(const PolicyParams& theta, PromptId x, std::size_t budget) {
    const std::size_t n = response_space_size(theta.shape.vocab, theta.shape.length, budget);
    if (n == 0) fail(ErrorKind::config, "response space exceeds the enumeration budget");
    const auto lp = log_prob_table(theta, x);
    std::vector<EnumeratedResponse> out(n);
    for (std::size_t c = 0; c < n; ++c) {
        out[c].response = decode_response(static_cast<std::uint32_t>(c), theta.shape.vocab, theta.shape.length);
        out[c].probability = std::exp(lp[c]);
    }
    return out;
}

double kl_by_enumeration(const PolicyParams& p, const PolicyParams& q, PromptId x, std::size_t budget) {
    if (!(p.shape == q.shape)) fail(ErrorKind::data, "policy shapes differ");
    if (response_space_size(p.shape.vocab, p.shape.length, budget) == 0) {
        fail(ErrorKind::config, "response space exceeds the enumeration budget");
    }
    const auto lp = log_prob_table(p, x);
    const auto lq = log_prob_table(q, x);
    double kl = 0.0;
    for (std::size_t c = 0; c < lp.size(); ++c) kl += std::exp(lp[c]) * (lp[c] - lq[c]);
    return kl;
}

double kl_by_markov_dp(const PolicyParams& p, const PolicyParams& q, PromptId x) {
    if (!(p.shape == q.shape)) fail(ErrorKind::data, "policy shapes differ");
    const auto V = p.shape.row_width();
    const PromptTables tp = log_softmax_tables(p, x);
    const PromptTables tq = log_softmax_tables(q, x);

    auto row_kl = [&](const double* a, const double* b) {
        double s = 0.0;
        for (std::size_t k = 0; k < V; ++k) s += std::exp(a[k]) * (a[k] - b[k]);
        return s;
    };
    std::vector<double> row_kls(V);
    for (std::size_t prev = 0; prev < V; ++prev) {
        row_kls[prev] = row_kl(tp.trans.data() + prev * V, tq.trans.data() + prev * V);
    }

    // occupancy of the previous token under p
    std::vector<double> occ(V);
    for (std::size_t k = 0; k < V; ++k) occ[k] = std::exp(tp.start[k]);
    double kl = row_kl(tp.start.data(), tq.start.data());
    for (int pos = 1; pos < p.shape.length; ++pos) {
        std::vector<double> next(V, 0.0);
        for (std::size_t prev = 0; prev < V; ++prev) {
            kl += occ[prev] * row_kls[prev];
            for (std::size_t k = 0; k < V; ++k) next[k] += occ[prev] * std::exp(tp.trans[prev * V + k]);
        }
        occ.swap(next);
    }
    return kl;
}

double exact_kl(const PolicyParams& theta, const PolicyParams& ref, PromptId x, std::size_t budget) {
    const double a = kl_by_enumeration(theta, ref, x, budget);
    const double b = kl_by_markov_dp(theta, ref, x);
    if (!(std::fabs(a - b) <= 1e-9)) {
        fail(ErrorKind::numeric, "KL routes disagree for prompt " + std::to_string(x) + ": " +
                                     decimal17(a) + " vs " + decimal17(b));
    }
    return std::max(a, 0.0);
}

PolicyParams sft_train(const Environment& env, std::span<const DemoExample> demos, const SftConfig& cfg) {
    if (demos.empty()) fail(ErrorKind::data, "empty demonstration set");
    PolicyParams theta(PolicyShape::of(env), env.digest());
    theta.role = "sft";
    std::vector<double> counts(theta.logits.size(), 0.0);
    for (const auto& d : demos) {
        theta.check(d.prompt, d.response);
        counts[theta.shape.start_index(d.prompt, d.response[0])] += 1.0;
        for (std::size_t t = 1; t < d.response.size(); ++t) {
            counts[theta.shape.trans_index(d.prompt, d.response[t - 1], d.response[t])] += 1.0;
        }
    }
    for (std::size_t i = 0; i < counts.size(); ++i) theta.logits[i] = std::log(counts[i] + cfg.smoothing);
    return theta;
}

std::vector<DemoExample> sample_demos(const Environment& env, int per_prompt, std::uint64_t seed) {
    if (per_prompt < 1) fail(ErrorKind::config, "demos per prompt must be >= 1");
    std::vector<DemoExample> demos;
    for (PromptId x : env.train_prompts()) {
        const auto p = tilted_distribution(env, x, env.spec().demo_temperature);
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(x)));
        for (int i = 0; i < per_prompt; ++i) {
            const auto code = static_cast<std::uint32_t>(draw_index(p, rng));
            demos.push_back({x, decode_response(code, env.vocab(), env.length())});
        }
    }
    return demos;
}

}  // namespace prefopt
