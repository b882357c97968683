#include <algorithm>
#include <cmath>

#include "prefopt/analysis.hpp"

namespace prefopt {

Prop1Row prop1_row(const PolicyParams& theta, PromptId x, ResponseView yi, ResponseView yj, int i, int j) {
    Prop1Row row;
    row.i = i;
    row.j = j;
    row.log_delta = log_prob(theta, x, yi) - log_prob(theta, x, yj);
    const SparseVec gi = grad_log_prob(theta, x, yi);
    const SparseVec gj = grad_log_prob(theta, x, yj);
    const double ni = gi.norm();
    const double nj = gj.norm();
    if (std::equal(yi.begin(), yi.end(), yj.begin(), yj.end())) {
        // identical vectors: exact identities, no rounding
        row.log_norm_ratio = 0.0;
        row.cosine = 1.0;
        row.log_delta = 0.0;
        return row;
    }
    row.log_norm_ratio = std::log(ni) - std::log(nj);
    row.cosine = gi.dot(gj) / (ni * nj);
    return row;
}

std::vector<Prop1Row> prop1_stats(const PolicyParams& theta, PromptId x, int k, Rng& rng,
                                  std::vector<Response>* draws) {
    if (k < 2) fail(ErrorKind::config, "prop1 needs K >= 2");
    const SamplerConfig sampler;
    std::vector<Response> ys;
    for (int i = 0; i < k; ++i) ys.push_back(sample(theta, x, sampler, rng));
    std::vector<Prop1Row> rows;
    rows.reserve(static_cast<std::size_t>(k) * (k - 1) / 2);
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            rows.push_back(prop1_row(theta, x, ys[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(j)], i, j));
        }
    }
    if (draws) *draws = std::move(ys);
    return rows;
}

SensitivityReport sensitivity_probe(const PolicyParams& theta, PromptId x, ResponseView chosen,
                                    ResponseView rejected, double alpha, double beta, double weight) {
    if (std::equal(chosen.begin(), chosen.end(), rejected.begin(), rejected.end())) {
        fail(ErrorKind::config, "sensitivity probe needs distinct chosen and rejected responses");
    }
    const Prop1Row geo = prop1_row(theta, x, chosen, rejected);
    SensitivityReport rep;
    rep.step_size = alpha;
    rep.beta = beta;
    rep.weight = weight;
    rep.cosine = geo.cosine;
    rep.log_norm_ratio = geo.log_norm_ratio;
    rep.assumptions_met = std::fabs(geo.log_norm_ratio) <= 0.1 && std::fabs(geo.cosine) <= 0.1;

    const double lc = log_prob(theta, x, chosen);
    const double lr = log_prob(theta, x, rejected);
    rep.delta = std::exp(lc - lr);

    PolicyParams moved = theta;
    const double scale = alpha * beta * weight;
    grad_log_prob(theta, x, chosen).add_to(moved.logits, scale);
    grad_log_prob(theta, x, rejected).add_to(moved.logits, -scale);

    // pi' - pi = pi * expm1(log pi' - log pi)
    rep.change_chosen = std::exp(lc) * std::expm1(log_prob(moved, x, chosen) - lc);
    rep.change_rejected = std::exp(lr) * std::expm1(log_prob(moved, x, rejected) - lr);
    rep.measured_ratio = rep.change_rejected == 0.0 ? INFINITY
                                                    : std::fabs(rep.change_chosen) / std::fabs(rep.change_rejected);
    return rep;
}

}  // namespace prefopt
