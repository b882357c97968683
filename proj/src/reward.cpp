#include "prefopt/reward.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace prefopt {

std::string to_string(FeatureSubset s) {
    switch (s) {
        case FeatureSubset::small: return "small";
        case FeatureSubset::medium: return "medium";
        case FeatureSubset::large: return "large";
    }
    return "?";
}

FeatureSubset parse_subset(std::string_view s) {
    if (s == "small") return FeatureSubset::small;
    if (s == "medium") return FeatureSubset::medium;
    if (s == "large") return FeatureSubset::large;
    fail(ErrorKind::config, "unknown feature subset '" + std::string(s) + "'");
}

std::size_t subset_dim(const FeatureMap& fm, FeatureSubset s) {
    switch (s) {
        case FeatureSubset::small: return fm.bigram_offset();
        case FeatureSubset::medium: return fm.prompt_offset();
        case FeatureSubset::large: return fm.dim();
    }
    return 0;
}

RewardParams RewardParams::zeros(const FeatureMap& fm, FeatureSubset s) {
    RewardParams p;
    p.subset = s;
    p.weights.assign(subset_dim(fm, s), 0.0);
    return p;
}

void RewardParams::check(const FeatureMap& fm) const {
    if (weights.size() != subset_dim(fm, subset)) {
        fail(ErrorKind::data, "reward weight count " + std::to_string(weights.size()) +
                                  " does not match subset '" + to_string(subset) + "'");
    }
    for (double w : weights) {
        if (!std::isfinite(w)) fail(ErrorKind::numeric, "non-finite reward weight");
    }
}

double rm_score(const FeatureMap& fm, const RewardParams& phi, PromptId x, ResponseView y) {
    return fm.dot(phi.weights, x, y);
}

std::vector<double> rm_score_table(const FeatureMap& fm, const RewardParams& phi, PromptId x) {
    return fm.score_table(phi.weights, x);
}

std::vector<PairRef> pair_refs(std::span<const PreferenceSample> samples) {
    std::vector<PairRef> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.prompt, s.chosen, s.rejected});
    return out;
}

BtResult bt_loss_and_grad(const FeatureMap& fm, const RewardParams& phi, std::span<const PairRef> batch) {
    if (batch.empty()) fail(ErrorKind::data, "empty batch");
    const std::size_t dim = phi.weights.size();
    BtResult res{0.0, std::vector<double>(dim, 0.0)};
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& p : batch) {
        const SparseVec fc = fm.sparse_features(p.prompt, p.chosen, dim);
        const SparseVec fr = fm.sparse_features(p.prompt, p.rejected, dim);
        const double t = fm.dot(phi.weights, p.prompt, p.chosen) - fm.dot(phi.weights, p.prompt, p.rejected);
        res.loss -= log_sigmoid(t) * inv;
        // d/dt [-log sigma(t)] = -sigma(-t)
        const double g = -sigmoid(-t) * inv;
        fc.add_to(res.grad, g);
        fr.add_to(res.grad, -g);
    }
    return res;
}

void RmTrainConfig::validate() const {
    if (!(l2 >= 0.0)) fail(ErrorKind::config, "l2 must be >= 0");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) fail(ErrorKind::config, "heldout fraction must lie in [0, 1)");
    if (max_iterations < 0) fail(ErrorKind::config, "max iterations must be >= 0");
    if (!(initial_step > 0.0)) fail(ErrorKind::config, "initial step must be > 0");
}

namespace {

struct DiffSet {
    std::vector<SparseVec> diffs;
    double l2 = 0.0;

    // Penalized mean loss; fills grad when non-null.
    double eval(const std::vector<double>& w, std::vector<double>* grad) const {
        const double inv = 1.0 / static_cast<double>(diffs.size());
        double loss = 0.0;
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
        for (const auto& d : diffs) {
            double t = 0.0;
            for (const auto& [i, v] : d.entries()) t += w[i] * v;
            loss -= log_sigmoid(t) * inv;
            if (grad) d.add_to(*grad, -sigmoid(-t) * inv);
        }
        double sq = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            sq += w[i] * w[i];
            if (grad) (*grad)[i] += l2 * w[i];
        }
        return loss + 0.5 * l2 * sq;
    }
};

}  // namespace

RmTrainResult train_rm(const Environment& env, const PreferenceDataset& ds, FeatureSubset subset,
                       const RmTrainConfig& cfg) {
    cfg.validate();
    if (ds.samples.empty()) fail(ErrorKind::data, "empty preference dataset");
    if (ds.env_digest != env.digest()) fail(ErrorKind::data, "dataset env digest does not match environment");
    const FeatureMap& fm = env.feature_map();

    std::vector<std::size_t> order(ds.samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split = make_rng(derive_seed(cfg.seed, "rm-split"));
    std::shuffle(order.begin(), order.end(), split);
    auto n_hold = static_cast<std::size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(order.size())));
    if (n_hold >= order.size()) n_hold = order.size() - 1;

    std::vector<PreferenceSample> train;
    std::vector<PreferenceSample> held;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_hold ? held : train).push_back(ds.samples[order[i]]);
    }

    RmTrainResult res;
    res.train_pairs = train.size();
    res.heldout_pairs = held.size();
    res.params = RewardParams::zeros(fm, subset);
    res.params.trained_on = ds.digest();
    res.params.env_digest = env.digest();
    const std::size_t dim = res.params.weights.size();

    DiffSet set;
    set.l2 = cfg.l2;
    bool any = false;
    for (const auto& s : train) {
        SparseVec fc = fm.sparse_features(s.prompt, s.chosen, dim);
        SparseVec fr = fm.sparse_features(s.prompt, s.rejected, dim);
        std::vector<std::pair<std::size_t, double>> e(fc.entries());
        for (const auto& [i, v] : fr.entries()) e.emplace_back(i, -v);
        SparseVec d = SparseVec::from_entries(std::move(e));
        std::vector<std::pair<std::size_t, double>> nz;
        for (const auto& [i, v] : d.entries()) {
            if (v != 0.0) nz.emplace_back(i, v);
        }
        any = any || !nz.empty();
        set.diffs.push_back(SparseVec::from_entries(std::move(nz)));
    }

    auto& w = res.params.weights;
    if (!any) {
        std::cerr << "warning: degenerate preference dataset (no pair differs in the '" << to_string(subset)
                  << "' features); returning a zero-weight reward model\n";
        res.degenerate = true;
        res.params.heldout_accuracy = 0.5;
        return res;
    }

    std::vector<double> grad(dim);
    std::vector<double> trial(dim);
    double loss = set.eval(w, &grad);
    double step = cfg.initial_step;
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    double gnorm = norm(grad);
    if (cfg.record_losses) res.accepted_losses.push_back(loss);

    int it = 0;
    for (; it < cfg.max_iterations && gnorm > cfg.grad_tol; ++it) {
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            for (std::size_t i = 0; i < dim; ++i) trial[i] = w[i] - step * grad[i];
            const double trial_loss = set.eval(trial, nullptr);
            if (trial_loss <= loss) {
                w.swap(trial);
                loss = set.eval(w, &grad);
                gnorm = norm(grad);
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        if (cfg.record_losses) res.accepted_losses.push_back(loss);
    }
    res.iterations = it;
    res.final_grad_norm = gnorm;
    res.params.check(fm);
    res.params.heldout_accuracy =
        pairwise_accuracy(fm, res.params, held.empty() ? std::span<const PreferenceSample>(train)
                                                       : std::span<const PreferenceSample>(held));
    return res;
}

double pairwise_accuracy(const FeatureMap& fm, const RewardParams& phi, std::span<const PreferenceSample> samples) {
    if (samples.empty()) fail(ErrorKind::data, "empty dataset");
    return pairwise_accuracy_with(samples, [&](PromptId x, ResponseView y) { return rm_score(fm, phi, x, y); });
}

}  // namespace prefopt
