#include "prefopt/fdpo.hpp"

#include <cmath>
#include <iostream>

namespace prefopt {

void FdpoConfig::validate(std::size_t dataset_size) const {
    dpo.validate(dataset_size);
    if (max_epochs < 1) fail(ErrorKind::config, "max epochs must be >= 1");
    if (!(margin >= 0.0)) fail(ErrorKind::config, "margin must be >= 0");
    filter_sampler.validate();
}

FilterPassResult filter_pass(const Environment& env, const PolicyParams& theta, const RewardParams& phi,
                             const PreferenceDataset& ds, std::span<const std::size_t> remaining,
                             double margin, const SamplerConfig& sampler, int epoch) {
    if (ds.env_digest != env.digest() || theta.env_digest != env.digest() ||
        (!phi.env_digest.empty() && phi.env_digest != env.digest())) {
        fail(ErrorKind::data, "env digest mismatch between policy, reward model and dataset");
    }
    phi.check(env.feature_map());
    FilterPassResult res;
    res.decisions.reserve(remaining.size());
    for (std::size_t idx : remaining) {
        const PreferenceSample& s = ds.samples.at(idx);
        Rng rng = make_rng(derive_seed(sampler.seed, static_cast<std::uint64_t>(epoch), idx));
        FilterDecision d;
        d.sample_index = idx;
        d.generated = sample(theta, s.prompt, sampler, rng);
        d.proxy_gen = rm_score(env.feature_map(), phi, s.prompt, d.generated);
        d.proxy_chosen = rm_score(env.feature_map(), phi, s.prompt, s.chosen);
        d.discarded = discard_rule(d.proxy_gen, d.proxy_chosen, margin);
        d.gold_gen = env.gold_score(s.prompt, d.generated);
        d.gold_chosen = s.gold_chosen;
        (d.discarded ? res.removed : res.kept).push_back(idx);
        res.decisions.push_back(std::move(d));
    }
    return res;
}

FilterMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
    FilterMetrics m;
    m.true_removals = tp;
    m.false_removals = fp;
    m.missed_removals = fn;
    m.true_keeps = tn;
    const std::size_t total = tp + fp + fn + tn;
    m.accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
    if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return m;
}

FilterMetrics filtering_metrics(std::span<const FilterDecision> decisions) {
    if (decisions.empty()) fail(ErrorKind::data, "no filter decisions");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& d : decisions) {
        const bool warranted = d.gold_gen > d.gold_chosen;
        if (d.discarded) {
            (warranted ? tp : fp)++;
        } else {
            (warranted ? fn : tn)++;
        }
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

FdpoResult train_fdpo(const Environment& env, const PreferenceDataset& ds, const PolicyParams& init,
                      const RewardParams& phi, const FdpoConfig& cfg, const EpochHook& hook) {
    if (ds.samples.empty()) fail(ErrorKind::data, "empty preference dataset");
    cfg.validate(ds.samples.size());

    DpoTrainer trainer(init, cfg.dpo);
    RewardParams proxy = phi;
    FdpoResult res;
    std::vector<std::size_t> remaining(ds.samples.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        FilterPassResult pass =
            filter_pass(env, trainer.policy(), proxy, ds, remaining, cfg.margin, cfg.filter_sampler, epoch);
        remaining = pass.kept;

        FilterEpochReport rep;
        rep.epoch = epoch;
        rep.kept = pass.kept.size();
        rep.removed = pass.removed.size();
        rep.unfiltered_ratio = static_cast<double>(pass.kept.size()) / static_cast<double>(ds.samples.size());
        rep.metrics = filtering_metrics(pass.decisions);

        if (remaining.empty()) {
            std::clog << "fdpo: every sample filtered out at epoch " << epoch << "; stopping early\n";
            if (hook) {
                EvalRecord ev = hook(trainer.policy(), epoch);
                rep.gold_reward_norm = ev.gold_reward_norm;
                rep.kl_to_ref = ev.kl_to_ref;
                res.evals.push_back(std::move(ev));
            }
            res.reports.push_back(rep);
            res.decisions.push_back(std::move(pass.decisions));
            res.exhausted = true;
            break;
        }

        std::vector<PreferenceSample> kept;
        kept.reserve(remaining.size());
        for (std::size_t i : remaining) kept.push_back(ds.samples[i]);
        if (cfg.retrain_rm && epoch + 1 < cfg.max_epochs) {
            PreferenceDataset sub{kept, ds.env_digest, ds.config};
            proxy = train_rm(env, sub, phi.subset, cfg.rm).params;
        }
        trainer.run_epoch(kept, epoch);
        res.epochs_run = epoch + 1;

        if (hook) {
            EvalRecord ev = hook(trainer.policy(), epoch);
            rep.gold_reward_norm = ev.gold_reward_norm;
            rep.kl_to_ref = ev.kl_to_ref;
            if (!trainer.steps().empty()) {
                trainer.steps().back().gold_reward_norm = ev.gold_reward_norm;
                trainer.steps().back().kl_to_ref = ev.kl_to_ref;
            }
            res.evals.push_back(std::move(ev));
        }
        res.reports.push_back(rep);
        res.decisions.push_back(std::move(pass.decisions));
    }
    res.policy = trainer.policy();
    res.policy.role = "fdpo";
    res.steps = std::move(trainer.steps());
    return res;
}

}  // namespace prefopt
