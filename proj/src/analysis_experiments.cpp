#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "json.hpp"
#include "prefopt/analysis.hpp"
#include "prefopt/io.hpp"

namespace prefopt {

using ojson = nlohmann::ordered_json;

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"quality_sensitivity", "fdpo_vs_dpo", "rm_size_sweep",
                                                "top_p_sweep",         "margin_sweep", "source_mix",
                                                "prop1"};
    return names;
}

ArmStats arm_stats(std::vector<double> values) {
    ArmStats s;
    s.values = std::move(values);
    if (s.values.empty()) return s;
    const double n = static_cast<double>(s.values.size());
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
    if (s.values.size() > 1) {
        double ss = 0.0;
        for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
        s.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return s;
}

SeedContext prepare_seed(const PipelineConfig& cfg, std::uint64_t seed) {
    EnvSpec spec = cfg.env;
    spec.seed = derive_seed(seed, "env");
    Environment env = Environment::build(spec);
    const auto demos = sample_demos(env, cfg.demos_per_prompt, derive_seed(seed, "demos"));
    PolicyParams sft = sft_train(env, demos);
    auto prompts = env.train_prompts();
    return {seed, std::move(env), std::move(sft), std::move(prompts)};
}

namespace {

std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// Everything one seed of a plan needs; stage seeds are keyed by stage name.
class SeedRun {
public:
    SeedRun(const PipelineConfig& cfg, std::uint64_t seed)
        : cfg_(cfg),
          ctx_(prepare_seed(cfg, seed)),
          eval_(ctx_.env, ctx_.sft, ctx_.eval_prompts, {cfg.win_rate_pairs, derive_seed(seed, "eval")}) {}

    const SeedContext& ctx() const { return ctx_; }
    EpochHook hook() const {
        return [this](const PolicyParams& p, int epoch) { return eval_.evaluate(p, epoch); };
    }

    PreferenceDataset dataset(DatasetMode mode) const {
        DatasetConfig dc;
        dc.mode = mode;
        dc.size = cfg_.dataset_size;
        dc.bon_n = cfg_.bon_n;
        dc.tilted_fraction = cfg_.tilted_fraction;
        dc.seed = derive_seed(ctx_.seed, "dataset-" + to_string(mode));
        return build_dataset(dc, ctx_.env, ctx_.sft);
    }

    RmTrainResult reward(const PreferenceDataset& ds, FeatureSubset subset) const {
        RmTrainConfig rc = cfg_.rm;
        rc.seed = derive_seed(ctx_.seed, "rm");
        return train_rm(ctx_.env, ds, subset, rc);
    }

    DpoConfig dpo_config() const {
        DpoConfig dc = cfg_.dpo;
        dc.shuffle_seed = derive_seed(ctx_.seed, "dpo");
        return dc;
    }

    DpoResult dpo(const PreferenceDataset& ds) const { return train_dpo(ds, ctx_.sft, dpo_config(), hook()); }

    FdpoResult fdpo(const PreferenceDataset& ds, const RewardParams& phi) const {
        return fdpo(ds, phi, cfg_.fdpo.margin, cfg_.fdpo.filter_sampler.top_p);
    }
    FdpoResult fdpo(const PreferenceDataset& ds, const RewardParams& phi, double margin, double top_p) const {
        FdpoConfig fc = cfg_.fdpo;
        fc.dpo = dpo_config();
        fc.margin = margin;
        fc.filter_sampler.top_p = top_p;
        fc.filter_sampler.seed = derive_seed(ctx_.seed, "filter");
        return train_fdpo(ctx_.env, ds, ctx_.sft, phi, fc, hook());
    }

    double default_margin() const { return cfg_.fdpo.margin; }
    double default_top_p() const { return cfg_.fdpo.filter_sampler.top_p; }

    RlResult rl(const RewardParams& phi) const {
        RlConfig rc = cfg_.rl;
        rc.seed = derive_seed(ctx_.seed, "rl");
        return train_rl(ctx_.env, ctx_.sft, ctx_.sft, phi, rc, hook());
    }

private:
    const PipelineConfig& cfg_;
    SeedContext ctx_;
    Evaluator eval_;
};

double final_gold(const std::vector<EvalRecord>& evals) {
    if (evals.empty()) fail(ErrorKind::numeric, "trainer produced no evaluation records");
    return evals.back().gold_reward_norm;
}

bool non_increasing(std::span<const double> v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[i - 1]) return false;
    return true;
}


double removal_rate(const std::vector<FilterDecision>& decisions, const PreferenceDataset& ds, bool bon) {
    std::size_t n = 0, removed = 0;
    for (const auto& d : decisions) {
        const bool is_bon = ds.samples[d.sample_index].source.rfind("bon", 0) == 0;
        if (is_bon != bon) continue;
        ++n;
        removed += d.discarded ? 1 : 0;
    }
    return n == 0 ? 0.0 : static_cast<double>(removed) / static_cast<double>(n);
}

class Bundle {
public:
    explicit Bundle(const ExperimentPlan& plan) : plan_(plan) {
        report.plan = plan.name;
        if (!plan.output_dir.empty()) ensure_dir(plan.output_dir);
    }

    std::string seed_dir(int k) const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "seed_%02d", k);
        return buf;
    }

    void write(const std::string& rel, const std::string& content) {
        if (plan_.output_dir.empty()) return;
        const std::string full = plan_.output_dir + "/" + rel;
        ensure_dir(full.substr(0, full.find_last_of('/')));
        write_file(full, content);
        report.files.push_back(rel);
    }

    void value(const std::string& arm, double v) { values_[arm].push_back(v); }
    const std::vector<double>& values(const std::string& arm) const { return values_.at(arm); }
    void series(const std::string& name, double v) { report.series[name].push_back(v); }

    // Share of seeds where a_i > b_i must reach 80%.
    void paired(const std::string& name, const std::string& a, const std::string& b) {
        const auto& va = values(a);
        const auto& vb = values(b);
        Verdict v;
        v.total = va.size();
        for (std::size_t i = 0; i < va.size(); ++i) v.passed += va[i] > vb[i] ? 1 : 0;
        v.holds = v.passed * 10 >= v.total * 8;
        v.rule = a + " > " + b + " in >= 80% of paired seeds";
        report.verdicts[name] = v;
    }

    void verdict(const std::string& name, std::size_t passed, std::size_t total, bool holds, std::string rule) {
        report.verdicts[name] = {passed, total, holds, std::move(rule)};
    }

    void per_seed_all(const std::string& name, const std::vector<bool>& ok, const std::string& rule) {
        const auto passed = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), true));
        verdict(name, passed, ok.size(), passed == ok.size(), rule);
    }

    void per_seed_80(const std::string& name, const std::vector<bool>& ok, const std::string& rule) {
        const auto passed = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), true));
        verdict(name, passed, ok.size(), passed * 10 >= ok.size() * 8, rule);
    }

    double mean(const std::string& arm) const { return arm_stats(values(arm)).mean; }

    ExperimentReport finish() {
        for (auto& [arm, vals] : values_) report.arms[arm] = arm_stats(vals);
        if (!plan_.output_dir.empty()) {
            ojson j;
            j["plan"] = plan_.name;
            j["master_seed"] = plan_.master_seed;
            j["seeds"] = plan_.seeds;
            j["arms"] = ojson::object();
            for (const auto& [arm, st] : report.arms) {
                j["arms"][arm] = {{"mean", st.mean}, {"std_error", st.std_error}, {"values", st.values}};
            }
            j["verdicts"] = ojson::object();
            for (const auto& [name, v] : report.verdicts) {
                j["verdicts"][name] = {{"count", std::to_string(v.passed) + "/" + std::to_string(v.total)},
                                       {"passed", v.passed},
                                       {"total", v.total},
                                       {"holds", v.holds},
                                       {"rule", v.rule}};
            }
            j["series"] = report.series;
            write_file(plan_.output_dir + "/summary.json", j.dump(2) + "\n");
            report.files.push_back("summary.json");
        }
        return std::move(report);
    }

    ExperimentReport report;

private:
    const ExperimentPlan& plan_;
    std::map<std::string, std::vector<double>> values_;
};

void write_dpo(Bundle& b, const std::string& dir, const DpoResult& r) {
    b.write(dir + "/dpo_metrics.csv", dpo_metrics_csv(r.steps));
    b.write(dir + "/eval.csv", eval_csv(r.evals));
}

void write_fdpo(Bundle& b, const std::string& dir, const PreferenceDataset& ds, const FdpoResult& r) {
    b.write(dir + "/dpo_metrics.csv", dpo_metrics_csv(r.steps));
    b.write(dir + "/fdpo_filter.csv", fdpo_filter_csv(ds, r));
    b.write(dir + "/fdpo_epochs.csv", fdpo_epochs_csv(r.reports));
    b.write(dir + "/eval.csv", eval_csv(r.evals));
}

void write_rl(Bundle& b, const std::string& dir, const RlResult& r) {
    b.write(dir + "/rl_metrics.csv", rl_metrics_csv(r.steps));
    b.write(dir + "/eval.csv", eval_csv(r.evals));
}

bool ratio_monotone(const FdpoResult& r) {
    std::vector<double> ratios;
    for (const auto& rep : r.reports) ratios.push_back(rep.unfiltered_ratio);
    return non_increasing(ratios);
}

// ------------------------------------------------------------------ plans

void quality_sensitivity(Bundle& b, const SeedRun& run, const std::string& dir) {
    const auto high = run.dataset(DatasetMode::high);
    const auto mix = run.dataset(DatasetMode::mix);
    const auto low = run.dataset(DatasetMode::low);
    const auto dh = run.dpo(high);
    const auto dm = run.dpo(mix);
    const auto dl = run.dpo(low);
    const auto rm_high = run.reward(high, FeatureSubset::large);
    const auto rm_mix = run.reward(mix, FeatureSubset::large);
    const auto rh = run.rl(rm_high.params);
    const auto rmx = run.rl(rm_mix.params);
    write_dpo(b, dir + "/dpo_high", dh);
    write_dpo(b, dir + "/dpo_mix", dm);
    write_dpo(b, dir + "/dpo_low", dl);
    write_rl(b, dir + "/rl_high", rh);
    write_rl(b, dir + "/rl_mix", rmx);
    b.value("dpo_high", final_gold(dh.evals));
    b.value("dpo_mix", final_gold(dm.evals));
    b.value("dpo_low", final_gold(dl.evals));
    b.value("rl_high", final_gold(rh.evals));
    b.value("rl_mix", final_gold(rmx.evals));
    b.value("rm_high_accuracy", rm_high.params.heldout_accuracy);
    b.value("rm_mix_accuracy", rm_mix.params.heldout_accuracy);
}

void quality_sensitivity_verdicts(Bundle& b) {
    b.paired("DPO_high_gt_mix", "dpo_high", "dpo_mix");
    b.paired("DPO_mix_gt_low", "dpo_mix", "dpo_low");
    const auto& dh = b.values("dpo_high");
    const auto& dm = b.values("dpo_mix");
    const auto& rh = b.values("rl_high");
    const auto& rm = b.values("rl_mix");
    std::size_t passed = 0;
    for (std::size_t i = 0; i < dh.size(); ++i) passed += std::fabs(rh[i] - rm[i]) < dh[i] - dm[i] ? 1 : 0;
    const double dpo_gap = b.mean("dpo_high") - b.mean("dpo_mix");
    const double rl_gap = b.mean("rl_high") - b.mean("rl_mix");
    b.verdict("RL_gap_lt_DPO_gap", passed, dh.size(), std::fabs(rl_gap) < dpo_gap,
              "|mean RL(high) - RL(mix)| < mean DPO(high) - DPO(mix); count is per-seed");
}

void fdpo_vs_dpo(Bundle& b, const SeedRun& run, const std::string& dir, std::vector<bool>& ratio_ok) {
    const auto high = run.dataset(DatasetMode::high);
    const auto mix = run.dataset(DatasetMode::mix);
    const auto low = run.dataset(DatasetMode::low);
    const auto rm_mix = run.reward(mix, FeatureSubset::large);
    const auto rm_low = run.reward(low, FeatureSubset::large);
    const auto dh = run.dpo(high);
    const auto dm = run.dpo(mix);
    const auto dl = run.dpo(low);
    const auto fm = run.fdpo(mix, rm_mix.params);
    const auto fl = run.fdpo(low, rm_low.params);
    write_dpo(b, dir + "/dpo_high", dh);
    write_dpo(b, dir + "/dpo_mix", dm);
    write_dpo(b, dir + "/dpo_low", dl);
    write_fdpo(b, dir + "/fdpo_mix", mix, fm);
    write_fdpo(b, dir + "/fdpo_low", low, fl);
    b.value("dpo_high", final_gold(dh.evals));
    b.value("dpo_mix", final_gold(dm.evals));
    b.value("dpo_low", final_gold(dl.evals));
    b.value("fdpo_mix", final_gold(fm.evals));
    b.value("fdpo_low", final_gold(fl.evals));
    b.value("rm_mix_accuracy", rm_mix.params.heldout_accuracy);
    b.value("rm_low_accuracy", rm_low.params.heldout_accuracy);
    b.value("fdpo_mix_final_unfiltered_ratio", fm.reports.back().unfiltered_ratio);
    if (!fm.decisions.empty()) {
        b.series("epoch0_removal_rate_bon", removal_rate(fm.decisions.front(), mix, true));
        b.series("epoch0_removal_rate_sft2", removal_rate(fm.decisions.front(), mix, false));
    }
    ratio_ok.push_back(ratio_monotone(fm) && ratio_monotone(fl));
}

void fdpo_vs_dpo_verdicts(Bundle& b, const std::vector<bool>& ratio_ok) {
    b.paired("DPO_high_gt_mix", "dpo_high", "dpo_mix");
    b.paired("fDPO_mix_gt_DPO_mix", "fdpo_mix", "dpo_mix");
    const auto& dh = b.values("dpo_high");
    const auto& dm = b.values("dpo_mix");
    const auto& fm = b.values("fdpo_mix");
    std::size_t passed = 0;
    for (std::size_t i = 0; i < dh.size(); ++i) passed += fm[i] >= dm[i] + 0.5 * (dh[i] - dm[i]) ? 1 : 0;
    const double target = b.mean("dpo_mix") + 0.5 * (b.mean("dpo_high") - b.mean("dpo_mix"));
    b.verdict("fDPO_mix_recovers_half_gap", passed, dh.size(), b.mean("fdpo_mix") >= target,
              "mean fDPO(mix) >= mean DPO(mix) + 0.5 * (mean DPO(high) - mean DPO(mix)); count is per-seed");
    const auto& dl = b.values("dpo_low");
    const auto& fl = b.values("fdpo_low");
    passed = 0;
    for (std::size_t i = 0; i < dl.size(); ++i) passed += fl[i] > dl[i] ? 1 : 0;
    b.verdict("fDPO_low_gt_DPO_low", passed, dl.size(), b.mean("fdpo_low") > b.mean("dpo_low"),
              "mean fDPO(low) > mean DPO(low); count is per-seed");
    const auto& acc = b.values("rm_mix_accuracy");
    std::vector<bool> acc_ok;
    for (double a : acc) acc_ok.push_back(a >= 0.8);
    b.per_seed_all("RM_large_mix_accuracy_ge_0.8", acc_ok, "large-subset RM held-out accuracy >= 0.8 on every seed");
    const auto& bon = b.report.series["epoch0_removal_rate_bon"];
    const auto& sft2 = b.report.series["epoch0_removal_rate_sft2"];
    std::vector<bool> src_ok;
    for (std::size_t i = 0; i < bon.size(); ++i) src_ok.push_back(bon[i] < sft2[i]);
    b.per_seed_80("epoch0_bon_removal_lt_sft2", src_ok, "epoch-0 removal rate of bon(16) pairs < sft2 pairs");
    b.per_seed_all("unfiltered_ratio_nonincreasing", ratio_ok, "unfiltered ratio never rises across epochs");
}

void rm_size_sweep(Bundle& b, const SeedRun& run, const std::string& dir) {
    const auto mix = run.dataset(DatasetMode::mix);
    const auto dm = run.dpo(mix);
    write_dpo(b, dir + "/dpo_mix", dm);
    b.value("dpo_mix", final_gold(dm.evals));
    for (FeatureSubset s : {FeatureSubset::small, FeatureSubset::medium, FeatureSubset::large}) {
        const std::string name = to_string(s);
        const auto rm = run.reward(mix, s);
        const auto fm = run.fdpo(mix, rm.params);
        write_fdpo(b, dir + "/fdpo_mix_" + name, mix, fm);
        b.value("rm_" + name + "_accuracy", rm.params.heldout_accuracy);
        b.value("fdpo_mix_" + name, final_gold(fm.evals));
    }
}

void rm_size_sweep_verdicts(Bundle& b) {
    const auto& s = b.values("rm_small_accuracy");
    const auto& m = b.values("rm_medium_accuracy");
    const auto& l = b.values("rm_large_accuracy");
    std::vector<bool> ok;
    for (std::size_t i = 0; i < s.size(); ++i) ok.push_back(s[i] <= m[i] && m[i] <= l[i]);
    b.per_seed_80("rm_accuracy_grows_with_subset", ok, "held-out accuracy small <= medium <= large");
    b.paired("fDPO_large_rm_gt_small_rm", "fdpo_mix_large", "fdpo_mix_small");
}

void top_p_sweep(Bundle& b, const SeedRun& run, const std::string& dir, std::span<const double> top_ps) {
    const auto mix = run.dataset(DatasetMode::mix);
    const auto rm = run.reward(mix, FeatureSubset::large);
    for (double tp : top_ps) {
        const auto fm = run.fdpo(mix, rm.params, run.default_margin(), tp);
        write_fdpo(b, dir + "/fdpo_mix_top_p_" + fmt_num(tp), mix, fm);
        b.value("fdpo_mix_top_p_" + fmt_num(tp), final_gold(fm.evals));
    }
}

void top_p_sweep_verdicts(Bundle& b, std::span<const double> top_ps) {
    if (top_ps.size() < 2) return;
    const std::string ref = "fdpo_mix_top_p_" + fmt_num(top_ps.front());
    std::size_t passed = 0;
    for (std::size_t i = 1; i < top_ps.size(); ++i) {
        passed += b.mean("fdpo_mix_top_p_" + fmt_num(top_ps[i])) <= b.mean(ref) ? 1 : 0;
    }
    b.verdict("lower_top_p_no_gain", passed, top_ps.size() - 1, passed == top_ps.size() - 1,
              "no swept top_p beats " + ref + " in mean final gold reward");
}

struct MarginChecks {
    std::vector<bool> precision, recall, removed, nested;
};

void margin_sweep(Bundle& b, const SeedRun& run, const std::string& dir, std::span<const double> margins,
                  MarginChecks& checks) {
    const auto mix = run.dataset(DatasetMode::mix);
    const auto rm = run.reward(mix, FeatureSubset::large);
    std::vector<std::optional<double>> precision, recall;
    std::vector<double> removed;
    std::vector<std::vector<bool>> removed_sets;
    for (double m : margins) {
        const auto fm = run.fdpo(mix, rm.params, m, run.default_top_p());
        const std::string tag = "eps_" + fmt_num(m);
        write_fdpo(b, dir + "/fdpo_mix_" + tag, mix, fm);
        b.value("fdpo_mix_" + tag, final_gold(fm.evals));
        const auto& r0 = fm.reports.front();
        precision.push_back(r0.metrics.precision);
        recall.push_back(r0.metrics.recall);
        removed.push_back(static_cast<double>(r0.removed));
        b.series("epoch0_precision_" + tag, r0.metrics.precision.value_or(-1.0));
        b.series("epoch0_recall_" + tag, r0.metrics.recall.value_or(-1.0));
        b.series("epoch0_removed_" + tag, static_cast<double>(r0.removed));
        std::vector<bool> set(mix.size(), false);
        for (const auto& d : fm.decisions.front()) set[d.sample_index] = d.discarded;
        removed_sets.push_back(std::move(set));
    }
    // An undefined precision or recall anywhere in the sweep fails that seed.
    auto monotone = [](const std::vector<std::optional<double>>& v, bool up) {
        for (std::size_t i = 1; i < v.size(); ++i) {
            if (!v[i] || !v[i - 1]) return false;
            if (up ? *v[i] < *v[i - 1] : *v[i] > *v[i - 1]) return false;
        }
        return !v.empty() && v.front().has_value();
    };
    checks.precision.push_back(monotone(precision, true));
    checks.recall.push_back(monotone(recall, false));
    checks.removed.push_back(non_increasing(removed));
    bool nested = true;
    for (std::size_t i = 1; i < removed_sets.size(); ++i) {
        for (std::size_t j = 0; j < mix.size(); ++j) nested = nested && (!removed_sets[i][j] || removed_sets[i - 1][j]);
    }
    checks.nested.push_back(nested);
}

void margin_sweep_verdicts(Bundle& b, const MarginChecks& c) {
    b.per_seed_80("epoch0_precision_nondecreasing", c.precision, "epoch-0 precision non-decreasing in margin");
    b.per_seed_80("epoch0_recall_nonincreasing", c.recall, "epoch-0 recall non-increasing in margin");
    b.per_seed_all("epoch0_removed_nonincreasing", c.removed, "epoch-0 removed count non-increasing in margin");
    b.per_seed_all("epoch0_removed_sets_nested", c.nested, "removed(eps2) subset of removed(eps1) for eps1 < eps2");
}

void source_mix(Bundle& b, const SeedRun& run, const std::string& dir) {
    const auto ds = run.dataset(DatasetMode::source_mix);
    const auto rm = run.reward(ds, FeatureSubset::large);
    const auto d = run.dpo(ds);
    const auto f = run.fdpo(ds, rm.params);
    write_dpo(b, dir + "/dpo_source_mix", d);
    write_fdpo(b, dir + "/fdpo_source_mix", ds, f);
    b.value("dpo_source_mix", final_gold(d.evals));
    b.value("fdpo_source_mix", final_gold(f.evals));
    b.value("dpo_source_mix_win_rate", d.evals.back().win_rate_vs_sft);
    b.value("fdpo_source_mix_win_rate", f.evals.back().win_rate_vs_sft);
    double tilted = 0.0, sft = 0.0;
    std::size_t nt = 0, ns = 0;
    for (const auto& s : ds.samples) {
        if (s.source == "tilted") {
            tilted += s.gold_chosen;
            ++nt;
        } else {
            sft += s.gold_chosen;
            ++ns;
        }
    }
    b.series("chosen_mean_tilted", nt ? tilted / static_cast<double>(nt) : 0.0);
    b.series("chosen_mean_sft2", ns ? sft / static_cast<double>(ns) : 0.0);
}

void source_mix_verdicts(Bundle& b) {
    const auto& d = b.values("dpo_source_mix");
    const auto& f = b.values("fdpo_source_mix");
    std::size_t passed = 0;
    for (std::size_t i = 0; i < d.size(); ++i) passed += f[i] > d[i] ? 1 : 0;
    b.verdict("fDPO_gt_DPO", passed, d.size(), b.mean("fdpo_source_mix") > b.mean("dpo_source_mix"),
              "mean fDPO > mean DPO on the source-mix dataset; count is per-seed");
    b.verdict("fDPO_win_rate_gt_DPO", 0, 0, b.mean("fdpo_source_mix_win_rate") > b.mean("dpo_source_mix_win_rate"),
              "mean win rate vs SFT of fDPO > DPO");
    const auto& t = b.report.series["chosen_mean_tilted"];
    const auto& s = b.report.series["chosen_mean_sft2"];
    std::vector<bool> ok;
    for (std::size_t i = 0; i < t.size(); ++i) ok.push_back(t[i] > s[i]);
    b.per_seed_80("tilted_chosen_gt_sft2", ok, "chosen gold mean of tilted pairs > sft2 pairs");
}

struct Prop1Checks {
    std::vector<bool> rows;
    std::size_t gated = 0;
    std::size_t gated_in_band = 0;
};

void prop1(Bundle& b, const SeedRun& run, const std::string& dir, int k, Prop1Checks& checks) {
    const auto& ctx = run.ctx();
    const int prompts = std::min(8, ctx.env.spec().train_prompts);
    const std::uint64_t base = derive_seed(ctx.seed, "prop1");
    std::string rows_csv = "prompt,i,j,log_delta,log_norm_ratio,cosine\n";
    std::string probe_csv = "prompt,i,j,delta,measured_ratio,cosine,log_norm_ratio,assumptions_met\n";
    bool rows_ok = true;
    std::size_t pairs = 0, met = 0;
    double abs_cos = 0.0, abs_lnr = 0.0;
    for (PromptId x = 0; x < prompts; ++x) {
        Rng rng = make_rng(derive_seed(base, static_cast<std::uint64_t>(x)));
        std::vector<Response> ys;
        const auto rows = prop1_stats(ctx.sft, x, k, rng, &ys);
        rows_ok = rows_ok && rows.size() == static_cast<std::size_t>(k) * (k - 1) / 2;
        for (const auto& r : rows) {
            rows_csv += std::to_string(x) + "," + std::to_string(r.i) + "," + std::to_string(r.j) + "," +
                        decimal17(r.log_delta) + "," + decimal17(r.log_norm_ratio) + "," + decimal17(r.cosine) + "\n";
            const Response& yi = ys[static_cast<std::size_t>(r.i)];
            const Response& yj = ys[static_cast<std::size_t>(r.j)];
            if (yi == yj) continue;
            const bool i_first = ctx.env.gold_score(x, yi) >= ctx.env.gold_score(x, yj);
            const auto rep = sensitivity_probe(ctx.sft, x, i_first ? yi : yj, i_first ? yj : yi);
            probe_csv += std::to_string(x) + "," + std::to_string(r.i) + "," + std::to_string(r.j) + "," +
                         decimal17(rep.delta) + "," + decimal17(rep.measured_ratio) + "," + decimal17(rep.cosine) +
                         "," + decimal17(rep.log_norm_ratio) + "," + (rep.assumptions_met ? "1" : "0") + "\n";
            ++pairs;
            abs_cos += std::fabs(rep.cosine);
            abs_lnr += std::fabs(rep.log_norm_ratio);
            if (rep.assumptions_met) {
                ++met;
                ++checks.gated;
                const double q = rep.measured_ratio / rep.delta;
                checks.gated_in_band += q >= 0.5 && q <= 2.0 ? 1 : 0;
            }
        }
    }
    b.write(dir + "/prop1.csv", rows_csv);
    b.write(dir + "/sensitivity.csv", probe_csv);
    checks.rows.push_back(rows_ok);
    const double n = pairs ? static_cast<double>(pairs) : 1.0;
    b.value("assumptions_met_fraction", static_cast<double>(met) / n);
    b.value("mean_abs_cosine", abs_cos / n);
    b.value("mean_abs_log_norm_ratio", abs_lnr / n);
}

void prop1_verdicts(Bundle& b, const Prop1Checks& c, int k) {
    b.per_seed_all("rows_per_prompt", c.rows, "every prompt yields K(K-1)/2 = " + std::to_string(k * (k - 1) / 2) + " rows");
    b.verdict("gated_ratio_within_band", c.gated_in_band, c.gated, c.gated_in_band == c.gated,
              "measured_ratio / delta in [0.5, 2] whenever assumptions are met");
}

}  // namespace

ExperimentReport run_experiment(const ExperimentPlan& plan) {
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), plan.name) == names.end()) {
        fail(ErrorKind::config, "unknown experiment '" + plan.name + "'");
    }
    if (plan.seeds < 1) fail(ErrorKind::config, "experiment needs at least one seed");
    if (plan.name == "prop1" && plan.prop1_k < 2) fail(ErrorKind::config, "prop1 needs K >= 2");
    for (double m : plan.margins)
        if (!(m >= 0.0)) fail(ErrorKind::config, "margins must be >= 0");
    for (double tp : plan.top_ps)
        if (!(tp > 0.0 && tp <= 1.0)) fail(ErrorKind::config, "top_p values must lie in (0, 1]");

    Bundle b(plan);
    std::vector<bool> ratio_ok;
    MarginChecks margin_checks;
    Prop1Checks prop1_checks;
    const std::uint64_t seed_base = derive_seed(plan.master_seed, "seeds");
    for (int k = 0; k < plan.seeds; ++k) {
        try {
            const SeedRun run(plan.pipeline, derive_seed(seed_base, static_cast<std::uint64_t>(k)));
            const std::string dir = b.seed_dir(k);
            if (plan.name == "quality_sensitivity") quality_sensitivity(b, run, dir);
            else if (plan.name == "fdpo_vs_dpo") fdpo_vs_dpo(b, run, dir, ratio_ok);
            else if (plan.name == "rm_size_sweep") rm_size_sweep(b, run, dir);
            else if (plan.name == "top_p_sweep") top_p_sweep(b, run, dir, plan.top_ps);
            else if (plan.name == "margin_sweep") margin_sweep(b, run, dir, plan.margins, margin_checks);
            else if (plan.name == "source_mix") source_mix(b, run, dir);
            else prop1(b, run, dir, plan.prop1_k, prop1_checks);
        } catch (const Error& e) {
            fail(e.kind(), "seed " + std::to_string(k) + ": " + e.what());
        }
    }
    if (plan.name == "quality_sensitivity") quality_sensitivity_verdicts(b);
    else if (plan.name == "fdpo_vs_dpo") fdpo_vs_dpo_verdicts(b, ratio_ok);
    else if (plan.name == "rm_size_sweep") rm_size_sweep_verdicts(b);
    else if (plan.name == "top_p_sweep") top_p_sweep_verdicts(b, plan.top_ps);
    else if (plan.name == "margin_sweep") margin_sweep_verdicts(b, margin_checks);
    else if (plan.name == "source_mix") source_mix_verdicts(b);
    else prop1_verdicts(b, prop1_checks, plan.prop1_k);
    return b.finish();
}

}  // namespace prefopt
