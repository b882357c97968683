// One PASS/FAIL line per acceptance criterion. Usage: prefopt_acceptance [work-dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>

#include "fixtures.hpp"
#include "prefopt/io.hpp"

using namespace prefopt;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int n, bool ok, const char* name, const std::string& detail) {
    std::printf("criterion %2d: %s  %-28s %s\n", n, ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------------ 1

void gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const Environment env = Environment::build(fx::tiny_spec(3, 4, 3));
    Rng rng = make_rng(101);
    double bt = 0, dpo = 0, rl = 0;
    const FeatureMap& fm = env.feature_map();

    for (int t = 0; t < 100; ++t) {
        RewardParams phi = RewardParams::zeros(fm, static_cast<FeatureSubset>(t % 3));
        std::normal_distribution<double> n(0, 1);
        for (double& w : phi.weights) w = n(rng);
        std::vector<PreferenceSample> pairs;
        for (int i = 0; i < 8; ++i) pairs.push_back(fx::random_pair(env, static_cast<PromptId>(rng() % 4), rng));
        const auto refs = pair_refs(pairs);
        std::vector<std::size_t> idx(phi.weights.size());
        std::iota(idx.begin(), idx.end(), 0);
        auto f = [&](const std::vector<double>& w) {
            RewardParams q = phi;
            q.weights = w;
            return bt_loss_and_grad(fm, q, refs).loss;
        };
        bt = std::max(bt, fx::rel_err(bt_loss_and_grad(fm, phi, refs).grad, fx::fd_gradient(f, phi.weights, idx)));
    }

    for (int t = 0; t < 100; ++t) {
        const PolicyParams ref = fx::random_policy(env, rng);
        const PolicyParams th = fx::random_policy(env, rng);
        const PromptId x = static_cast<PromptId>(t % 4);
        std::vector<PreferenceSample> b;
        for (int i = 0; i < 4; ++i) b.push_back(fx::random_pair(env, x, rng));
        const auto idx = fx::prompt_indices(th.shape, x);
        auto f = [&](const std::vector<double>& p) {
            PolicyParams q = th;
            q.logits = p;
            return dpo_objective(q, ref, b, 0.1);
        };
        const auto an = fx::pick(dpo_grad(th, ref, b, 0.1).to_dense(th.logits.size()), idx);
        dpo = std::max(dpo, fx::rel_err(an, fx::fd_gradient(f, th.logits, idx)));
    }

    for (int t = 0; t < 100; ++t) {
        const PolicyParams ref = fx::random_policy(env, rng);
        const PolicyParams th = fx::random_policy(env, rng);
        RewardParams phi = RewardParams::zeros(fm, FeatureSubset::large);
        std::normal_distribution<double> n(0, 1);
        for (double& w : phi.weights) w = n(rng);
        const std::vector<PromptId> xs{static_cast<PromptId>(t % 4)};
        const auto idx = fx::prompt_indices(th.shape, xs[0]);
        auto f = [&](const std::vector<double>& p) {
            PolicyParams q = th;
            q.logits = p;
            return rl_objective(env, q, ref, phi, xs, 0.1);
        };
        const auto an = fx::pick(rl_grad_exact(env, th, ref, phi, xs, 0.1).to_dense(th.logits.size()), idx);
        rl = std::max(rl, fx::rel_err(an, fx::fd_gradient(f, th.logits, idx)));
    }
    const double secs = seconds_since(t0);
    report(1, bt <= 1e-6 && dpo <= 1e-6 && rl <= 1e-6 && secs < 10.0, "gradient correctness",
           fmt("max rel err BT %.1e DPO %.1e RL %.1e, %.2f s", bt, dpo, rl, secs));
}

// ------------------------------------------------------------------ 2

void exact_oracles() {
    Rng rng = make_rng(202);
    EnvSpec spec;
    spec.seed = 5;
    const Environment big = Environment::build(spec);
    const PolicyParams th = fx::random_policy(big, rng);
    const PolicyParams th2 = fx::random_policy(big, rng);
    double lp_err = 0, kl_err = 0;
    for (PromptId x = 0; x < 4; ++x) {
        for (const auto& e : enumerate(th, x)) lp_err = std::max(lp_err, std::fabs(std::log(e.probability) - log_prob(th, x, e.response)));
        kl_err = std::max(kl_err, std::fabs(kl_by_enumeration(th, th2, x) - kl_by_markov_dp(th, th2, x)));
    }

    const Environment env = Environment::build(fx::tiny_spec(5, 3, 2));
    const PolicyParams ref = fx::random_policy(env, rng, 0.5);
    const PolicyParams cur = fx::random_policy(env, rng, 0.5);
    RewardParams phi = RewardParams::zeros(env.feature_map(), FeatureSubset::large);
    std::normal_distribution<double> n(0, 1);
    for (double& w : phi.weights) w = n(rng);
    const std::vector<PromptId> xs{0, 1};
    const std::size_t np = cur.logits.size();
    const auto exact = rl_grad_exact(env, cur, ref, phi, xs, 0.1).to_dense(np);
    std::vector<double> sum(np, 0.0), sq(np, 0.0);
    Rng mc = make_rng(7);
    const int reps = 10000;
    for (int r = 0; r < reps; ++r) {
        const auto g = rl_grad_sampled(env, cur, ref, phi, xs, 0.1, 4, mc).to_dense(np);
        for (std::size_t i = 0; i < np; ++i) {
            sum[i] += g[i];
            sq[i] += g[i] * g[i];
        }
    }
    std::vector<std::size_t> order(np);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::fabs(exact[a]) > std::fabs(exact[b]); });
    double worst_z = 0;
    for (std::size_t k = 0; k < 20; ++k) {
        const std::size_t i = order[k];
        const double mean = sum[i] / reps;
        const double se = std::sqrt(std::max(sq[i] / reps - mean * mean, 0.0) / reps);
        worst_z = std::max(worst_z, std::fabs(mean - exact[i]) / se);
    }

    PolicyParams small = fx::flat_policy(4, 3);
    std::normal_distribution<double> nd(0, 0.5);
    for (double& v : small.logits) v = nd(rng);
    std::map<Response, double> counts;
    Rng sr = make_rng(99);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[sample(small, 0, {}, sr)] += 1;
    double chi2 = 0;
    const auto all = enumerate(small, 0);
    for (const auto& e : all) {
        const double ex = draws * e.probability;
        const double ob = counts.count(e.response) ? counts[e.response] : 0.0;
        chi2 += (ob - ex) * (ob - ex) / ex;
    }
    const double crit = fx::chi2_critical(static_cast<double>(all.size() - 1), fx::kZ999);
    report(2, lp_err <= 1e-12 && kl_err <= 1e-9 && worst_z <= 3.0 && chi2 < crit, "exact-oracle consistency",
           fmt("log_prob %.1e, KL %.1e, MC max |z| %.2f, ", lp_err, kl_err, worst_z) +
               fmt("chi2 %.1f (crit %.1f)", chi2, crit));
}

// ------------------------------------------------------------------ 3

void calibration() {
    PipelineConfig cfg;
    const SeedContext ctx = prepare_seed(cfg, 1);
    DatasetConfig dc;
    dc.size = 256;
    const PreferenceDataset ds = build_dataset(dc, ctx.env, ctx.sft);
    double worst_w = 0;
    for (const auto& s : ds.samples) worst_w = std::max(worst_w, std::fabs(dpo_weight(ctx.sft, ctx.sft, s, 0.1) - 0.5));
    const double obj = std::fabs(dpo_objective(ctx.sft, ctx.sft, ds.samples, 0.1) - std::log(0.5));
    const double norm = std::fabs(evaluate_policy(ctx.env, ctx.sft, ctx.sft, ctx.eval_prompts, 1, 0).gold_reward_norm);
    const double bt = std::fabs(bt_loss_and_grad(ctx.env.feature_map(),
                                                 RewardParams::zeros(ctx.env.feature_map(), FeatureSubset::large),
                                                 pair_refs(ds.samples)).loss - std::log(2.0));
    report(3, obj <= 1e-12 && worst_w == 0.0 && norm <= 1e-12 && bt <= 1e-12, "calibration identities",
           fmt("|obj-ln.5| %.1e, max|w-.5| %.1e, |sft norm| %.1e, |bt-ln2| %.1e", obj, worst_w, norm, bt));
}

// --------------------------------------------------------------- 4-9, 11

std::string vstr(const ExperimentReport& r, const std::string& name) {
    const Verdict& v = r.verdicts.at(name);
    return name + " " + std::to_string(v.passed) + "/" + std::to_string(v.total);
}

ExperimentReport run(const std::string& name, const std::string& dir) {
    ExperimentPlan plan;
    plan.name = name;
    plan.master_seed = 2024;
    plan.seeds = 10;
    plan.output_dir = dir;
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport r = run_experiment(plan);
    std::printf("# %s: %d seeds in %.0f s\n", name.c_str(), plan.seeds, seconds_since(t0));
    return r;
}

void quality(const std::string& work) {
    const ExperimentReport r = run("quality_sensitivity", work + "/quality_sensitivity");
    const double dh = r.arms.at("dpo_high").mean, dm = r.arms.at("dpo_mix").mean;
    const double rh = r.arms.at("rl_high").mean, rm = r.arms.at("rl_mix").mean;
    const bool ok = dh > dm && r.verdicts.at("DPO_high_gt_mix").holds && (rh - rm) < (dh - dm);
    report(4, ok, "quality sensitivity",
           fmt("DPO high %.3f mix %.3f, RL high %.3f mix %.3f; ", dh, dm, rh, rm) + vstr(r, "DPO_high_gt_mix"));
}

void fdpo_claims(const ExperimentReport& r) {
    const double dh = r.arms.at("dpo_high").mean, dm = r.arms.at("dpo_mix").mean;
    const double fm = r.arms.at("fdpo_mix").mean;
    const double recovered = (fm - dm) / (dh - dm);
    report(5, r.verdicts.at("fDPO_mix_recovers_half_gap").holds && r.verdicts.at("fDPO_mix_gt_DPO_mix").holds,
           "fDPO recovery",
           fmt("DPO high %.3f mix %.3f, fDPO mix %.3f, recovered %.0f%% of gap; ", dh, dm, fm, 100 * recovered) +
               vstr(r, "fDPO_mix_gt_DPO_mix"));
    report(6, r.verdicts.at("fDPO_low_gt_DPO_low").holds, "low-only improvement",
           fmt("DPO low %.3f, fDPO low %.3f; ", r.arms.at("dpo_low").mean, r.arms.at("fdpo_low").mean) +
               vstr(r, "fDPO_low_gt_DPO_low"));
}

bool infinite_margin_is_dpo() {
    PipelineConfig cfg;
    const SeedContext ctx = prepare_seed(cfg, 9);
    DatasetConfig dc;
    dc.mode = DatasetMode::mix;
    dc.size = 1024;
    dc.seed = 9;
    const PreferenceDataset ds = build_dataset(dc, ctx.env, ctx.sft);
    const RewardParams phi = train_rm(ctx.env, ds, FeatureSubset::large).params;
    FdpoConfig fc;
    fc.margin = INFINITY;
    fc.dpo.shuffle_seed = 31;
    DpoConfig d = fc.dpo;
    d.epochs = fc.max_epochs;
    const auto a = train_fdpo(ctx.env, ds, ctx.sft, phi, fc).policy.logits;
    const auto b = train_dpo(ds, ctx.sft, d).policy.logits;
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void mechanics(const ExperimentReport& fvd, const ExperimentReport& margins) {
    const bool ratio = fvd.verdicts.at("unfiltered_ratio_nonincreasing").holds;
    const bool inf = infinite_margin_is_dpo();
    const bool nested = margins.verdicts.at("epoch0_removed_sets_nested").holds;
    report(7, ratio && inf && nested, "filtering mechanics",
           vstr(fvd, "unfiltered_ratio_nonincreasing") + ", eps=inf bitwise " + (inf ? "yes" : "no") + ", " +
               vstr(margins, "epoch0_removed_sets_nested"));
}

void margin_tradeoff(const ExperimentReport& r) {
    const bool ok = r.verdicts.at("epoch0_precision_nondecreasing").holds &&
                    r.verdicts.at("epoch0_recall_nonincreasing").holds &&
                    r.verdicts.at("epoch0_removed_nonincreasing").holds;
    std::string curve;
    for (const auto& [key, vals] : r.series) {
        if (key.rfind("epoch0_precision_eps_", 0) != 0) continue;
        const std::string tag = key.substr(std::strlen("epoch0_precision_"));
        curve += " " + tag + fmt(" P %.3f R %.3f;", arm_stats(vals).mean, arm_stats(r.series.at("epoch0_recall_" + tag)).mean);
    }
    report(8, ok, "margin trade-off",
           vstr(r, "epoch0_precision_nondecreasing") + ", " + vstr(r, "epoch0_recall_nonincreasing") + ", " +
               vstr(r, "epoch0_removed_nonincreasing") + ";" + curve);
}

void rm_quality(const ExperimentReport& r) {
    const auto& acc = r.arms.at("rm_mix_accuracy").values;
    const double lo = *std::min_element(acc.begin(), acc.end());
    const double synth = fx::noiseless_rm_accuracy(17);
    report(9, lo >= 0.8 && synth >= 0.95, "proxy RM quality",
           fmt("min held-out acc on mix %.3f (10 seeds), noiseless in-span %.3f", lo, synth));
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a.string()) == read_file(b.string()); }

void determinism(const std::string& work) {
    run("fdpo_vs_dpo", work + "/fdpo_vs_dpo_rerun");
    std::size_t csvs = 0, diff = 0;
    const fs::path a = work + "/fdpo_vs_dpo", b = work + "/fdpo_vs_dpo_rerun";
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.path().extension() != ".csv") continue;
        ++csvs;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || !same_bytes(e.path(), other)) ++diff;
    }
    report(11, csvs > 0 && diff == 0, "end-to-end determinism",
           std::to_string(csvs) + " CSVs compared, " + std::to_string(diff) + " differ");
}

// ------------------------------------------------------------------ 10

void prop1_harness() {
    PipelineConfig cfg;
    const SeedContext ctx = prepare_seed(cfg, 4);
    Rng rng = make_rng(404);
    std::vector<Response> ys;
    const auto rows = prop1_stats(ctx.sft, 0, 16, rng, &ys);
    const Prop1Row self = prop1_row(ctx.sft, 0, ys[0], ys[0]);
    const bool identities = self.log_delta == 0.0 && self.log_norm_ratio == 0.0 && self.cosine == 1.0;

    // constructed suite: lifts giving delta 2, 4, 8 plus the symmetric case
    int gated = 0, in_band = 0;
    std::string cases;
    for (double delta : {2.0, 4.0, 8.0}) {
        fx::ProbeCase c = fx::delta1_case();
        const double p = delta / 32.0;  // target pi(b|a)
        c.theta.trans_row(0, 0)[1] = std::log(31.0 * p / (1.0 - p));
        const auto r = sensitivity_probe(c.theta, 0, c.chosen, c.rejected);
        cases += fmt(" d=%.0f ratio %.3f", r.delta, r.measured_ratio) + (r.assumptions_met ? ";" : " (ungated);");
        if (!r.assumptions_met) continue;
        ++gated;
        const double q = r.measured_ratio / r.delta;
        in_band += q >= 0.5 && q <= 2.0 ? 1 : 0;
    }
    const auto one = fx::delta1_case();
    const auto r1 = sensitivity_probe(one.theta, 0, one.chosen, one.rejected);
    const bool sym = std::fabs(r1.measured_ratio - 1.0) <= 0.05;
    const auto four = fx::delta4_case();
    const bool four_gated = sensitivity_probe(four.theta, 0, four.chosen, four.rejected).assumptions_met;
    report(10, rows.size() == 120 && identities && gated > 0 && four_gated && in_band == gated && sym,
           "gradient-geometry harness",
           std::to_string(rows.size()) + " rows, identities " + (identities ? "exact" : "broken") + ", gated " +
               std::to_string(in_band) + "/" + std::to_string(gated) + " in band;" + cases +
               fmt(" d=1 ratio %.4f", r1.measured_ratio));
}

}  // namespace

int main(int argc, char** argv) {
    const std::string work = argc > 1 ? argv[1] : (fs::temp_directory_path() / "prefopt_acceptance").string();
    fs::remove_all(work);
    fs::create_directories(work);
    try {
        gradients();
        exact_oracles();
        calibration();
        quality(work);
        const ExperimentReport fvd = run("fdpo_vs_dpo", work + "/fdpo_vs_dpo");
        fdpo_claims(fvd);
        const ExperimentReport margins = run("margin_sweep", work + "/margin_sweep");
        mechanics(fvd, margins);
        margin_tradeoff(margins);
        rm_quality(fvd);
        prop1_harness();
        determinism(work);
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
