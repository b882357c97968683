#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"

using namespace prefopt;

TEST_CASE("self-evaluation of the SFT policy") {
    PipelineConfig cfg;
    const SeedContext ctx = prepare_seed(cfg, 3);
    const EvalRecord e = evaluate_policy(ctx.env, ctx.sft, ctx.sft, ctx.eval_prompts, 1, 1000);
    CHECK(e.gold_reward_norm == 0.0);
    CHECK(std::fabs(e.kl_to_ref) <= 1e-12);
    CHECK(std::fabs(e.win_rate_vs_sft - 0.5) <= 3 * std::sqrt(0.25 / 1000));
    CHECK(e.prompt_count == ctx.eval_prompts.size());
}

TEST_CASE("uniform policy reward is the grid mean") {
    const Environment env = Environment::build(fx::tiny_spec(4, 4, 3));
    const PolicyParams u(PolicyShape::of(env), env.digest());
    Rng rng = make_rng(2);
    const PolicyParams sft = fx::random_policy(env, rng);
    const auto xs = env.eval_prompts();
    double grid = 0;
    for (PromptId x : xs)
        for (double g : env.gold_table(x)) grid += g;
    grid /= static_cast<double>(xs.size() * env.response_count());
    const EvalRecord e = evaluate_policy(env, u, sft, xs, 1, 0);
    CHECK(e.gold_reward_raw == doctest::Approx(grid).epsilon(1e-12));
    CHECK(e.kl_to_ref >= 0);
    CHECK(e.gold_reward_norm == doctest::Approx(e.gold_reward_raw - expected_gold(env, sft, xs)));
}

TEST_CASE("prop1 rows, identities and antisymmetry") {
    PipelineConfig cfg;
    const SeedContext ctx = prepare_seed(cfg, 1);
    Rng rng = make_rng(5);
    std::vector<Response> ys;
    const auto rows = prop1_stats(ctx.sft, 0, 16, rng, &ys);
    CHECK(rows.size() == 120);
    for (const auto& r : rows) CHECK(r.i < r.j);

    const Response& y = ys[0];
    const Prop1Row self = prop1_row(ctx.sft, 0, y, y);
    CHECK(self.log_delta == 0.0);
    CHECK(self.log_norm_ratio == 0.0);
    CHECK(self.cosine == 1.0);

    for (int k = 1; k < 6; ++k) {
        if (ys[0] == ys[static_cast<std::size_t>(k)]) continue;
        const Prop1Row a = prop1_row(ctx.sft, 0, ys[0], ys[static_cast<std::size_t>(k)]);
        const Prop1Row b = prop1_row(ctx.sft, 0, ys[static_cast<std::size_t>(k)], ys[0]);
        CHECK(a.log_delta == -b.log_delta);
        CHECK(a.log_norm_ratio == -b.log_norm_ratio);
        CHECK(a.cosine == b.cosine);
    }
    CHECK_THROWS_AS(prop1_stats(ctx.sft, 0, 1, rng), Error);
}

TEST_CASE("sensitivity at delta one") {
    const auto c = fx::delta1_case();
    const auto r = sensitivity_probe(c.theta, 0, c.chosen, c.rejected);
    CHECK(r.delta == doctest::Approx(1.0));
    CHECK(std::fabs(r.measured_ratio - 1.0) <= 0.05);
}

TEST_CASE("sensitivity at delta four") {
    const auto c = fx::delta4_case();
    const auto r = sensitivity_probe(c.theta, 0, c.chosen, c.rejected);
    CHECK(r.delta == doctest::Approx(4.0).epsilon(1e-12));
    REQUIRE(r.assumptions_met);
    CHECK(r.measured_ratio / r.delta >= 0.5);
    CHECK(r.measured_ratio / r.delta <= 2.0);
    CHECK(r.change_chosen > 0);
    CHECK(r.change_rejected < 0);

    const auto half = sensitivity_probe(c.theta, 0, c.chosen, c.rejected, 0.5e-6);
    CHECK(half.change_chosen / r.change_chosen == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(half.change_rejected / r.change_rejected == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(std::fabs(half.measured_ratio / r.measured_ratio - 1.0) <= 0.01);

    CHECK_THROWS_AS(sensitivity_probe(c.theta, 0, c.chosen, c.chosen), Error);
}

TEST_CASE("gated probes on the SFT policy stay in band") {
    PipelineConfig cfg;
    const SeedContext ctx = prepare_seed(cfg, 2);
    Rng rng = make_rng(7);
    int gated = 0;
    for (PromptId x = 0; x < 4; ++x) {
        std::vector<Response> ys;
        prop1_stats(ctx.sft, x, 16, rng, &ys);
        for (std::size_t i = 0; i < ys.size(); ++i)
            for (std::size_t j = i + 1; j < ys.size(); ++j) {
                if (ys[i] == ys[j]) continue;
                const auto r = sensitivity_probe(ctx.sft, x, ys[i], ys[j]);
                if (!r.assumptions_met) continue;
                ++gated;
                CHECK(r.measured_ratio / r.delta >= 0.5);
                CHECK(r.measured_ratio / r.delta <= 2.0);
            }
    }
    CHECK(gated > 0);
}

TEST_CASE("arm statistics") {
    const ArmStats s = arm_stats({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    // sample sd sqrt(5/3), se = sd / 2
    CHECK(s.std_error == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(arm_stats({7.0}).std_error == 0.0);
}

TEST_CASE("experiment plan validation and a small bundle") {
    ExperimentPlan plan;
    plan.name = "nope";
    CHECK_THROWS_AS(run_experiment(plan), Error);
    plan.name = "margin_sweep";
    plan.margins = {-1.0};
    CHECK_THROWS_AS(run_experiment(plan), Error);

    CHECK(experiment_names().size() == 7);

    const auto dir = std::filesystem::temp_directory_path() / "prefopt_tests" / "bundle";
    std::filesystem::remove_all(dir);
    ExperimentPlan p1;
    p1.name = "prop1";
    p1.seeds = 2;
    p1.output_dir = dir.string();
    const ExperimentReport r = run_experiment(p1);
    CHECK(r.verdicts.at("rows_per_prompt").holds);
    CHECK(r.verdicts.at("gated_ratio_within_band").holds);
    CHECK(std::filesystem::exists(dir / "summary.json"));
    CHECK(std::filesystem::exists(dir / "seed_01" / "prop1.csv"));
    CHECK(r.arms.at("assumptions_met_fraction").values.size() == 2);
}
