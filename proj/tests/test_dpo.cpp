#include <cmath>
#include <cstring>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"

using namespace prefopt;

namespace {

// V=2, L=1: pi_theta = (2/3, 1/3) against a uniform reference.
struct TwoToken {
    PolicyParams ref = fx::flat_policy(2, 1);
    PolicyParams theta = fx::flat_policy(2, 1);
    PreferenceSample pair;
    TwoToken() {
        theta.start_row(0)[0] = std::log(2.0);
        pair.chosen = {0};
        pair.rejected = {1};
    }
};

std::vector<PreferenceSample> random_batch(const Environment& env, int n, Rng& rng) {
    std::vector<PreferenceSample> b;
    for (int i = 0; i < n; ++i) b.push_back(fx::random_pair(env, static_cast<PromptId>(rng() % 4), rng));
    return b;
}

std::vector<std::size_t> batch_indices(const PolicyShape& s, const std::vector<PreferenceSample>& b) {
    std::set<PromptId> xs;
    for (const auto& p : b) xs.insert(p.prompt);
    std::vector<std::size_t> idx;
    for (PromptId x : xs)
        for (std::size_t i : fx::prompt_indices(s, x)) idx.push_back(i);
    return idx;
}

}  // namespace

TEST_CASE("two-token instance by substitution") {
    const TwoToken t;
    const std::vector<PreferenceSample> b{t.pair};
    CHECK(dpo_objective(t.theta, t.ref, b, 1.0) == doctest::Approx(std::log(2.0 / 3.0)).epsilon(1e-14));
    CHECK(dpo_weight(t.theta, t.ref, t.pair, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("objective at the reference and at beta zero") {
    const Environment env = Environment::build(fx::tiny_spec());
    Rng rng = make_rng(1);
    const PolicyParams ref = fx::random_policy(env, rng);
    const PolicyParams th = fx::random_policy(env, rng);
    const auto b = random_batch(env, 10, rng);
    for (double beta : {0.01, 0.1, 3.0}) CHECK(std::fabs(dpo_objective(ref, ref, b, beta) - std::log(0.5)) <= 1e-12);
    CHECK(std::fabs(dpo_objective(th, ref, b, 0.0) - std::log(0.5)) <= 1e-12);
    for (const auto& s : b) CHECK(dpo_weight(ref, ref, s, 0.1) == 0.5);
}

TEST_CASE("weight drops as the chosen log-ratio pulls ahead") {
    TwoToken t;
    double prev = dpo_weight(t.theta, t.ref, t.pair, 1.0);
    for (int i = 0; i < 5; ++i) {
        t.theta.start_row(0)[0] += 0.5;
        const double w = dpo_weight(t.theta, t.ref, t.pair, 1.0);
        CHECK(w < prev);
        prev = w;
    }
    CHECK(prev < 0.5);
}

TEST_CASE("DPO gradient against central differences") {
    const Environment env = Environment::build(fx::tiny_spec(3, 4, 3));
    Rng rng = make_rng(2);
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
        const PolicyParams ref = fx::random_policy(env, rng);
        const PolicyParams th = fx::random_policy(env, rng);
        const auto b = random_batch(env, 6, rng);
        const auto idx = batch_indices(th.shape, b);
        for (double beta : {0.1, 0.2}) {
            auto f = [&](const std::vector<double>& p) {
                PolicyParams q = th;
                q.logits = p;
                return dpo_objective(q, ref, b, beta);
            };
            const auto an = fx::pick(dpo_grad(th, ref, b, beta).to_dense(th.logits.size()), idx);
            worst = std::max(worst, fx::rel_err(an, fx::fd_gradient(f, th.logits, idx)));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("identical chosen and rejected give zero gradient") {
    const Environment env = Environment::build(fx::tiny_spec());
    Rng rng = make_rng(3);
    const PolicyParams ref = fx::random_policy(env, rng);
    const PolicyParams th = fx::random_policy(env, rng);
    PreferenceSample s;
    s.prompt = 1;
    s.chosen = s.rejected = {2, 0};
    const SparseVec g = dpo_grad(th, ref, std::vector{s}, 0.1);
    for (const auto& [i, v] : g.entries()) CHECK(v == 0.0);
}

namespace {

struct Trained {
    SeedContext ctx;
    PreferenceDataset ds;
};

Trained high_setup(std::uint64_t seed, std::size_t n = 1024) {
    PipelineConfig cfg;
    Trained t{prepare_seed(cfg, seed), {}};
    DatasetConfig dc;
    dc.mode = DatasetMode::high;
    dc.size = n;
    dc.seed = derive_seed(seed, "dataset");
    t.ds = build_dataset(dc, t.ctx.env, t.ctx.sft);
    return t;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters alone") {
    const Trained t = high_setup(1, 256);
    DpoConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    const DpoResult r = train_dpo(t.ds, t.ctx.sft, cfg);
    CHECK(r.policy.logits == t.ctx.sft.logits);
    REQUIRE(r.steps.size() >= 2);
    CHECK(r.steps.front().objective == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("training widens the implicit margin, keeps the reference and is deterministic") {
    const Trained t = high_setup(2);
    const PolicyParams ref_copy = t.ctx.sft;
    DpoConfig cfg;
    cfg.epochs = 2;
    const DpoResult a = train_dpo(t.ds, t.ctx.sft, cfg);
    const DpoResult b = train_dpo(t.ds, t.ctx.sft, cfg);
    CHECK(std::memcmp(a.policy.logits.data(), b.policy.logits.data(), a.policy.logits.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(ref_copy.logits.data(), t.ctx.sft.logits.data(), ref_copy.logits.size() * sizeof(double)) == 0);
    CHECK(mean_implicit_margin(a.policy, t.ctx.sft, t.ds.samples, cfg.beta) >
          mean_implicit_margin(t.ctx.sft, t.ctx.sft, t.ds.samples, cfg.beta));
    CHECK(a.policy.role == "dpo");
}

TEST_CASE("DPO on high-quality data beats SFT") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Trained t = high_setup(seed);
        const Evaluator ev(t.ctx.env, t.ctx.sft, t.ctx.eval_prompts, {0, seed});
        const DpoResult r = train_dpo(t.ds, t.ctx.sft, {});
        wins += ev.evaluate(r.policy).gold_reward_norm > 0 ? 1 : 0;
    }
    CHECK(wins >= 9);
}

TEST_CASE("optimizers and config validation") {
    Optimizer sgd(OptimizerKind::sgd, 2);
    std::vector<double> p{1.0, 1.0};
    sgd.apply(p, {0.5, -1.0}, 0.1);
    CHECK(p[0] == doctest::Approx(1.05));
    CHECK(p[1] == doctest::Approx(0.9));

    // first Adam step moves each coordinate by lr * sign(g)
    Optimizer adam(OptimizerKind::adam, 2);
    std::vector<double> q{0.0, 0.0};
    adam.apply(q, {3.0, -0.01}, 0.1);
    CHECK(q[0] == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(q[1] == doctest::Approx(-0.1).epsilon(1e-4));

    DpoConfig bad;
    bad.beta = 0.0;
    CHECK_THROWS_AS(bad.validate(100), Error);
    bad = {};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(100), Error);
    CHECK(parse_optimizer("sgd") == OptimizerKind::sgd);
    CHECK_THROWS_AS(parse_optimizer("lbfgs"), Error);
}
