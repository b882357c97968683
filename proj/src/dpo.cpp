#include "prefopt/dpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace prefopt {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    fail(ErrorKind::config, "unknown optimizer '" + std::string(s) + "'");
}

void DpoConfig::validate(std::size_t dataset_size) const {
    if (!(beta > 0.0)) fail(ErrorKind::config, "beta must be > 0");
    if (!(learning_rate >= 0.0)) fail(ErrorKind::config, "learning rate must be >= 0");
    if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorKind::config, "batch size must be >= 1");
    if (dataset_size > 0 && static_cast<std::size_t>(batch_size) > dataset_size) {
        fail(ErrorKind::config, "batch size exceeds dataset size");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
        fail(ErrorKind::config, "invalid Adam moments");
    }
}

namespace {

struct LogRatios {
    double chosen = 0.0;
    double rejected = 0.0;
};

LogRatios log_ratios(const PolicyParams& theta, const PolicyParams& ref, const PreferenceSample& s) {
    return {log_prob(theta, s.prompt, s.chosen) - log_prob(ref, s.prompt, s.chosen),
            log_prob(theta, s.prompt, s.rejected) - log_prob(ref, s.prompt, s.rejected)};
}

void check_pair(const PolicyParams& theta, const PolicyParams& ref) {
    if (!(theta.shape == ref.shape)) fail(ErrorKind::data, "policy and reference shapes differ");
}

// Accumulates the batch ascent direction into `dense`; returns
// (objective, mean weight).
std::pair<double, double> accumulate_batch(const PolicyParams& theta, const PolicyParams& ref,
                                           std::span<const PreferenceSample> batch, double beta,
                                           std::vector<double>& dense) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    double objective = 0.0;
    double weights = 0.0;
    for (const auto& s : batch) {
        const LogRatios r = log_ratios(theta, ref, s);
        const double margin = beta * (r.chosen - r.rejected);
        const double w = sigmoid(-margin);
        objective += log_sigmoid(margin) * inv;
        weights += w * inv;
        const PromptTables tables = log_softmax_tables(theta, s.prompt);
        accumulate_grad_log_prob(theta, tables, s.prompt, s.chosen, beta * w * inv, dense);
        accumulate_grad_log_prob(theta, tables, s.prompt, s.rejected, -beta * w * inv, dense);
    }
    return {objective, weights};
}

}  // namespace

double dpo_objective(const PolicyParams& theta, const PolicyParams& ref,
                     std::span<const PreferenceSample> batch, double beta) {
    check_pair(theta, ref);
    if (batch.empty()) fail(ErrorKind::data, "empty batch");
    double total = 0.0;
    for (const auto& s : batch) {
        const LogRatios r = log_ratios(theta, ref, s);
        total += log_sigmoid(beta * (r.chosen - r.rejected));
    }
    return total / static_cast<double>(batch.size());
}

double dpo_weight(const PolicyParams& theta, const PolicyParams& ref, const PreferenceSample& s, double beta) {
    check_pair(theta, ref);
    const LogRatios r = log_ratios(theta, ref, s);
    return sigmoid(beta * r.rejected - beta * r.chosen);
}

SparseVec dpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                   std::span<const PreferenceSample> batch, double beta) {
    check_pair(theta, ref);
    if (batch.empty()) fail(ErrorKind::data, "empty batch");
    std::vector<double> dense(theta.logits.size(), 0.0);
    accumulate_batch(theta, ref, batch, beta, dense);
    return SparseVec::from_dense(dense);
}

double mean_implicit_margin(const PolicyParams& theta, const PolicyParams& ref,
                            std::span<const PreferenceSample> data, double beta) {
    if (data.empty()) fail(ErrorKind::data, "empty dataset");
    double total = 0.0;
    for (const auto& s : data) {
        const LogRatios r = log_ratios(theta, ref, s);
        total += beta * (r.chosen - r.rejected);
    }
    return total / static_cast<double>(data.size());
}

Optimizer::Optimizer(OptimizerKind kind, std::size_t size, double beta1, double beta2, double eps)
    : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (kind_ == OptimizerKind::adam) {
        m_.assign(size, 0.0);
        v_.assign(size, 0.0);
    }
}

std::vector<double> Optimizer::propose(const std::vector<double>& grad, double lr) const {
    std::vector<double> inc(grad.size());
    if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < grad.size(); ++i) inc[i] = lr * grad[i];
        return inc;
    }
    const long t = step_ + 1;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double m = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        const double v = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        inc[i] = lr * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
    return inc;
}

void Optimizer::apply(std::vector<double>& params, const std::vector<double>& grad, double lr, double scale) {
    if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < grad.size(); ++i) params[i] += scale * (lr * grad[i]);
        return;
    }
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] += scale * (lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_));
    }
}

DpoTrainer::DpoTrainer(const PolicyParams& init, const DpoConfig& cfg)
    : theta_(init),
      ref_(init),
      cfg_(cfg),
      opt_(cfg.optimizer, init.logits.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      grad_(init.logits.size(), 0.0) {}

void DpoTrainer::run_epoch(std::span<const PreferenceSample> data, int epoch) {
    if (data.empty()) return;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(derive_seed(cfg_.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    const auto bs = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), data.size());
    std::vector<PreferenceSample> batch;
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const auto t0 = std::chrono::steady_clock::now();
        batch.clear();
        for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(data[order[i]]);

        std::fill(grad_.begin(), grad_.end(), 0.0);
        const auto [objective, mean_w] = accumulate_batch(theta_, ref_, batch, cfg_.beta, grad_);
        double sq = 0.0;
        for (double g : grad_) sq += g * g;
        opt_.apply(theta_.logits, grad_, cfg_.learning_rate);

        StepRecord rec;
        rec.step = step_++;
        rec.epoch = epoch;
        rec.objective = objective;
        rec.mean_weight = mean_w;
        rec.grad_norm = std::sqrt(sq);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        steps_.push_back(rec);
    }
    theta_.check_finite();
}

DpoResult train_dpo(const PreferenceDataset& ds, const PolicyParams& init, const DpoConfig& cfg,
                    const EpochHook& hook) {
    if (ds.samples.empty()) fail(ErrorKind::data, "empty preference dataset");
    if (!ds.env_digest.empty() && !init.env_digest.empty() && ds.env_digest != init.env_digest) {
        fail(ErrorKind::data, "dataset env digest does not match policy");
    }
    cfg.validate(ds.samples.size());
    DpoTrainer trainer(init, cfg);
    DpoResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        trainer.run_epoch(ds.samples, epoch);
        if (hook) {
            EvalRecord ev = hook(trainer.policy(), epoch);
            if (!trainer.steps().empty()) {
                trainer.steps().back().gold_reward_norm = ev.gold_reward_norm;
                trainer.steps().back().kl_to_ref = ev.kl_to_ref;
            }
            res.evals.push_back(std::move(ev));
        }
    }
    res.policy = trainer.policy();
    res.policy.role = "dpo";
    res.steps = std::move(trainer.steps());
    return res;
}

}  // namespace prefopt
