#pragma once
// DPO objective, its w-weighted analytic gradient and the offline minibatch
// trainer shared with fDPO.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/datasets.hpp"
#include "prefopt/evaluation.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

enum class OptimizerKind { sgd, adam };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct DpoConfig {
    double beta = 0.1;
    double learning_rate = 0.2;
    int epochs = 8;
    int batch_size = 64;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t shuffle_seed = 0;

    void validate(std::size_t dataset_size) const;
};

struct StepRecord {
    int step = 0;
    int epoch = 0;
    double objective = 0.0;
    double mean_weight = 0.0;
    double grad_norm = 0.0;
    double wall_seconds = 0.0;
    std::optional<double> gold_reward_norm;
    std::optional<double> kl_to_ref;
};

// Mean over the batch of log sigmoid(beta * (chosen log-ratio - rejected log-ratio)).
// An objective to ascend; the reported loss is its negation.
double dpo_objective(const PolicyParams& theta, const PolicyParams& ref,
                     std::span<const PreferenceSample> batch, double beta);
double dpo_weight(const PolicyParams& theta, const PolicyParams& ref, const PreferenceSample& s, double beta);
// beta * mean of w * (grad log pi(y_c) - grad log pi(y_r)); ascent direction.
SparseVec dpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                   std::span<const PreferenceSample> batch, double beta);
// Mean implicit reward margin beta * (chosen log-ratio - rejected log-ratio).
double mean_implicit_margin(const PolicyParams& theta, const PolicyParams& ref,
                            std::span<const PreferenceSample> data, double beta);

// Plain SGD or Adam over the flat parameter vector, ascent convention.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    // Returns the proposed increment without touching parameters or moments.
    std::vector<double> propose(const std::vector<double>& grad, double lr) const;
    // Advances moment estimates and adds the increment scaled by `scale`.
    void apply(std::vector<double>& params, const std::vector<double>& grad, double lr, double scale = 1.0);

private:
    OptimizerKind kind_;
    double beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    long step_ = 0;
};

class DpoTrainer {
public:
    DpoTrainer(const PolicyParams& init, const DpoConfig& cfg);

    // One pass over `data` in an order reshuffled from (shuffle_seed, epoch).
    void run_epoch(std::span<const PreferenceSample> data, int epoch);

    const PolicyParams& policy() const noexcept { return theta_; }
    const PolicyParams& reference() const noexcept { return ref_; }
    std::vector<StepRecord>& steps() noexcept { return steps_; }

private:
    PolicyParams theta_;
    PolicyParams ref_;
    DpoConfig cfg_;
    Optimizer opt_;
    std::vector<double> grad_;
    std::vector<StepRecord> steps_;
    int step_ = 0;
};

struct DpoResult {
    PolicyParams policy;
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
};

DpoResult train_dpo(const PreferenceDataset& ds, const PolicyParams& init, const DpoConfig& cfg,
                    const EpochHook& hook = {});

}  // namespace prefopt
