#include "prefopt/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "prefopt/io.hpp"

namespace prefopt {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::uint64_t RunConfig::stage_seed(const std::optional<std::uint64_t>& explicit_seed, std::string_view stage) const {
    return explicit_seed ? *explicit_seed : derive_seed(master_seed, stage);
}

double parse_margin(std::string_view text) {
    if (text == "inf" || text == "+inf" || text == "infinity") return INFINITY;
    double v = 0.0;
    try {
        v = parse_double(text);
    } catch (const Error&) {
        fail(ErrorKind::config, "margin must be a non-negative number or 'inf', got '" + std::string(text) + "'");
    }
    if (!(v >= 0.0)) fail(ErrorKind::config, "margin must be >= 0");
    return v;
}

namespace {

// ------------------------------------------------------------ config I/O

class Section {
public:
    Section(const ojson& j, std::string name, std::set<std::string> keys) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) fail(ErrorKind::config, "config section '" + name_ + "' must be an object");
        for (const auto& [k, _] : j_.items()) {
            if (!keys.count(k)) fail(ErrorKind::config, "unknown config key '" + name_ + "." + k + "'");
        }
    }

    template <class T>
    void get(const char* key, T& dst) const {
        if (!j_.contains(key)) return;
        try {
            dst = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(ErrorKind::config, "config key '" + name_ + "." + key + "' has the wrong type");
        }
    }

    template <class T>
    void get_opt(const char* key, std::optional<T>& dst) const {
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T v{};
        get(key, v);
        dst = v;
    }

    std::optional<std::string> str(const char* key) const {
        std::optional<std::string> s;
        get_opt(key, s);
        return s;
    }

    const ojson* child(const char* key) const { return j_.contains(key) ? &j_.at(key) : nullptr; }

private:
    const ojson& j_;
    std::string name_;
};

double margin_from_json(const ojson& v) {
    if (v.is_string()) return parse_margin(v.get<std::string>());
    if (v.is_number()) return parse_margin(std::to_string(v.get<double>()));
    fail(ErrorKind::config, "fdpo.margin must be a number or \"inf\"");
}

ojson margin_to_json(double m) { return std::isinf(m) ? ojson("inf") : ojson(m); }

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, std::string("config is not valid JSON (") + e.what() + ")");
    }
    RunConfig c;
    const Section top(j, "config",
                      {"env", "master_seed", "sft", "dataset", "rm", "dpo", "fdpo", "rl", "eval", "experiment", "out"});
    top.get("master_seed", c.master_seed);
    top.get("out", c.out);
    if (const ojson* e = top.child("env")) {
        const Section s(*e, "env", {"vocab_size", "response_len", "train_prompts", "eval_prompts", "seed",
                                    "demo_temperature", "enumeration_budget"});
        s.get("vocab_size", c.env.vocab_size);
        s.get("response_len", c.env.response_len);
        s.get("train_prompts", c.env.train_prompts);
        s.get("eval_prompts", c.env.eval_prompts);
        s.get_opt("seed", c.env_seed);
        s.get("demo_temperature", c.env.demo_temperature);
        s.get("enumeration_budget", c.env.enumeration_budget);
    }
    if (const ojson* e = top.child("sft")) {
        const Section s(*e, "sft", {"demos_per_prompt", "seed"});
        s.get("demos_per_prompt", c.demos_per_prompt);
        s.get_opt("seed", c.sft_seed);
    }
    if (const ojson* e = top.child("dataset")) {
        const Section s(*e, "dataset", {"mode", "size", "bon_n", "tilted_fraction", "seed", "temperature", "top_p"});
        if (auto m = s.str("mode")) c.dataset.mode = parse_dataset_mode(*m);
        s.get("size", c.dataset.size);
        s.get("bon_n", c.dataset.bon_n);
        s.get("tilted_fraction", c.dataset.tilted_fraction);
        s.get_opt("seed", c.dataset_seed);
        s.get("temperature", c.dataset.sampler.temperature);
        s.get("top_p", c.dataset.sampler.top_p);
    }
    if (const ojson* e = top.child("rm")) {
        const Section s(*e, "rm", {"subset", "l2", "heldout_fraction", "grad_tol", "max_iterations", "seed"});
        if (auto m = s.str("subset")) c.rm_subset = parse_subset(*m);
        s.get("l2", c.rm.l2);
        s.get("heldout_fraction", c.rm.heldout_fraction);
        s.get("grad_tol", c.rm.grad_tol);
        s.get("max_iterations", c.rm.max_iterations);
        s.get_opt("seed", c.rm_seed);
    }
    if (const ojson* e = top.child("dpo")) {
        const Section s(*e, "dpo", {"beta", "lr", "epochs", "batch_size", "optimizer", "seed"});
        s.get("beta", c.dpo.beta);
        s.get("lr", c.dpo.learning_rate);
        s.get("epochs", c.dpo.epochs);
        s.get("batch_size", c.dpo.batch_size);
        if (auto m = s.str("optimizer")) c.dpo.optimizer = parse_optimizer(*m);
        s.get_opt("seed", c.dpo_seed);
    }
    if (const ojson* e = top.child("fdpo")) {
        const Section s(*e, "fdpo", {"max_epochs", "margin", "filter_top_p", "filter_temperature", "retrain_rm"});
        s.get("max_epochs", c.fdpo.max_epochs);
        if (const ojson* m = s.child("margin")) c.fdpo.margin = margin_from_json(*m);
        s.get("filter_top_p", c.fdpo.filter_sampler.top_p);
        s.get("filter_temperature", c.fdpo.filter_sampler.temperature);
        s.get("retrain_rm", c.fdpo.retrain_rm);
    }
    if (const ojson* e = top.child("rl")) {
        const Section s(*e, "rl", {"beta", "lr", "epochs", "prompts_per_step", "samples_per_prompt", "mode", "seed"});
        s.get("beta", c.rl.beta);
        s.get("lr", c.rl.learning_rate);
        s.get("epochs", c.rl.epochs);
        s.get("prompts_per_step", c.rl.prompts_per_step);
        s.get("samples_per_prompt", c.rl.samples_per_prompt);
        if (auto m = s.str("mode")) c.rl.mode = parse_rl_mode(*m);
        s.get_opt("seed", c.rl_seed);
    }
    if (const ojson* e = top.child("eval")) {
        const Section s(*e, "eval", {"win_rate_pairs", "prompts", "seed"});
        s.get("win_rate_pairs", c.win_rate_pairs);
        if (auto p = s.str("prompts")) {
            if (*p != "train" && *p != "eval") fail(ErrorKind::config, "eval.prompts must be 'train' or 'eval'");
            c.eval_on_train = *p == "train";
        }
        s.get_opt("seed", c.eval_seed);
    }
    if (const ojson* e = top.child("experiment")) {
        const Section s(*e, "experiment", {"name", "seeds", "margins", "top_ps", "prop1_k"});
        s.get("name", c.experiment.name);
        s.get("seeds", c.experiment.seeds);
        if (const ojson* m = s.child("margins")) {
            if (!m->is_array()) fail(ErrorKind::config, "experiment.margins must be an array");
            c.experiment.margins.clear();
            for (const auto& v : *m) c.experiment.margins.push_back(margin_from_json(v));
        }
        s.get("top_ps", c.experiment.top_ps);
        s.get("prop1_k", c.experiment.prop1_k);
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        fail(ErrorKind::config, std::string("cannot read config: ") + e.what());
    }
    return run_config_from_json(text);
}

std::string run_config_json(const RunConfig& c) {
    auto seed_or_null = [](const std::optional<std::uint64_t>& s) { return s ? ojson(*s) : ojson(nullptr); };
    ojson j;
    j["master_seed"] = c.master_seed;
    j["env"] = {{"vocab_size", c.env.vocab_size},
                {"response_len", c.env.response_len},
                {"train_prompts", c.env.train_prompts},
                {"eval_prompts", c.env.eval_prompts},
                {"seed", c.stage_seed(c.env_seed, "env")},
                {"demo_temperature", c.env.demo_temperature},
                {"enumeration_budget", c.env.enumeration_budget}};
    j["sft"] = {{"demos_per_prompt", c.demos_per_prompt}, {"seed", c.stage_seed(c.sft_seed, "sft")}};
    j["dataset"] = {{"mode", to_string(c.dataset.mode)},
                    {"size", c.dataset.size},
                    {"bon_n", c.dataset.bon_n},
                    {"tilted_fraction", c.dataset.tilted_fraction},
                    {"seed", c.stage_seed(c.dataset_seed, "dataset")},
                    {"temperature", c.dataset.sampler.temperature},
                    {"top_p", c.dataset.sampler.top_p}};
    j["rm"] = {{"subset", to_string(c.rm_subset)},
               {"l2", c.rm.l2},
               {"heldout_fraction", c.rm.heldout_fraction},
               {"grad_tol", c.rm.grad_tol},
               {"max_iterations", c.rm.max_iterations},
               {"seed", c.stage_seed(c.rm_seed, "rm")}};
    j["dpo"] = {{"beta", c.dpo.beta},
                {"lr", c.dpo.learning_rate},
                {"epochs", c.dpo.epochs},
                {"batch_size", c.dpo.batch_size},
                {"optimizer", to_string(c.dpo.optimizer)},
                {"seed", c.stage_seed(c.dpo_seed, "dpo")}};
    j["fdpo"] = {{"max_epochs", c.fdpo.max_epochs},
                 {"margin", margin_to_json(c.fdpo.margin)},
                 {"filter_top_p", c.fdpo.filter_sampler.top_p},
                 {"filter_temperature", c.fdpo.filter_sampler.temperature},
                 {"retrain_rm", c.fdpo.retrain_rm}};
    j["rl"] = {{"beta", c.rl.beta},
               {"lr", c.rl.learning_rate},
               {"epochs", c.rl.epochs},
               {"prompts_per_step", c.rl.prompts_per_step},
               {"samples_per_prompt", c.rl.samples_per_prompt},
               {"mode", to_string(c.rl.mode)},
               {"seed", c.stage_seed(c.rl_seed, "rl")}};
    j["eval"] = {{"win_rate_pairs", c.win_rate_pairs},
                 {"prompts", c.eval_on_train ? "train" : "eval"},
                 {"seed", seed_or_null(c.eval_seed)}};
    ojson margins = ojson::array();
    for (double m : c.experiment.margins) margins.push_back(margin_to_json(m));
    j["experiment"] = {{"name", c.experiment.name},
                       {"seeds", c.experiment.seeds},
                       {"margins", margins},
                       {"top_ps", c.experiment.top_ps},
                       {"prop1_k", c.experiment.prop1_k}};
    return j.dump();
}

namespace {

// ------------------------------------------------------------ flag plumbing

struct Overrides {
    std::optional<std::string> config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> master_seed;
    std::optional<std::uint64_t> seed;

    std::optional<int> vocab, length, train_prompts, eval_prompts;
    std::optional<double> demo_temperature;
    std::optional<int> demos_per_prompt;

    std::optional<std::string> mode;
    std::optional<std::size_t> size;
    std::optional<int> bon_n;
    std::optional<double> tilted_fraction;

    std::optional<std::string> subset;

    std::optional<double> beta, lr;
    std::optional<int> epochs, batch_size;
    std::optional<std::string> optimizer;

    std::optional<std::string> margin;
    std::optional<int> max_epochs;
    std::optional<double> filter_top_p, filter_temperature;
    bool retrain_rm = false;

    std::optional<std::string> rl_mode;
    std::optional<int> samples_per_prompt, prompts_per_step;

    std::optional<int> win_rate_pairs;
    std::optional<std::string> prompts;

    std::optional<std::string> name;
    std::optional<int> seeds;
    std::optional<std::vector<std::string>> margins;
    std::optional<std::vector<double>> top_ps;
    std::optional<int> k;
    std::optional<int> prompt;

    std::string env_path, sft_path, policy_path, dataset_path, rm_path, run_dir;
};

void common_flags(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config, "JSON run config; flags override its fields");
    app->add_option("--out", o.out, std::string("output directory (default: $") + kOutRootEnv + "/<stage>)");
    app->add_option("--master-seed", o.master_seed, "master seed for stage-name seed splitting");
}

void dpo_flags(CLI::App* app, Overrides& o) {
    app->add_option("--beta", o.beta, "KL coefficient");
    app->add_option("--lr", o.lr, "learning rate");
    app->add_option("--epochs", o.epochs, "epochs");
    app->add_option("--batch-size", o.batch_size, "minibatch size");
    app->add_option("--optimizer", o.optimizer, "sgd | adam");
    app->add_option("--seed", o.seed, "shuffle seed");
}

void fdpo_flags(CLI::App* app, Overrides& o) {
    app->add_option("--margin", o.margin, "discard margin (number or inf)");
    app->add_option("--max-epochs", o.max_epochs, "maximum epochs");
    app->add_option("--filter-top-p", o.filter_top_p, "nucleus mass of filter generations");
    app->add_option("--filter-temperature", o.filter_temperature, "temperature of filter generations");
    app->add_flag("--retrain-rm", o.retrain_rm, "refit the proxy RM on the kept set after every pass");
}

void rl_flags(CLI::App* app, Overrides& o) {
    app->add_option("--beta", o.beta, "KL coefficient");
    app->add_option("--lr", o.lr, "learning rate");
    app->add_option("--epochs", o.epochs, "epochs");
    app->add_option("--mode", o.rl_mode, "exact | sampled");
    app->add_option("--samples-per-prompt", o.samples_per_prompt, "samples per prompt (sampled mode)");
    app->add_option("--prompts-per-step", o.prompts_per_step, "prompts per step");
    app->add_option("--seed", o.seed, "seed");
}

template <class T, class U>
void take(const std::optional<T>& src, U& dst) {
    if (src) dst = *src;
}

// Applies flags to the config for `stage`; `--seed` binds to that stage.
RunConfig resolve(const Overrides& o, const std::string& stage) {
    RunConfig c = o.config ? load_run_config(*o.config) : RunConfig{};
    take(o.master_seed, c.master_seed);
    take(o.vocab, c.env.vocab_size);
    take(o.length, c.env.response_len);
    take(o.train_prompts, c.env.train_prompts);
    take(o.eval_prompts, c.env.eval_prompts);
    take(o.demo_temperature, c.env.demo_temperature);
    take(o.demos_per_prompt, c.demos_per_prompt);
    if (o.mode) c.dataset.mode = parse_dataset_mode(*o.mode);
    take(o.size, c.dataset.size);
    take(o.bon_n, c.dataset.bon_n);
    take(o.tilted_fraction, c.dataset.tilted_fraction);
    if (o.subset) c.rm_subset = parse_subset(*o.subset);
    if (stage == "train-rl") {
        take(o.beta, c.rl.beta);
        take(o.lr, c.rl.learning_rate);
        take(o.epochs, c.rl.epochs);
    } else {
        take(o.beta, c.dpo.beta);
        take(o.lr, c.dpo.learning_rate);
        take(o.epochs, c.dpo.epochs);
    }
    take(o.batch_size, c.dpo.batch_size);
    if (o.optimizer) c.dpo.optimizer = parse_optimizer(*o.optimizer);
    if (o.margin) c.fdpo.margin = parse_margin(*o.margin);
    take(o.max_epochs, c.fdpo.max_epochs);
    take(o.filter_top_p, c.fdpo.filter_sampler.top_p);
    take(o.filter_temperature, c.fdpo.filter_sampler.temperature);
    if (o.retrain_rm) c.fdpo.retrain_rm = true;
    if (o.rl_mode) c.rl.mode = parse_rl_mode(*o.rl_mode);
    take(o.samples_per_prompt, c.rl.samples_per_prompt);
    take(o.prompts_per_step, c.rl.prompts_per_step);
    take(o.win_rate_pairs, c.win_rate_pairs);
    if (o.prompts) {
        if (*o.prompts != "train" && *o.prompts != "eval") fail(ErrorKind::config, "--prompts must be train or eval");
        c.eval_on_train = *o.prompts == "train";
    }
    take(o.name, c.experiment.name);
    take(o.seeds, c.experiment.seeds);
    if (o.margins) {
        c.experiment.margins.clear();
        for (const auto& m : *o.margins) c.experiment.margins.push_back(parse_margin(m));
    }
    take(o.top_ps, c.experiment.top_ps);
    if (stage == "prop1") take(o.k, c.experiment.prop1_k);

    if (o.seed) {
        if (stage == "gen-env") c.env_seed = o.seed;
        else if (stage == "train-sft") c.sft_seed = o.seed;
        else if (stage == "build-dataset") c.dataset_seed = o.seed;
        else if (stage == "train-rm") c.rm_seed = o.seed;
        else if (stage == "train-dpo" || stage == "train-fdpo") c.dpo_seed = o.seed;
        else if (stage == "train-rl") c.rl_seed = o.seed;
        else if (stage == "eval" || stage == "prop1") c.eval_seed = o.seed;
    }

    if (o.out) {
        c.out = *o.out;
    } else if (c.out.empty()) {
        const char* root = std::getenv(kOutRootEnv);
        if (!root || !*root) fail(ErrorKind::usage, "--out is required (or set " + std::string(kOutRootEnv) + ")");
        c.out = (fs::path(root) / stage).string();
    }
    return c;
}

std::string require(const std::string& path, const char* flag) {
    if (path.empty()) fail(ErrorKind::usage, std::string(flag) + " is required");
    return path;
}

class Stage {
public:
    Stage(std::string name, const RunConfig& cfg) : cfg_(cfg) {
        manifest_.stage = std::move(name);
        manifest_.config_json = run_config_json(cfg);
        ensure_dir(cfg.out);
    }

    std::string input(const std::string& path) {
        if (!fs::exists(path)) fail(ErrorKind::data, "input not found: " + path);
        manifest_.inputs[path] = file_digest(path);
        return path;
    }

    std::string output(const std::string& rel) const { return (fs::path(cfg_.out) / rel).string(); }

    void emit(const std::string& rel, const std::string& content) {
        write_file(output(rel), content);
        produced(rel);
    }

    void produced(const std::string& rel) { manifest_.outputs[rel] = file_digest(output(rel)); }

    void finish() { write_manifest(cfg_.out, manifest_); }

private:
    const RunConfig& cfg_;
    Manifest manifest_;
};

std::vector<PromptId> eval_prompts_for(const RunConfig& c, const Environment& env) {
    return c.eval_on_train ? env.train_prompts() : env.eval_prompts();
}

// Trainers hand the hook their working copy, which still carries the init role.
EpochHook make_hook(const Evaluator& ev, std::string role) {
    return [&ev, role = std::move(role)](const PolicyParams& p, int epoch) {
        EvalRecord r = ev.evaluate(p, epoch);
        r.role = role;
        return r;
    };
}

void print_eval(const EvalRecord& e) {
    ojson j{{"role", e.role},
            {"gold_reward_raw", e.gold_reward_raw},
            {"gold_reward_norm", e.gold_reward_norm},
            {"kl_to_ref", e.kl_to_ref},
            {"win_rate_vs_sft", e.win_rate_vs_sft},
            {"prompt_count", e.prompt_count}};
    std::cout << j.dump() << "\n";
}

// --------------------------------------------------------------- stages

void cmd_gen_env(const RunConfig& c) {
    Stage st("gen-env", c);
    EnvSpec spec = c.env;
    spec.seed = c.stage_seed(c.env_seed, "env");
    const Environment env = Environment::build(spec);
    st.emit("env.json", env_json(env));
    st.finish();
    std::cout << "env " << env.digest() << " dim " << env.feature_map().dim() << "\n";
}

void cmd_train_sft(const RunConfig& c, const Overrides& o) {
    Stage st("train-sft", c);
    const Environment env = load_env(st.input(require(o.env_path, "--env")));
    const auto demos = sample_demos(env, c.demos_per_prompt, c.stage_seed(c.sft_seed, "sft"));
    const PolicyParams sft = sft_train(env, demos);
    st.emit("policy.json", policy_json(sft));
    st.finish();
    std::cout << "sft policy from " << demos.size() << " demos\n";
}

void cmd_build_dataset(const RunConfig& c, const Overrides& o) {
    Stage st("build-dataset", c);
    const Environment env = load_env(st.input(require(o.env_path, "--env")));
    const PolicyParams sft = load_policy(st.input(require(o.sft_path, "--sft")), env.digest());
    DatasetConfig dc = c.dataset;
    dc.seed = c.stage_seed(c.dataset_seed, "dataset");
    const PreferenceDataset ds = build_dataset(dc, env, sft);
    save_dataset(ds, st.output("dataset.jsonl"));
    st.produced("dataset.jsonl");
    st.finish();
    const DatasetStats s = dataset_stats(ds);
    std::cout << ojson{{"n", ds.size()},
                       {"chosen_mean", s.chosen_mean},
                       {"rejected_mean", s.rejected_mean},
                       {"overall_mean", s.overall_mean}}
                     .dump()
              << "\n";
}

void cmd_train_rm(const RunConfig& c, const Overrides& o) {
    Stage st("train-rm", c);
    const Environment env = load_env(st.input(require(o.env_path, "--env")));
    const PreferenceDataset ds = load_dataset(st.input(require(o.dataset_path, "--dataset")), env.digest());
    RmTrainConfig rc = c.rm;
    rc.seed = c.stage_seed(c.rm_seed, "rm");
    const RmTrainResult r = train_rm(env, ds, c.rm_subset, rc);
    save_reward(r.params, st.output("rm.json"));
    st.produced("rm.json");
    st.finish();
    std::cout << ojson{{"subset", to_string(r.params.subset)},
                       {"heldout_accuracy", r.params.heldout_accuracy},
                       {"iterations", r.iterations},
                       {"degenerate", r.degenerate}}
                     .dump()
              << "\n";
}

struct TrainInputs {
    Environment env;
    PolicyParams sft;
};

TrainInputs load_train_inputs(Stage& st, const Overrides& o) {
    Environment env = load_env(st.input(require(o.env_path, "--env")));
    PolicyParams sft = load_policy(st.input(require(o.sft_path, "--sft")), env.digest());
    return {std::move(env), std::move(sft)};
}

void cmd_train_dpo(const RunConfig& c, const Overrides& o) {
    Stage st("train-dpo", c);
    const auto in = load_train_inputs(st, o);
    const PreferenceDataset ds = load_dataset(st.input(require(o.dataset_path, "--dataset")), in.env.digest());
    DpoConfig dc = c.dpo;
    dc.shuffle_seed = c.stage_seed(c.dpo_seed, "dpo");
    const Evaluator ev(in.env, in.sft, eval_prompts_for(c, in.env),
                       {c.win_rate_pairs, c.stage_seed(c.eval_seed, "eval")});
    const DpoResult r = train_dpo(ds, in.sft, dc, make_hook(ev, "dpo"));
    st.emit("policy.json", policy_json(r.policy));
    st.emit("dpo_metrics.csv", dpo_metrics_csv(r.steps));
    st.emit("eval.csv", eval_csv(r.evals));
    st.finish();
    print_eval(r.evals.back());
}

void cmd_train_fdpo(const RunConfig& c, const Overrides& o) {
    Stage st("train-fdpo", c);
    const auto in = load_train_inputs(st, o);
    const PreferenceDataset ds = load_dataset(st.input(require(o.dataset_path, "--dataset")), in.env.digest());
    const RewardParams phi = load_reward(st.input(require(o.rm_path, "--rm")), in.env.digest());
    FdpoConfig fc = c.fdpo;
    fc.dpo = c.dpo;
    fc.dpo.shuffle_seed = c.stage_seed(c.dpo_seed, "dpo");
    fc.filter_sampler.seed = derive_seed(fc.dpo.shuffle_seed, "filter");
    fc.rm = c.rm;
    fc.rm.seed = c.stage_seed(c.rm_seed, "rm");
    const Evaluator ev(in.env, in.sft, eval_prompts_for(c, in.env),
                       {c.win_rate_pairs, c.stage_seed(c.eval_seed, "eval")});
    const FdpoResult r = train_fdpo(in.env, ds, in.sft, phi, fc, make_hook(ev, "fdpo"));
    st.emit("policy.json", policy_json(r.policy));
    st.emit("dpo_metrics.csv", dpo_metrics_csv(r.steps));
    st.emit("fdpo_filter.csv", fdpo_filter_csv(ds, r));
    st.emit("fdpo_epochs.csv", fdpo_epochs_csv(r.reports));
    st.emit("eval.csv", eval_csv(r.evals));
    st.finish();
    if (r.exhausted) std::cerr << "fdpo: kept set empty after epoch " << r.epochs_run - 1 << ", stopped early\n";
    if (!r.evals.empty()) print_eval(r.evals.back());
}

void cmd_train_rl(const RunConfig& c, const Overrides& o) {
    Stage st("train-rl", c);
    const auto in = load_train_inputs(st, o);
    const RewardParams phi = load_reward(st.input(require(o.rm_path, "--rm")), in.env.digest());
    RlConfig rc = c.rl;
    rc.seed = c.stage_seed(c.rl_seed, "rl");
    const Evaluator ev(in.env, in.sft, eval_prompts_for(c, in.env),
                       {c.win_rate_pairs, c.stage_seed(c.eval_seed, "eval")});
    const RlResult r = train_rl(in.env, in.sft, in.sft, phi, rc, make_hook(ev, "rl"));
    st.emit("policy.json", policy_json(r.policy));
    st.emit("rl_metrics.csv", rl_metrics_csv(r.steps));
    st.emit("eval.csv", eval_csv(r.evals));
    st.finish();
    print_eval(r.evals.back());
}

void cmd_eval(const RunConfig& c, const Overrides& o) {
    Stage st("eval", c);
    const auto in = load_train_inputs(st, o);
    const PolicyParams theta = load_policy(st.input(require(o.policy_path, "--policy")), in.env.digest());
    const auto prompts = eval_prompts_for(c, in.env);
    const EvalRecord e =
        evaluate_policy(in.env, theta, in.sft, prompts, c.stage_seed(c.eval_seed, "eval"), c.win_rate_pairs);
    st.emit("eval.csv", eval_csv(std::span(&e, 1)));
    st.finish();
    print_eval(e);
}

void cmd_prop1(const RunConfig& c, const Overrides& o) {
    Stage st("prop1", c);
    const Environment env = load_env(st.input(require(o.env_path, "--env")));
    const PolicyParams theta = load_policy(st.input(require(o.policy_path, "--policy")), env.digest());
    const PromptId x = o.prompt.value_or(0);
    if (x < 0 || x >= env.spec().total_prompts()) fail(ErrorKind::config, "--prompt out of range");
    Rng rng = make_rng(derive_seed(c.stage_seed(c.eval_seed, "prop1"), static_cast<std::uint64_t>(x)));
    std::vector<Response> ys;
    const auto rows = prop1_stats(theta, x, c.experiment.prop1_k, rng, &ys);
    std::string rows_csv = "i,j,log_delta,log_norm_ratio,cosine\n";
    std::string probe_csv = "i,j,delta,measured_ratio,cosine,log_norm_ratio,assumptions_met\n";
    std::size_t met = 0;
    for (const auto& r : rows) {
        rows_csv += std::to_string(r.i) + "," + std::to_string(r.j) + "," + decimal17(r.log_delta) + "," +
                    decimal17(r.log_norm_ratio) + "," + decimal17(r.cosine) + "\n";
        const Response& yi = ys[static_cast<std::size_t>(r.i)];
        const Response& yj = ys[static_cast<std::size_t>(r.j)];
        if (yi == yj) continue;
        const bool i_first = env.gold_score(x, yi) >= env.gold_score(x, yj);
        const auto rep = sensitivity_probe(theta, x, i_first ? yi : yj, i_first ? yj : yi);
        met += rep.assumptions_met ? 1 : 0;
        probe_csv += std::to_string(r.i) + "," + std::to_string(r.j) + "," + decimal17(rep.delta) + "," +
                     decimal17(rep.measured_ratio) + "," + decimal17(rep.cosine) + "," +
                     decimal17(rep.log_norm_ratio) + "," + (rep.assumptions_met ? "1" : "0") + "\n";
    }
    st.emit("prop1.csv", rows_csv);
    st.emit("sensitivity.csv", probe_csv);
    st.finish();
    std::cout << ojson{{"rows", rows.size()}, {"assumptions_met", met}}.dump() << "\n";
}

void cmd_experiment(const RunConfig& c) {
    ExperimentPlan plan = c.experiment;
    if (plan.name.empty()) fail(ErrorKind::usage, "--name is required");
    plan.master_seed = c.master_seed;
    plan.output_dir = c.out;
    plan.pipeline.env = c.env;
    plan.pipeline.demos_per_prompt = c.demos_per_prompt;
    plan.pipeline.dataset_size = c.dataset.size;
    plan.pipeline.bon_n = c.dataset.bon_n;
    plan.pipeline.tilted_fraction = c.dataset.tilted_fraction;
    plan.pipeline.rm_subset = c.rm_subset;
    plan.pipeline.rm = c.rm;
    plan.pipeline.dpo = c.dpo;
    plan.pipeline.fdpo = c.fdpo;
    plan.pipeline.rl = c.rl;
    plan.pipeline.win_rate_pairs = c.win_rate_pairs;
    Stage st("experiment", c);
    const ExperimentReport rep = run_experiment(plan);
    for (const auto& f : rep.files) st.produced(f);
    st.finish();
    for (const auto& [name, arm] : rep.arms) {
        std::printf("%-40s mean %+.4f  se %.4f\n", name.c_str(), arm.mean, arm.std_error);
    }
    for (const auto& [name, v] : rep.verdicts) {
        std::printf("%-40s %zu/%zu %s\n", name.c_str(), v.passed, v.total, v.holds ? "holds" : "does not hold");
    }
}

void cmd_verify(const Overrides& o) {
    const auto drift = verify_manifest(require(o.run_dir, "--run"));
    for (const auto& d : drift) std::cout << "drift " << d.path << " expected " << d.expected << " got " << d.actual << "\n";
    if (!drift.empty()) fail(ErrorKind::data, std::to_string(drift.size()) + " artifact(s) drifted, first: " + drift.front().path);
    std::cout << "ok\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Preference-optimization toy pipeline: env, SFT, datasets, reward model, DPO, fDPO, RL"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    Overrides o;

    auto* gen_env = app.add_subcommand("gen-env", "draw an environment and its gold reward");
    common_flags(gen_env, o);
    gen_env->add_option("--seed", o.seed, "environment seed");
    gen_env->add_option("--vocab", o.vocab, "vocabulary size");
    gen_env->add_option("--length", o.length, "response length");
    gen_env->add_option("--train-prompts", o.train_prompts, "train prompt count");
    gen_env->add_option("--eval-prompts", o.eval_prompts, "eval prompt count");
    gen_env->add_option("--demo-temperature", o.demo_temperature, "demo tilt temperature");

    auto* sft = app.add_subcommand("train-sft", "fit the SFT policy on tilted demonstrations");
    common_flags(sft, o);
    sft->add_option("--env", o.env_path, "env.json");
    sft->add_option("--demos-per-prompt", o.demos_per_prompt, "demonstrations per train prompt");
    sft->add_option("--seed", o.seed, "demo seed");

    auto* ds = app.add_subcommand("build-dataset", "synthesize a gold-labeled preference dataset");
    common_flags(ds, o);
    ds->add_option("--env", o.env_path, "env.json");
    ds->add_option("--sft", o.sft_path, "SFT policy.json");
    ds->add_option("--mode", o.mode, "low | high | mix | source_mix");
    ds->add_option("--size", o.size, "number of pairs");
    ds->add_option("--bon-n", o.bon_n, "best-of-n width");
    ds->add_option("--tilted-fraction", o.tilted_fraction, "source_mix share of tilted pairs");
    ds->add_option("--seed", o.seed, "dataset seed");

    auto* rm = app.add_subcommand("train-rm", "fit a Bradley-Terry proxy reward model");
    common_flags(rm, o);
    rm->add_option("--env", o.env_path, "env.json");
    rm->add_option("--dataset", o.dataset_path, "dataset.jsonl");
    rm->add_option("--subset", o.subset, "small | medium | large");
    rm->add_option("--seed", o.seed, "held-out split seed");

    auto* dpo = app.add_subcommand("train-dpo", "DPO from the SFT policy");
    common_flags(dpo, o);
    dpo->add_option("--env", o.env_path, "env.json");
    dpo->add_option("--sft", o.sft_path, "SFT policy.json (init and reference)");
    dpo->add_option("--dataset", o.dataset_path, "dataset.jsonl");
    dpo_flags(dpo, o);

    auto* fdpo = app.add_subcommand("train-fdpo", "filtered DPO from the SFT policy");
    common_flags(fdpo, o);
    fdpo->add_option("--env", o.env_path, "env.json");
    fdpo->add_option("--sft", o.sft_path, "SFT policy.json (init and reference)");
    fdpo->add_option("--dataset", o.dataset_path, "dataset.jsonl");
    fdpo->add_option("--rm", o.rm_path, "proxy rm.json");
    dpo_flags(fdpo, o);
    fdpo_flags(fdpo, o);

    auto* rl = app.add_subcommand("train-rl", "KL-regularized policy gradient against a proxy reward");
    common_flags(rl, o);
    rl->add_option("--env", o.env_path, "env.json");
    rl->add_option("--sft", o.sft_path, "SFT policy.json (init and reference)");
    rl->add_option("--rm", o.rm_path, "proxy rm.json");
    rl_flags(rl, o);

    auto* ev = app.add_subcommand("eval", "gold reward, KL and win rate of a policy");
    common_flags(ev, o);
    ev->add_option("--env", o.env_path, "env.json");
    ev->add_option("--sft", o.sft_path, "SFT policy.json (baseline)");
    ev->add_option("--policy", o.policy_path, "policy.json to evaluate");
    ev->add_option("--prompts", o.prompts, "train | eval");
    ev->add_option("--win-rate-pairs", o.win_rate_pairs, "paired samples for the win rate");
    ev->add_option("--seed", o.seed, "win-rate seed");

    auto* p1 = app.add_subcommand("prop1", "gradient geometry over K samples and sensitivity probes");
    common_flags(p1, o);
    p1->add_option("--env", o.env_path, "env.json");
    p1->add_option("--policy", o.policy_path, "policy.json");
    p1->add_option("--prompt", o.prompt, "prompt id");
    p1->add_option("--k", o.k, "samples (default 16)");
    p1->add_option("--seed", o.seed, "sampling seed");

    auto* ex = app.add_subcommand("experiment", "multi-seed experiment bundle");
    common_flags(ex, o);
    ex->add_option("--name", o.name, "quality_sensitivity | fdpo_vs_dpo | rm_size_sweep | top_p_sweep | "
                                     "margin_sweep | source_mix | prop1");
    ex->add_option("--seeds", o.seeds, "number of seeds");
    ex->add_option("--margins", o.margins, "margin sweep values")->delimiter(',');
    ex->add_option("--top-ps", o.top_ps, "top-p sweep values")->delimiter(',');
    ex->add_option("--size", o.size, "pairs per dataset");
    ex->add_option("--demos-per-prompt", o.demos_per_prompt, "demonstrations per train prompt");
    ex->add_option("--win-rate-pairs", o.win_rate_pairs, "paired samples for the win rate");

    auto* verify = app.add_subcommand("verify", "recompute artifact digests of a run directory");
    verify->add_option("--run", o.run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "prefopt: " << e.what() << "\n\n" << app.help();
        return static_cast<int>(ErrorKind::usage);
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        const std::string stage = sub->get_name();
        if (stage == "verify") {
            cmd_verify(o);
            return 0;
        }
        const RunConfig c = resolve(o, stage);
        if (stage == "gen-env") cmd_gen_env(c);
        else if (stage == "train-sft") cmd_train_sft(c, o);
        else if (stage == "build-dataset") cmd_build_dataset(c, o);
        else if (stage == "train-rm") cmd_train_rm(c, o);
        else if (stage == "train-dpo") cmd_train_dpo(c, o);
        else if (stage == "train-fdpo") cmd_train_fdpo(c, o);
        else if (stage == "train-rl") cmd_train_rl(c, o);
        else if (stage == "eval") cmd_eval(c, o);
        else if (stage == "prop1") cmd_prop1(c, o);
        else cmd_experiment(c);
        return 0;
    } catch (const Error& e) {
        std::cerr << "prefopt: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "prefopt: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::data);
    }
}

}  // namespace prefopt
