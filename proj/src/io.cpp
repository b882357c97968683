#include "prefopt/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace prefopt {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::data, "cannot write " + path);
    out << content;
    if (!out) fail(ErrorKind::data, "write failed for " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::data, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) fail(ErrorKind::data, "cannot create directory " + path + ": " + ec.message());
}

namespace {

ojson hex_array(std::span<const double> v) {
    ojson a = ojson::array();
    for (double d : v) a.push_back(hex_double(d));
    return a;
}

std::vector<double> parse_hex_array(const ojson& a, const std::string& what) {
    if (!a.is_array()) fail(ErrorKind::data, what + " is not an array");
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& e : a) out.push_back(parse_double(e.get<std::string>()));
    return out;
}

ojson parse_json(const std::string& path) {
    try {
        return ojson::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, path + ": malformed JSON (" + e.what() + ")");
    }
}

void expect_format(const ojson& j, const char* format, const std::string& path) {
    if (!j.is_object() || j.value("format", "") != format) {
        fail(ErrorKind::data, path + ": expected format " + format);
    }
}

template <class F>
auto guarded(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, path + ": " + e.what());
    }
}

void check_digest(const std::string& found, const std::string& expected, const std::string& path) {
    if (!expected.empty() && found != expected) {
        fail(ErrorKind::data, path + ": env digest " + found + " does not match " + expected);
    }
}

std::string opt_field(const std::optional<double>& v) { return v ? decimal17(*v) : std::string(); }

}  // namespace

std::string env_json(const Environment& env) {
    const EnvSpec& s = env.spec();
    ojson j;
    j["format"] = "prefopt-env/1";
    j["digest"] = env.digest();
    j["spec"] = {{"vocab_size", s.vocab_size},
                 {"response_len", s.response_len},
                 {"train_prompts", s.train_prompts},
                 {"eval_prompts", s.eval_prompts},
                 {"seed", s.seed},
                 {"demo_temperature", hex_double(s.demo_temperature)},
                 {"enumeration_budget", s.enumeration_budget}};
    j["offset"] = hex_double(env.gold().offset);
    j["scale"] = hex_double(env.gold().scale);
    j["w_star"] = hex_array(env.gold().weights);
    return j.dump() + "\n";
}

void save_env(const Environment& env, const std::string& path) { write_file(path, env_json(env)); }

Environment load_env(const std::string& path) {
    const ojson j = parse_json(path);
    expect_format(j, "prefopt-env/1", path);
    return guarded(path, [&] {
        const auto& sj = j.at("spec");
        EnvSpec s;
        s.vocab_size = sj.at("vocab_size").get<int>();
        s.response_len = sj.at("response_len").get<int>();
        s.train_prompts = sj.at("train_prompts").get<int>();
        s.eval_prompts = sj.at("eval_prompts").get<int>();
        s.seed = sj.at("seed").get<std::uint64_t>();
        s.demo_temperature = parse_double(sj.at("demo_temperature").get<std::string>());
        s.enumeration_budget = sj.at("enumeration_budget").get<std::size_t>();
        GoldReward g;
        g.weights = parse_hex_array(j.at("w_star"), "w_star");
        g.offset = parse_double(j.at("offset").get<std::string>());
        g.scale = parse_double(j.at("scale").get<std::string>());
        Environment env = Environment::from_parts(s, std::move(g));
        if (env.digest() != j.at("digest").get<std::string>()) {
            fail(ErrorKind::data, path + ": stored digest does not match contents");
        }
        return env;
    });
}

std::string policy_json(const PolicyParams& p) {
    const std::span<const double> all(p.logits);
    ojson j;
    j["format"] = "prefopt-policy/1";
    j["env_digest"] = p.env_digest;
    j["role"] = p.role;
    j["vocab"] = p.shape.vocab;
    j["length"] = p.shape.length;
    j["prompts"] = p.shape.prompts;
    j["start_logits"] = hex_array(all.first(p.shape.start_block()));
    j["trans_logits"] = hex_array(all.subspan(p.shape.start_block()));
    return j.dump() + "\n";
}

void save_policy(const PolicyParams& p, const std::string& path) { write_file(path, policy_json(p)); }

PolicyParams load_policy(const std::string& path, const std::string& expected_env_digest) {
    const ojson j = parse_json(path);
    expect_format(j, "prefopt-policy/1", path);
    return guarded(path, [&] {
        PolicyShape shape{j.at("vocab").get<int>(), j.at("length").get<int>(), j.at("prompts").get<int>()};
        PolicyParams p(shape, j.at("env_digest").get<std::string>());
        check_digest(p.env_digest, expected_env_digest, path);
        p.role = j.at("role").get<std::string>();
        auto start = parse_hex_array(j.at("start_logits"), "start_logits");
        auto trans = parse_hex_array(j.at("trans_logits"), "trans_logits");
        if (start.size() != shape.start_block() || start.size() + trans.size() != shape.param_count()) {
            fail(ErrorKind::data, path + ": logit table sizes do not match the declared shape");
        }
        std::copy(start.begin(), start.end(), p.logits.begin());
        std::copy(trans.begin(), trans.end(), p.logits.begin() + static_cast<std::ptrdiff_t>(start.size()));
        p.check_finite();
        return p;
    });
}

void save_reward(const RewardParams& phi, const std::string& path) {
    ojson j;
    j["format"] = "prefopt-rm/1";
    j["env_digest"] = phi.env_digest;
    j["subset"] = to_string(phi.subset);
    j["trained_on"] = phi.trained_on;
    j["heldout_accuracy"] = hex_double(phi.heldout_accuracy);
    j["weights"] = hex_array(phi.weights);
    write_file(path, j.dump() + "\n");
}

RewardParams load_reward(const std::string& path, const std::string& expected_env_digest) {
    const ojson j = parse_json(path);
    expect_format(j, "prefopt-rm/1", path);
    return guarded(path, [&] {
        RewardParams phi;
        phi.env_digest = j.at("env_digest").get<std::string>();
        check_digest(phi.env_digest, expected_env_digest, path);
        phi.subset = parse_subset(j.at("subset").get<std::string>());
        phi.trained_on = j.at("trained_on").get<std::string>();
        phi.heldout_accuracy = parse_double(j.at("heldout_accuracy").get<std::string>());
        phi.weights = parse_hex_array(j.at("weights"), "weights");
        return phi;
    });
}

std::string dpo_metrics_csv(std::span<const StepRecord> steps) {
    std::string out = "step,epoch,objective,mean_weight,grad_norm,gold_reward_norm,kl_to_ref\n";
    for (const auto& s : steps) {
        out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + decimal17(s.objective) + "," +
               decimal17(s.mean_weight) + "," + decimal17(s.grad_norm) + "," + opt_field(s.gold_reward_norm) +
               "," + opt_field(s.kl_to_ref) + "\n";
    }
    return out;
}

std::string rl_metrics_csv(std::span<const RlStepRecord> steps) {
    std::string out = "step,epoch,objective,gold_reward_norm,kl_to_ref\n";
    for (const auto& s : steps) {
        out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + decimal17(s.objective) + "," +
               opt_field(s.gold_reward_norm) + "," + opt_field(s.kl_to_ref) + "\n";
    }
    return out;
}

std::string fdpo_filter_csv(const PreferenceDataset& ds, const FdpoResult& res) {
    std::string out = "epoch,sample_index,source,proxy_gen,proxy_chosen,gold_gen,gold_chosen,discarded\n";
    for (std::size_t e = 0; e < res.decisions.size(); ++e) {
        const int epoch = e < res.reports.size() ? res.reports[e].epoch : static_cast<int>(e);
        for (const auto& d : res.decisions[e]) {
            out += std::to_string(epoch) + "," + std::to_string(d.sample_index) + "," +
                   ds.samples.at(d.sample_index).source + "," + decimal17(d.proxy_gen) + "," +
                   decimal17(d.proxy_chosen) + "," + decimal17(d.gold_gen) + "," + decimal17(d.gold_chosen) + "," +
                   (d.discarded ? "1" : "0") + "\n";
        }
    }
    return out;
}

std::string fdpo_epochs_csv(std::span<const FilterEpochReport> reports) {
    std::string out = "epoch,kept,removed,unfiltered_ratio,accuracy,precision,recall,gold_reward_norm,kl_to_ref\n";
    for (const auto& r : reports) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.kept) + "," + std::to_string(r.removed) + "," +
               decimal17(r.unfiltered_ratio) + "," + decimal17(r.metrics.accuracy) + "," +
               opt_field(r.metrics.precision) + "," + opt_field(r.metrics.recall) + "," +
               decimal17(r.gold_reward_norm) + "," + decimal17(r.kl_to_ref) + "\n";
    }
    return out;
}

std::string eval_csv(std::span<const EvalRecord> evals) {
    std::string out = "epoch,role,gold_reward_raw,gold_reward_norm,kl_to_ref,win_rate_vs_sft,prompt_count\n";
    for (const auto& e : evals) {
        out += std::to_string(e.epoch) + "," + e.role + "," + decimal17(e.gold_reward_raw) + "," +
               decimal17(e.gold_reward_norm) + "," + decimal17(e.kl_to_ref) + "," + decimal17(e.win_rate_vs_sft) +
               "," + std::to_string(e.prompt_count) + "\n";
    }
    return out;
}

void write_manifest(const std::string& run_dir, const Manifest& m) {
    const fs::path path = fs::path(run_dir) / "manifest.json";
    ojson j;
    if (fs::exists(path)) {
        j = parse_json(path.string());
        expect_format(j, "prefopt-manifest/1", path.string());
    } else {
        j["format"] = "prefopt-manifest/1";
        j["stages"] = ojson::array();
        j["outputs"] = ojson::object();
    }
    j["tool_version"] = kToolVersion;
    ojson stage;
    stage["stage"] = m.stage;
    stage["tool_version"] = kToolVersion;
    stage["config"] = m.config_json.empty() ? ojson::object() : ojson::parse(m.config_json);
    stage["inputs"] = ojson::object();
    for (const auto& [in, digest] : m.inputs) stage["inputs"][in] = digest;
    stage["outputs"] = ojson::array();
    for (const auto& [out, digest] : m.outputs) {
        stage["outputs"].push_back(out);
        j["outputs"][out] = digest;
    }
    j["stages"].push_back(std::move(stage));
    write_file(path.string(), j.dump(2) + "\n");
}

std::vector<DriftEntry> verify_manifest(const std::string& run_dir) {
    const fs::path manifest = fs::path(run_dir) / "manifest.json";
    if (!fs::exists(manifest)) fail(ErrorKind::data, "no manifest.json in " + run_dir);
    const ojson j = parse_json(manifest.string());
    expect_format(j, "prefopt-manifest/1", manifest.string());
    std::vector<DriftEntry> drift;
    guarded(manifest.string(), [&] {
        for (const auto& [rel, digest] : j.at("outputs").items()) {
            const fs::path p = fs::path(run_dir) / rel;
            if (!fs::exists(p)) fail(ErrorKind::data, "manifest references missing file " + rel);
            const std::string actual = file_digest(p.string());
            if (actual != digest.get<std::string>()) drift.push_back({rel, digest.get<std::string>(), actual});
        }
        return 0;
    });
    return drift;
}

}  // namespace prefopt
