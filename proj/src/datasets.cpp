#include "prefopt/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace prefopt {

using ojson = nlohmann::ordered_json;

std::string to_string(DatasetMode m) {
    switch (m) {
        case DatasetMode::low: return "low";
        case DatasetMode::high: return "high";
        case DatasetMode::mix: return "mix";
        case DatasetMode::source_mix: return "source_mix";
    }
    return "?";
}

DatasetMode parse_dataset_mode(std::string_view s) {
    if (s == "low") return DatasetMode::low;
    if (s == "high") return DatasetMode::high;
    if (s == "mix") return DatasetMode::mix;
    if (s == "source_mix") return DatasetMode::source_mix;
    fail(ErrorKind::config, "unknown dataset mode '" + std::string(s) + "'");
}

void DatasetConfig::validate() const {
    if (size < 2) fail(ErrorKind::config, "dataset size must be >= 2");
    if (mode == DatasetMode::mix && size % 2 != 0) fail(ErrorKind::config, "mix dataset size must be even");
    if (!(tilted_fraction >= 0.0 && tilted_fraction <= 1.0)) {
        fail(ErrorKind::config, "tilted fraction must lie in [0, 1]");
    }
    if (bon_n < 2) fail(ErrorKind::config, "best-of-n requires n >= 2");
    sampler.validate();
}

namespace {

std::size_t uniform_index(std::size_t n, Rng& rng) {
    return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// Gold-best index; exact ties go to the lexicographically smaller response.
std::size_t best_index(const std::vector<Response>& ys, const std::vector<double>& gold) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < ys.size(); ++i) {
        if (gold[i] > gold[best] || (gold[i] == gold[best] && ys[i] < ys[best])) best = i;
    }
    return best;
}

PreferenceSample labeled(PromptId x, Response a, double ga, Response b, double gb, std::string source) {
    PreferenceSample s;
    s.prompt = x;
    s.source = std::move(source);
    const bool a_wins = ga > gb || (ga == gb && a < b);
    if (a_wins) {
        s.chosen = std::move(a);
        s.gold_chosen = ga;
        s.rejected = std::move(b);
        s.gold_rejected = gb;
    } else {
        s.chosen = std::move(b);
        s.gold_chosen = gb;
        s.rejected = std::move(a);
        s.gold_rejected = ga;
    }
    return s;
}

[[noreturn]] void retries_exhausted(PromptId x) {
    fail(ErrorKind::data, "sample generation failed for prompt " + std::to_string(x) + " after " +
                              std::to_string(kMaxPairRetries) + " retries (identical responses)");
}

}  // namespace

PreferenceSample gen_pair_bon(const Environment& env, const PolicyParams& theta, PromptId x, int n,
                              const SamplerConfig& sampler, Rng& rng) {
    if (n < 2) fail(ErrorKind::config, "best-of-n requires n >= 2");
    for (int attempt = 0; attempt < kMaxPairRetries; ++attempt) {
        std::vector<Response> ys;
        std::vector<double> gold;
        for (int i = 0; i < n; ++i) {
            ys.push_back(sample(theta, x, sampler, rng));
            gold.push_back(env.gold_score(x, ys.back()));
        }
        const std::size_t best = best_index(ys, gold);
        std::vector<std::size_t> others;
        for (std::size_t i = 0; i < ys.size(); ++i) {
            if (i != best) others.push_back(i);
        }
        const std::size_t rej = others.size() == 1 ? others[0] : others[uniform_index(others.size(), rng)];
        if (ys[rej] == ys[best]) continue;
        PreferenceSample s;
        s.prompt = x;
        s.chosen = ys[best];
        s.gold_chosen = gold[best];
        s.rejected = ys[rej];
        s.gold_rejected = gold[rej];
        s.source = n == 2 ? "sft2" : "bon(" + std::to_string(n) + ")";
        return s;
    }
    retries_exhausted(x);
}

PreferenceSample gen_pair_low(const Environment& env, const PolicyParams& theta, PromptId x,
                              const SamplerConfig& sampler, Rng& rng) {
    return gen_pair_bon(env, theta, x, 2, sampler, rng);
}

PreferenceSample gen_pair_tilted(const Environment& env, std::span<const double> tilted, PromptId x,
                                 Rng& rng) {
    for (int attempt = 0; attempt < kMaxPairRetries; ++attempt) {
        Response a = decode_response(static_cast<std::uint32_t>(draw_index(tilted, rng)), env.vocab(), env.length());
        Response b = decode_response(static_cast<std::uint32_t>(draw_index(tilted, rng)), env.vocab(), env.length());
        if (a == b) continue;
        const double ga = env.gold_score(x, a);
        const double gb = env.gold_score(x, b);
        return labeled(x, std::move(a), ga, std::move(b), gb, "tilted");
    }
    retries_exhausted(x);
}

PreferenceDataset build_dataset(const DatasetConfig& cfg, const Environment& env,
                                const PolicyParams& theta_sft) {
    cfg.validate();
    if (theta_sft.env_digest != env.digest()) fail(ErrorKind::data, "policy env digest does not match environment");

    PreferenceDataset ds;
    ds.env_digest = env.digest();
    ds.config = cfg;
    ds.samples.reserve(cfg.size);

    const auto train = env.train_prompts();
    const std::uint64_t pair_seed = derive_seed(cfg.seed, "pairs");
    auto stream = [&](std::size_t i) { return make_rng(derive_seed(pair_seed, i)); };

    switch (cfg.mode) {
        case DatasetMode::low:
        case DatasetMode::high: {
            const int n = cfg.mode == DatasetMode::low ? 2 : cfg.bon_n;
            for (std::size_t i = 0; i < cfg.size; ++i) {
                Rng rng = stream(i);
                const PromptId x = train[uniform_index(train.size(), rng)];
                ds.samples.push_back(gen_pair_bon(env, theta_sft, x, n, cfg.sampler, rng));
            }
            break;
        }
        case DatasetMode::mix: {
            std::vector<PromptId> ids = train;
            Rng split = make_rng(derive_seed(cfg.seed, "split"));
            std::shuffle(ids.begin(), ids.end(), split);
            const std::vector<PromptId> low_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(ids.size() / 2));
            const std::vector<PromptId> high_ids(ids.begin() + static_cast<std::ptrdiff_t>(ids.size() / 2), ids.end());
            for (std::size_t i = 0; i < cfg.size; ++i) {
                Rng rng = stream(i);
                const bool low_half = i < cfg.size / 2;
                const auto& pool = low_half ? low_ids : high_ids;
                const PromptId x = pool[uniform_index(pool.size(), rng)];
                ds.samples.push_back(gen_pair_bon(env, theta_sft, x, low_half ? 2 : cfg.bon_n, cfg.sampler, rng));
            }
            break;
        }
        case DatasetMode::source_mix: {
            const auto n_tilted = static_cast<std::size_t>(std::llround(cfg.tilted_fraction * static_cast<double>(cfg.size)));
            std::vector<std::optional<std::vector<double>>> tilted(static_cast<std::size_t>(env.spec().total_prompts()));
            for (std::size_t i = 0; i < cfg.size; ++i) {
                Rng rng = stream(i);
                const PromptId x = train[uniform_index(train.size(), rng)];
                if (i < n_tilted) {
                    auto& t = tilted[static_cast<std::size_t>(x)];
                    if (!t) t = tilted_distribution(env, x, env.spec().demo_temperature);
                    ds.samples.push_back(gen_pair_tilted(env, *t, x, rng));
                } else {
                    ds.samples.push_back(gen_pair_low(env, theta_sft, x, cfg.sampler, rng));
                }
            }
            break;
        }
    }
    if (cfg.mode == DatasetMode::mix || cfg.mode == DatasetMode::source_mix) {
        Rng shuffle = make_rng(derive_seed(cfg.seed, "shuffle"));
        std::shuffle(ds.samples.begin(), ds.samples.end(), shuffle);
    }
    return ds;
}

DatasetStats dataset_stats(const PreferenceDataset& ds) {
    if (ds.samples.empty()) fail(ErrorKind::data, "empty dataset");
    double c = 0.0;
    double r = 0.0;
    for (const auto& s : ds.samples) {
        c += s.gold_chosen;
        r += s.gold_rejected;
    }
    const auto n = static_cast<double>(ds.samples.size());
    return {c / n, r / n, (c + r) / (2.0 * n)};
}

namespace {

ojson header_json(const PreferenceDataset& ds) {
    ojson h;
    h["format"] = "prefset/1";
    h["env_digest"] = ds.env_digest;
    h["mode"] = to_string(ds.config.mode);
    h["n"] = ds.samples.size();
    h["seed"] = ds.config.seed;
    h["bon_n"] = ds.config.bon_n;
    h["tilted_fraction"] = ds.config.tilted_fraction;
    h["sampler"] = {{"temperature", ds.config.sampler.temperature},
                    {"top_p", ds.config.sampler.top_p},
                    {"seed", ds.config.sampler.seed}};
    return h;
}

ojson sample_json(const PreferenceSample& s) {
    ojson j;
    j["prompt"] = s.prompt;
    j["chosen"] = s.chosen;
    j["rejected"] = s.rejected;
    j["gold_chosen"] = s.gold_chosen;
    j["gold_rejected"] = s.gold_rejected;
    j["source"] = s.source;
    return j;
}

std::string serialize(const PreferenceDataset& ds) {
    std::string out = header_json(ds).dump() + "\n";
    for (const auto& s : ds.samples) out += sample_json(s).dump() + "\n";
    return out;
}

}  // namespace

std::string PreferenceDataset::digest() const { return hex64(fnv1a64(serialize(*this))); }

void save_dataset(const PreferenceDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::data, "cannot write " + path);
    out << serialize(ds);
    if (!out) fail(ErrorKind::data, "write failed for " + path);
}

PreferenceDataset load_dataset(const std::string& path, const std::string& expected_env_digest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::data, "cannot open " + path);
    PreferenceDataset ds;
    std::string line;
    std::size_t lineno = 0;
    std::size_t expected = 0;
    auto where = [&] { return path + ":" + std::to_string(lineno) + ": "; };

    while (std::getline(in, line)) {
        ++lineno;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const std::exception& e) {
            fail(ErrorKind::data, where() + "malformed JSON (" + e.what() + ")");
        }
        try {
            if (lineno == 1) {
                if (j.at("format").get<std::string>() != "prefset/1") fail(ErrorKind::data, where() + "unknown format");
                ds.env_digest = j.at("env_digest").get<std::string>();
                if (!expected_env_digest.empty() && ds.env_digest != expected_env_digest) {
                    fail(ErrorKind::data, where() + "env digest " + ds.env_digest +
                                              " does not match environment " + expected_env_digest);
                }
                ds.config.mode = parse_dataset_mode(j.at("mode").get<std::string>());
                expected = j.at("n").get<std::size_t>();
                ds.config.size = expected;
                ds.config.seed = j.at("seed").get<std::uint64_t>();
                ds.config.bon_n = j.at("bon_n").get<int>();
                ds.config.tilted_fraction = j.at("tilted_fraction").get<double>();
                const auto& smp = j.at("sampler");
                ds.config.sampler = {smp.at("temperature").get<double>(), smp.at("top_p").get<double>(),
                                     smp.at("seed").get<std::uint64_t>()};
                continue;
            }
            PreferenceSample s;
            s.prompt = j.at("prompt").get<PromptId>();
            s.chosen = j.at("chosen").get<Response>();
            s.rejected = j.at("rejected").get<Response>();
            s.gold_chosen = j.at("gold_chosen").get<double>();
            s.gold_rejected = j.at("gold_rejected").get<double>();
            s.source = j.at("source").get<std::string>();
            ds.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::data, where() + "malformed record (" + e.what() + ")");
        }
    }
    if (lineno == 0) fail(ErrorKind::data, path + ":1: missing header");
    if (ds.samples.size() != expected) {
        lineno = ds.samples.size() + 2;
        fail(ErrorKind::data, where() + "missing sample (header declares " + std::to_string(expected) +
                                  ", file holds " + std::to_string(ds.samples.size()) + ")");
    }
    return ds;
}

}  // namespace prefopt
