#include "config.hpp"

#include "deepdgl/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace deepdgl::cli {

namespace {

enum class Kind { integer, unsigned64, real, int_list, boolean, variant, text };

struct Rule {
    Kind kind;
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
    bool min_exclusive = false;
    bool allow_empty = false;  // lists and text
};

const std::map<std::string, Rule>& rules() {
    static const std::map<std::string, Rule> r = [] {
        std::map<std::string, Rule> m;
        const Rule pos_int{Kind::integer, 1};
        const Rule pos_list{Kind::int_list, 1};
        const Rule non_neg{Kind::real, 0};
        const Rule positive{Kind::real, 0, std::numeric_limits<double>::infinity(), true};
        for (const char* k : {"model.input_steps", "model.horizon", "model.ffn_ratio", "model.codebook_size",
                              "model.context_dim", "model.positives", "model.negatives", "model.hyper_hidden",
                              "model.disc_hidden", "train.decay_every", "train.epochs", "train.b_h", "train.b_v",
                              "train.dead_code_patience", "train.val_stride", "data.stride", "synth.n_series",
                              "synth.n_steps", "synth.prototypes"}) {
            m[k] = pos_int;
        }
        m["model.phase_period"] = {Kind::integer, 2};
        m["synth.period"] = {Kind::integer, 2};
        m["model.n_covariates"] = {Kind::integer, 0};
        for (const char* k : {"model.conv_kernels", "model.conv_channels", "model.enc_heads", "model.enc_dims",
                              "model.dec_heads", "model.dec_dims"}) {
            m[k] = pos_list;
        }
        for (const char* k : {"data.transductive", "data.inductive_val", "data.inductive_test"}) {
            m[k] = {Kind::int_list, 0, std::numeric_limits<double>::infinity(), false, true};
        }
        for (const char* k : {"model.alpha", "model.gamma", "synth.local_amplitude", "synth.trend_scale", "synth.noise_std"}) {
            m[k] = non_neg;
        }
        for (const char* k : {"model.temperature", "model.hyper_gain", "train.learning_rate", "train.clip_norm"}) {
            m[k] = positive;
        }
        m["train.decay_factor"] = {Kind::real, 0, 1, true};
        for (const char* k : {"train.seed", "data.split_seed", "synth.seed"}) m[k] = {Kind::unsigned64};
        m["train.dead_code_reset"] = {Kind::boolean};
        m["model.variant"] = {Kind::variant};
        for (const char* k : {"data.values", "data.covariates"}) m[k] = {Kind::text, 0, 0, false, true};
        return m;
    }();
    return r;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> parse_list(const std::string& s) {
    std::vector<int> out;
    std::string body = s;
    if (!body.empty() && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
    if (trim(body).empty()) return out;
    std::stringstream in(body);
    for (std::string item; std::getline(in, item, ',');) {
        int v = 0;
        if (!parse_number(trim(item), v)) throw std::invalid_argument("not an integer list");
        out.push_back(v);
    }
    return out;
}

bool in_range(const Rule& r, double v) {
    if (r.min_exclusive ? !(v > r.min) : !(v >= r.min)) return false;
    return v <= r.max;
}

std::string describe(const Rule& r) {
    std::ostringstream s;
    s << (r.min_exclusive ? "> " : ">= ") << r.min;
    if (r.max < std::numeric_limits<double>::infinity()) s << " and <= " << r.max;
    return s.str();
}

// Canonical form of `value` for `key`, or an error message.
std::string canonicalize(const std::string& key, const std::string& value, std::string& error) {
    const Rule& r = rules().at(key);
    switch (r.kind) {
        case Kind::integer: {
            int v = 0;
            if (!parse_number(value, v)) return error = "expected an integer", "";
            if (!in_range(r, v)) return error = "must be " + describe(r), "";
            return std::to_string(v);
        }
        case Kind::unsigned64: {
            std::uint64_t v = 0;
            if (!parse_number(value, v)) return error = "expected a non-negative integer", "";
            return std::to_string(v);
        }
        case Kind::real: {
            double v = 0;
            if (!parse_number(value, v) || !std::isfinite(v)) return error = "expected a number", "";
            if (!in_range(r, v)) return error = "must be " + describe(r), "";
            return value;
        }
        case Kind::int_list: {
            std::vector<int> v;
            try {
                v = parse_list(value);
            } catch (const std::invalid_argument&) {
                return error = "expected a comma-separated integer list", "";
            }
            if (v.empty() && !r.allow_empty) return error = "list must not be empty", "";
            for (int x : v) {
                if (!in_range(r, x)) return error = "list entries must be " + describe(r), "";
            }
            return join(v);
        }
        case Kind::boolean:
            if (value == "true" || value == "1" || value == "yes") return "true";
            if (value == "false" || value == "0" || value == "no") return "false";
            return error = "expected true or false", "";
        case Kind::variant:
            try {
                return model::to_string(model::parse_variant(value));
            } catch (const ConfigError&) {
                return error = "expected one of full|conv_transformer|no_cmc|global_only|local_only", "";
            }
        case Kind::text:
            return value;
    }
    return value;
}

void apply(RunConfig& cfg, const std::string& name, const std::string& raw, Source source, std::size_t line) {
    const std::string key = resolve_key(name);
    const std::string origin = source == Source::file ? " (line " + std::to_string(line) + ")" : "";
    if (key.empty()) {
        const std::string msg = "unknown key '" + name + "'" + origin;
        if (source == Source::file) throw ParseError(ParseError::Kind::unknown_key, "unknown key '" + name + "'", line);
        throw UsageError(msg);
    }
    std::string error;
    const std::string value = canonicalize(key, trim(raw), error);
    if (!error.empty()) {
        const std::string msg = "invalid value '" + trim(raw) + "' for " + key + ": " + error;
        if (source == Source::file) throw ParseError(ParseError::Kind::out_of_range, msg, line);
        throw UsageError(msg);
    }
    cfg.settings[key] = {value, source, line};
}

}  // namespace

std::string to_string(Source s) {
    switch (s) {
        case Source::default_value: return "default";
        case Source::file: return "file";
        case Source::env: return "env";
        case Source::flag: return "flag";
    }
    return "";
}

const std::map<std::string, std::string>& default_settings() {
    static const std::map<std::string, std::string> d = [] {
        std::map<std::string, std::string> m = model::ModelConfig{}.to_key_values();
        m.merge(training::TrainConfig{}.to_key_values());
        const data::SyntheticSpec synth;
        m.insert({{"data.values", ""},
                  {"data.covariates", ""},
                  {"data.stride", "1"},
                  {"data.split_seed", "0"},
                  {"data.transductive", ""},
                  {"data.inductive_val", ""},
                  {"data.inductive_test", ""},
                  {"synth.n_series", std::to_string(synth.n_series)},
                  {"synth.n_steps", std::to_string(synth.n_steps)},
                  {"synth.prototypes", std::to_string(synth.n_global_prototypes)},
                  {"synth.period", std::to_string(synth.period)},
                  {"synth.local_amplitude", "0.5"},
                  {"synth.trend_scale", "0"},
                  {"synth.noise_std", "0.1"},
                  {"synth.seed", "0"}});
        return m;
    }();
    return d;
}

std::string resolve_key(std::string_view name) {
    const auto& d = default_settings();
    const std::string n(name);
    if (d.count(n)) return n;
    if (n == "seed") return "train.seed";
    if (n == "lr") return "train.learning_rate";
    std::string found;
    for (const auto& [key, value] : d) {
        const auto dot = key.find('.');
        if (key.compare(dot + 1, std::string::npos, n) == 0) {
            if (!found.empty()) return {};
            found = key;
        }
    }
    return found;
}

RunConfig resolve_config(std::string_view file_text, const std::vector<Override>& flags,
                         const std::optional<std::string>& env_seed) {
    RunConfig cfg;
    for (const auto& [key, value] : default_settings()) cfg.settings[key] = {value, Source::default_value, 0};
    if (env_seed) apply(cfg, "train.seed", *env_seed, Source::env, 0);

    std::size_t lineno = 0;
    std::istringstream in{std::string(file_text)};
    for (std::string raw; std::getline(in, raw);) {
        ++lineno;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
            throw ParseError(ParseError::Kind::malformed_line, "expected 'key = value', got '" + trim(raw) + "'", lineno);
        }
        apply(cfg, trim(line.substr(0, eq)), line.substr(eq + 1), Source::file, lineno);
    }
    for (const auto& f : flags) apply(cfg, f.key, f.value, Source::flag, 0);

    // Cross-key consistency.
    try {
        cfg.model();
        cfg.train();
        cfg.synth().validate();
    } catch (const ConfigError& e) {
        throw UsageError(std::string("inconsistent configuration: ") + e.what());
    }
    return cfg;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& path, const std::vector<Override>& flags,
                       const std::optional<std::string>& env_seed) {
    std::string text;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw UsageError("cannot read config file: " + path->string());
        std::ostringstream s;
        s << in.rdbuf();
        text = s.str();
    }
    return resolve_config(text, flags, env_seed);
}

const std::string& RunConfig::get(const std::string& key) const { return settings.at(key).value; }

std::map<std::string, std::string> RunConfig::key_values() const {
    std::map<std::string, std::string> kv;
    for (const auto& [key, s] : settings) kv[key] = s.value;
    return kv;
}

model::ModelConfig RunConfig::model() const { return model::ModelConfig::from_key_values(key_values()); }

training::TrainConfig RunConfig::train() const { return training::TrainConfig::from_key_values(key_values()); }

DataSettings RunConfig::data() const {
    DataSettings d;
    d.values_path = get("data.values");
    d.covariates_path = get("data.covariates");
    d.stride = std::stoi(get("data.stride"));
    d.split_seed = std::stoull(get("data.split_seed"));
    d.transductive = parse_list(get("data.transductive"));
    d.inductive_val = parse_list(get("data.inductive_val"));
    d.inductive_test = parse_list(get("data.inductive_test"));
    return d;
}

data::SyntheticSpec RunConfig::synth() const {
    data::SyntheticSpec s;
    s.n_series = std::stoi(get("synth.n_series"));
    s.n_steps = std::stoi(get("synth.n_steps"));
    s.n_global_prototypes = std::stoi(get("synth.prototypes"));
    s.period = std::stoi(get("synth.period"));
    s.local_amplitude = std::stod(get("synth.local_amplitude"));
    s.trend_scale = std::stod(get("synth.trend_scale"));
    s.noise_std = std::stod(get("synth.noise_std"));
    s.seed = std::stoull(get("synth.seed"));
    return s;
}

std::string RunConfig::dump() const {
    std::ostringstream out;
    for (const auto& [key, s] : settings) {
        out << key << " = " << s.value << "  # " << to_string(s.source);
        if (s.source == Source::file) out << ":" << s.line;
        out << '\n';
    }
    return out.str();
}

}  // namespace deepdgl::cli
