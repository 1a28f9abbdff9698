#pragma once

#include "deepdgl/data.hpp"
#include "deepdgl/model.hpp"
#include "deepdgl/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deepdgl::cli {

// Bad command line or configuration; maps to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Source { default_value, file, env, flag };
std::string to_string(Source s);

struct Setting {
    std::string value;
    Source source = Source::default_value;
    std::size_t line = 0;  // config-file line when source == file
};

struct Override {
    std::string key;
    std::string value;
};

// Data-source settings that are not part of the model or optimizer.
struct DataSettings {
    std::string values_path;
    std::string covariates_path;
    int stride = 1;
    std::uint64_t split_seed = 0;
    std::vector<int> transductive;
    std::vector<int> inductive_val;
    std::vector<int> inductive_test;
};

struct RunConfig {
    std::map<std::string, Setting> settings;

    const std::string& get(const std::string& key) const;
    model::ModelConfig model() const;
    training::TrainConfig train() const;
    DataSettings data() const;
    data::SyntheticSpec synth() const;

    // One `key = value  # source` line per key, sorted by key.
    std::string dump() const;
    std::map<std::string, std::string> key_values() const;
};

// Every recognized key with its default value.
const std::map<std::string, std::string>& default_settings();

// Full key for `name`: the key itself, `seed`, `lr`, or an unambiguous
// suffix such as `alpha` for `model.alpha`. Empty when unknown.
std::string resolve_key(std::string_view name);

// Flags override the file, the file overrides `env_seed` (train.seed only),
// which overrides the defaults.
RunConfig resolve_config(std::string_view file_text, const std::vector<Override>& flags,
                         const std::optional<std::string>& env_seed = std::nullopt);
RunConfig parse_config(const std::optional<std::filesystem::path>& path, const std::vector<Override>& flags,
                       const std::optional<std::string>& env_seed = std::nullopt);

}  // namespace deepdgl::cli
