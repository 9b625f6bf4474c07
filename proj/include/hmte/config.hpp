#pragma once

#include "hmte/data.hpp"
#include "hmte/network.hpp"
#include "hmte/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace hmte {

/// Every knob of a training run. Parsed from flat `key = value` text.
struct RunConfig {
    HybridConfig model;
    LossConfig loss;
    AugmentConfig augment;
    SplitRatios split;

    double lr = 1e-5;
    Index batch = 4;
    Index epochs = 30;
    std::uint64_t seed = 0;
    std::filesystem::path manifest;

    /// Keys given explicitly by the parsed text; not part of the echo.
    std::set<std::string> explicit_keys;

    void validate() const;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Applies one key. Unknown keys and malformed values throw ConfigError.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// `key = value` lines; '#' starts a comment. Relative paths resolve against `base_dir`.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Canonical `key = value` listing of every field in a fixed order; parse_config
/// of the echo reproduces the config.
std::string config_echo(const RunConfig& config);

/// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Seed from HMTE_SEED when set and parseable.
std::optional<std::uint64_t> seed_from_env();

}  // namespace hmte
