#include "hmte/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace hmte {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) bad_value(key, v, "a number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, v, "a boolean");
}

template <std::size_t N>
std::array<Index, N> parse_list(const std::string& key, const std::string& v) {
    std::array<Index, N> out{};
    std::stringstream ss(v);
    std::size_t i = 0;
    for (std::string item; std::getline(ss, item, ',');) {
        if (i >= N) bad_value(key, v, "a list of the expected length");
        out[i++] = parse_int(key, trim(item));
    }
    if (i != N) bad_value(key, v, "a list of the expected length");
    return out;
}

template <std::size_t N>
std::string format_list(const std::array<Index, N>& a) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
    return s;
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define HMTE_INT_FIELD(name, member)                                                                          \
    Field {                                                                                                   \
        name, [](RunConfig& c, const std::string& v) { c.member = parse_int(name, v); },                      \
            [](const RunConfig& c) { return std::to_string(c.member); }                                       \
    }
#define HMTE_REAL_FIELD(name, member)                                                                         \
    Field {                                                                                                   \
        name, [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(parse_double(name, v)); }, \
            [](const RunConfig& c) { return format_double(static_cast<double>(c.member)); }                   \
    }
#define HMTE_BOOL_FIELD(name, member)                                                                         \
    Field {                                                                                                   \
        name, [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); },                     \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }                       \
    }
#define HMTE_LIST_FIELD(name, member)                                                                         \
    Field {                                                                                                   \
        name,                                                                                                 \
            [](RunConfig& c, const std::string& v) {                                                          \
                c.member = parse_list<std::tuple_size_v<decltype(c.member)>>(name, v);                        \
            },                                                                                                \
            [](const RunConfig& c) { return format_list(c.member); }                                          \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        HMTE_INT_FIELD("image_size", model.image_size),
        HMTE_LIST_FIELD("cnn_channels", model.cnn_channels),
        HMTE_INT_FIELD("rowcol_extent", model.rowcol_extent),
        HMTE_LIST_FIELD("decoder_channels", model.decoder_channels),
        HMTE_INT_FIELD("patch_size", model.patch_size),
        HMTE_INT_FIELD("embed_dim", model.embed_dim),
        HMTE_INT_FIELD("window", model.window),
        HMTE_INT_FIELD("heads", model.heads),
        HMTE_LIST_FIELD("classifier_widths", model.classifier_widths),
        HMTE_REAL_FIELD("dropout", model.dropout),
        HMTE_BOOL_FIELD("aaa_frozen", model.aaa_frozen),
        HMTE_REAL_FIELD("w1", loss.w1),
        HMTE_REAL_FIELD("alpha", loss.alpha),
        HMTE_REAL_FIELD("gamma", loss.gamma),
        HMTE_REAL_FIELD("dice_smooth", loss.dice_smooth),
        HMTE_REAL_FIELD("prob_clip", loss.prob_clip),
        HMTE_BOOL_FIELD("printed_focal_variant", loss.printed_focal_variant),
        HMTE_BOOL_FIELD("hflip", augment.hflip),
        HMTE_REAL_FIELD("shift_frac", augment.shift_frac),
        HMTE_REAL_FIELD("rot_deg", augment.rot_deg),
        HMTE_REAL_FIELD("split_train", split.train),
        HMTE_REAL_FIELD("split_val", split.val),
        HMTE_REAL_FIELD("split_test", split.test),
        HMTE_REAL_FIELD("lr", lr),
        HMTE_INT_FIELD("batch", batch),
        HMTE_INT_FIELD("epochs", epochs),
        Field{"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); },
              [](const RunConfig& c) { return std::to_string(c.seed); }},
        Field{"manifest", [](RunConfig& c, const std::string& v) { c.manifest = v; },
              [](const RunConfig& c) { return c.manifest.generic_string(); }},
    };
    return table;
}

#undef HMTE_INT_FIELD
#undef HMTE_REAL_FIELD
#undef HMTE_BOOL_FIELD
#undef HMTE_LIST_FIELD

}  // namespace

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (augment.shift_frac < 0 || augment.shift_frac >= 1) throw ConfigError("shift_frac must be in [0, 1)");
    if (augment.rot_deg < 0) throw ConfigError("rot_deg must be >= 0");
    const double total = split.train + split.val + split.test;
    if (split.train <= 0 || split.val < 0 || split.test < 0 || std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be nonnegative, train > 0, and sum to 1");
    }
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(config, value);
            config.explicit_keys.insert(key);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    RunConfig config;
    std::istringstream in(text);
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!config.manifest.empty() && config.manifest.is_relative() && !base_dir.empty()) {
        config.manifest = base_dir / config.manifest;
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

std::string config_echo(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::optional<std::uint64_t> seed_from_env() {
    const char* v = std::getenv("HMTE_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    std::uint64_t out = 0;
    const std::string s(v);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return out;
}

}  // namespace hmte
