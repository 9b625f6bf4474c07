#pragma once

#include "hmte/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmte {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad arguments; maps to kExitUsage.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct GenSynthArgs {
    Index n = 400;
    Index size = 64;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
};

struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> manifest;
    /// `key=value` overrides applied after the config file.
    std::vector<std::string> overrides;
};

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::string split = "test";
    /// Defaults to the run directory holding the checkpoint.
    std::optional<std::filesystem::path> out;
    /// Per-image split listing; defaults to <run>/reports/split.csv when present.
    std::optional<std::filesystem::path> split_file;
};

struct PredictArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path image;
    std::filesystem::path out;
};

struct GradcheckArgs {
    Index size = 16;
    std::optional<std::uint64_t> seed;
};

// Each command writes progress to `out`, diagnostics to `err`, and returns an exit code.
int cmd_gen_synth(const GenSynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

}  // namespace hmte
