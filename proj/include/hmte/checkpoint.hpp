#pragma once

#include "hmte/params.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hmte {

inline constexpr const char* kCheckpointMagic = "HMTE-CKPT-1";

/// Layout:
///   HMTE-CKPT-1\n
///   config <byte count>\n<config echo>
///   params <count>\n
///   per parameter: <name> <ndim> <d0> ... \n followed by raw little-endian doubles
struct Checkpoint {
    std::string config_text;
    std::vector<NamedParam> params;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamStore& store);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values into `store` by name. Every store entry must be present with an
/// identical shape and no extra entries may remain.
void restore_params(const Checkpoint& checkpoint, ParamStore& store);

}  // namespace hmte
