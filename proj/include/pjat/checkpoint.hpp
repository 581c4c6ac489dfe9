#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pjat/autodiff.hpp"
#include "pjat/error.hpp"

namespace pjat {

// On-disk layout (JSON, UTF-8):
//   {"format": "pjat-checkpoint", "version": 1, "meta": {...},
//    "params": [{"name": "...", "shape": [..], "values": [..]}, ...]}
// Doubles are written in shortest round-trip form, so values restore bitwise.
inline constexpr const char* kCheckpointFormat = "pjat-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointError : DataError {
  explicit CheckpointError(const std::string& what) : DataError("checkpoint: " + what) {}
};

struct StoredParam {
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

struct ParamFile {
  nlohmann::json meta;
  std::map<std::string, StoredParam> params;
};

/// Writes to a temporary sibling and renames, so readers never see a partial file.
void save_params(const std::filesystem::path& path, const nlohmann::json& meta, const ParamList& params);

ParamFile load_param_file(const std::filesystem::path& path);

/// Checks every name and shape before copying any value.
void assign_params(const ParamFile& file, const ParamList& params);

}  // namespace pjat
