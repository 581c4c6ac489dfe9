#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace pjat {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Hash of the file contents; DataError if unreadable.
std::string file_digest(const std::filesystem::path& path);

struct RunDir {
  std::filesystem::path path;
  std::string run_id;
};

/// Creates a fresh run directory. With `explicit_dir` set, that exact
/// directory must not exist yet (UsageError). Otherwise the directory is
/// `<runs_root>/<command>-<id>`, suffixed `-2`, `-3`, ... when taken.
/// The id is derived from `fingerprint`.
RunDir create_run_dir(const std::filesystem::path& runs_root, const std::string& command, const std::string& fingerprint,
                      const std::filesystem::path& explicit_dir = {});

/// Writes `<dir>/manifest.json` once; refuses to replace an existing manifest.
void write_manifest(const RunDir& run, const nlohmann::json& manifest);

/// Writes text through a sibling temporary file and a rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pjat
