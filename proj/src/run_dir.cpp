#include "pjat/run_dir.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "pjat/error.hpp"

namespace pjat {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

RunDir create_run_dir(const fs::path& runs_root, const std::string& command, const std::string& fingerprint,
                      const fs::path& explicit_dir) {
  std::error_code ec;
  if (!explicit_dir.empty()) {
    if (fs::exists(explicit_dir)) {
      throw UsageError("run directory " + explicit_dir.string() + " already exists; run directories are never reused");
    }
    fs::create_directories(explicit_dir, ec);
    if (ec) throw DataError("cannot create " + explicit_dir.string() + ": " + ec.message());
    return {explicit_dir, explicit_dir.filename().string()};
  }
  const std::string base = command + "-" + hex64(fnv1a64(fingerprint)).substr(0, 12);
  fs::create_directories(runs_root, ec);
  if (ec) throw DataError("cannot create " + runs_root.string() + ": " + ec.message());
  for (int k = 1;; ++k) {
    const std::string id = k == 1 ? base : base + "-" + std::to_string(k);
    const fs::path dir = runs_root / id;
    // create_directory reports false when the directory already existed
    if (fs::create_directory(dir, ec)) return {dir, id};
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_manifest(const RunDir& run, const nlohmann::json& manifest) {
  const fs::path path = run.path / "manifest.json";
  if (fs::exists(path)) throw DataError("refusing to replace existing manifest " + path.string());
  write_text_file(path, manifest.dump(2) + "\n");
}

}  // namespace pjat
