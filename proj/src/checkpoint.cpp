#include "pjat/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace pjat {

using nlohmann::json;

void save_params(const std::filesystem::path& path, const json& meta, const ParamList& params) {
  json list = json::array();
  for (const auto* p : params) {
    list.push_back({{"name", p->name}, {"shape", p->shape}, {"values", p->value}});
  }
  const json doc = {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"meta", meta}, {"params", std::move(list)}};
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out << doc.dump() << '\n';
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("rename to " + path.string() + " failed: " + ec.message());
}

ParamFile load_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt file " + path.string() + ": " + e.what());
  }
  try {
    if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) throw CheckpointError("not a pjat checkpoint");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("version mismatch: file has " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    ParamFile file;
    file.meta = doc.at("meta");
    for (const auto& p : doc.at("params")) {
      StoredParam sp{p.at("shape").get<std::vector<std::size_t>>(), p.at("values").get<std::vector<double>>()};
      std::size_t count = 1;
      for (auto d : sp.shape) count *= d;
      const auto name = p.at("name").get<std::string>();
      if (count != sp.values.size()) throw CheckpointError("value count mismatch for " + name);
      if (!file.params.emplace(name, std::move(sp)).second) throw CheckpointError("duplicate parameter " + name);
    }
    return file;
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt file " + path.string() + ": " + e.what());
  }
}

void assign_params(const ParamFile& file, const ParamList& params) {
  if (file.params.size() != params.size()) {
    throw CheckpointError("parameter count mismatch: file has " + std::to_string(file.params.size()) + ", model has " +
                          std::to_string(params.size()));
  }
  for (const auto* p : params) {
    auto it = file.params.find(p->name);
    if (it == file.params.end()) throw CheckpointError("missing parameter " + p->name);
    if (it->second.shape != p->shape) throw CheckpointError("shape mismatch for " + p->name);
  }
  for (auto* p : params) {
    p->value = file.params.at(p->name).values;
    p->zero_grad();
  }
}

}  // namespace pjat
