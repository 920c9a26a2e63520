#include "mvseg/jsonio.hpp"

#include <fstream>

namespace mvseg {

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open json file: " + path.string());
  Json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed json in " + path.string() + ": " + e.what());
  }
  return doc;
}

void write_json_atomic(const std::filesystem::path& path, const Json& doc, int indent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << doc.dump(indent) << '\n';
    if (!out) throw std::runtime_error("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mvseg
