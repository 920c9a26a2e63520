#pragma once

#include <json.hpp>

#include <filesystem>

namespace mvseg {

// Insertion-ordered JSON keeps on-disk documents in a stable, intentional
// field order (also makes exports byte-reproducible).
using Json = nlohmann::ordered_json;

Json read_json_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target, so readers never
// observe a partially written document.
void write_json_atomic(const std::filesystem::path& path, const Json& doc, int indent = 2);

}  // namespace mvseg
