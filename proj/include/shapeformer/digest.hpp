#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace shapeformer {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace shapeformer
