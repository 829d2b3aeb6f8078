#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mcn::io {

/// Writes content to a sibling temporary file and renames it over path.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double value);

}  // namespace mcn::io
