#ifndef FEDGEO_IO_HPP
#define FEDGEO_IO_HPP

#include <filesystem>
#include <string>
#include <string_view>

namespace fedgeo {

/// Writes to "<path>.tmp" and renames over path, so readers never observe a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace fedgeo

#endif  // FEDGEO_IO_HPP
