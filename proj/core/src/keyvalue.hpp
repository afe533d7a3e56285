#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace slicefinder::detail {

std::string trim(const std::string &s);

// Parses `key: value` lines. Blank lines and `#` comments are skipped; a line
// without a colon or a repeated key throws `MalformedHeader`.
std::map<std::string, std::string> read_key_values(const std::filesystem::path &path);

// printf("%.17g")
std::string format_double(double v);

}  // namespace slicefinder::detail
