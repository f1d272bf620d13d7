#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace oneseg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// `key = value` lines; blank lines and `#` comments skipped, whitespace trimmed.
KeyValues parse_key_values(const std::string& text, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);

std::string trim(const std::string& s);

// Shortest text that parses back to the same double.
std::string format_double(double v);

double parse_double(const std::string& text, const std::string& what);
std::uint64_t parse_unsigned(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);

std::string read_text(const std::filesystem::path& path);
// Writes via a temporary file in the same directory, then renames.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace oneseg
