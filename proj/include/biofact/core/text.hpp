#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace biofact {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double x);
/// Strict full-string parse; throws ParseError naming `context` on failure.
double parse_double(std::string_view s, const std::string& context);
long long parse_int(std::string_view s, const std::string& context);

std::vector<std::string_view> split(std::string_view line, char sep);

std::string read_file(const std::string& path);
/// Writes the file atomically enough for our purposes (truncate + write); throws IoError with the path.
void write_file(const std::string& path, std::string_view contents);

} // namespace biofact
