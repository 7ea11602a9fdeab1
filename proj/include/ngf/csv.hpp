#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ngf::csv {

// Shortest representation that parses back to the same double ('.' radix,
// independent of the global locale).
std::string format_double(double value);

double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

std::string_view trim(std::string_view text);

} // namespace ngf::csv
