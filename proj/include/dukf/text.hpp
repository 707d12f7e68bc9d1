#pragma once

// Small string helpers shared by the CSV, config and report code.

#include <string>
#include <string_view>
#include <vector>

namespace dukf {

std::string trim(std::string_view s);

// Splits on commas; no quoting support, cells are trimmed.
std::vector<std::string> split_csv_line(std::string_view line);

// Whole-string parse; throws std::invalid_argument on trailing garbage.
double parse_double(const std::string& s);

// Shortest round-trippable representation.
std::string format_double(double v);

}  // namespace dukf
