#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sslcrop {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Fixed-point text with `digits` decimals.
std::string format_fixed(double v, int digits);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace sslcrop
