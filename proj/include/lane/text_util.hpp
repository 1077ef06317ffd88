#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lane::text {

std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
/// Removes markdown emphasis markers (** and __).
std::string strip_markdown(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
std::string hex64(std::uint64_t v);
/// Fixed-point rendering with `digits` decimals ("%.*f").
std::string fixed(double v, int digits);

}  // namespace lane::text
