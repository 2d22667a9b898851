// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small text helpers shared by the CSV and JSON writers.

#include <string>
#include <string_view>
#include <vector>

namespace nss::text {

/// Shortest form with 17 significant digits; exact round trip for doubles.
std::string format_double(double v);

/// Shortest decimal that reads back to v ("300", "0.1").
std::string format_shortest(double v);

/// Parses the whole field as a decimal number; returns false on any leftover text.
bool parse_double(std::string_view field, double& out);

/// Splits one CSV line on commas and trims surrounding blanks and a trailing CR.
std::vector<std::string> split_csv_line(std::string_view line);

std::string_view trim(std::string_view s);

}  // namespace nss::text
