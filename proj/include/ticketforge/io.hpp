#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ticketforge {

// Whole-file read; throws DataError on failure.
std::string read_file(const std::filesystem::path& path);

// Write-then-rename so readers never observe partial files.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

// Fixed-point formatting used in every CSV so reruns are byte-identical.
std::string format_fixed(double v, int digits = 6);

std::vector<std::string> split_csv_line(const std::string& line);

// Splits on commas; trims ASCII whitespace around items; drops empties.
std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace ticketforge
