#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace urbansense::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place, so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// RFC 4180 parsing: quoted fields, doubled quotes, embedded separators and newlines.
/// Accepts LF and CRLF line endings. Blank lines are skipped.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);

/// Non-blank lines, without terminators.
std::vector<std::string> split_lines(std::string_view text);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace urbansense::io
