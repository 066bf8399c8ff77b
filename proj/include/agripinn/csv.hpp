/**
 * @file csv.hpp
 * @brief Minimal comma-separated table I/O used by the artifact writers.
 *
 * No quoting support: identifiers in this project never contain commas.
 */
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace agripinn::csv {

/// Shortest text that parses back to the identical double.
std::string format_double(double v);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  ///< 1-based source line of each row

    /// Column index by name; throws SchemaError (line 1) if absent.
    std::size_t require_column(std::string_view name) const;
    std::optional<std::size_t> find_column(std::string_view name) const;
};

Table read_file(const std::string& path);
Table parse(std::string_view text);

/// Parses a numeric cell; throws SchemaError naming line and column.
double parse_double(const Table& t, std::size_t row, std::size_t col);
long long parse_int(const Table& t, std::size_t row, std::size_t col);
bool is_missing(const Table& t, std::size_t row, std::size_t col);

/// Writes via a temporary file and rename so readers never see partial files.
void write_atomic(const std::string& path, const std::string& contents);
std::string read_text(const std::string& path);

/// FNV-1a 64-bit hash, printed as 16 hex digits.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace agripinn::csv
