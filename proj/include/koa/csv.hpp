#ifndef KOA_CSV_HPP
#define KOA_CSV_HPP

#include <string>
#include <vector>

namespace koa::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Parses a CSV file with a header row. Handles double-quoted fields with
// embedded commas/quotes/newlines. Every row must match the header width.
Table read_file(const std::string& path);

Table parse(const std::string& text);

// Quotes a field only when it needs quoting.
std::string escape_field(const std::string& field);

std::string format_row(const std::vector<std::string>& fields);

// Shortest representation that round-trips a double (up to 17 significant
// digits); keeps report files byte-stable across reruns.
std::string format_double(double v);

// Fixed-precision formatting for human-facing report columns.
std::string format_fixed(double v, int decimals);

// Writes via a temp file in the same directory followed by rename, so a
// crash never leaves a half-written artifact.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace koa::csv

#endif  // KOA_CSV_HPP
