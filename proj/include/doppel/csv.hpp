#pragma once

#include <filesystem>
#include <charconv>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace doppel::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws ParseError if absent.
  std::size_t column(const std::string& name) const;
};

// RFC 4180-style fields: quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_line(const std::string& line);
std::string join_line(const std::vector<std::string>& fields);

Table parse(std::istream& in, const std::string& source);
// Reads a table and checks that the header starts with `required` columns
// in order; every row must have the header's width.
Table read(const std::filesystem::path& path, std::initializer_list<const char*> required = {});
void write(std::ostream& out, const Table& table);
void write(const std::filesystem::path& path, const Table& table);

// Shortest round-trip decimal form of a double.
inline std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace doppel::csv
