#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace svae::cli {

/// Shortest text that parses back to the same double.
std::string format_number(double v);
std::string format_optional(const std::optional<double>& v);
/// Quotes a field when it contains a comma, quote or newline.
std::string escape_field(const std::string& field);

/// Writes a header row on open and one line per row; every row must have
/// the header's field count.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header);

  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  std::size_t width_;
  std::filesystem::path path_;
};

}  // namespace svae::cli
