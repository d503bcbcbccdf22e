#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace confound_em {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC-4180-ish reader: comma separated, optional double-quoted fields, CRLF tolerated,
/// blank lines skipped. Throws SchemaError on ragged rows or an empty file.
CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

std::string csv_escape(const std::string& field);

}  // namespace confound_em
