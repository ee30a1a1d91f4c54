#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mtd::text {

/// One whitespace-separated token with its 1-based source position.
struct Token {
  std::string text;
  int line = 0;
  int column = 0;
};

struct Record {
  std::vector<Token> fields;
  int line = 0;
};

struct Section {
  std::string name;
  int line = 0;
  std::vector<Record> records;
};

/// A parsed line-oriented section file:
///
///   # comment
///   [section]
///   field field field   # trailing comment
///
/// Records before the first section header are a ParseError.
struct SectionFile {
  std::string source;  // file name used in diagnostics
  std::vector<Section> sections;

  /// All sections with the given name, in file order.
  std::vector<const Section*> find_all(std::string_view name) const;
  const Section* find(std::string_view name) const;
};

SectionFile parse_sections(std::string_view content, std::string source);
SectionFile read_sections(const std::string& path);

// Field conversion helpers; all throw ParseError pointing at the token.
double to_double(const Token& tok, const std::string& source);
long to_long(const Token& tok, const std::string& source);
[[noreturn]] void fail(const Token& tok, const std::string& source,
                       const std::string& message);
[[noreturn]] void fail(const Record& rec, const std::string& source,
                       const std::string& message);
void expect_fields(const Record& rec, const std::string& source, size_t count);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace mtd::text
