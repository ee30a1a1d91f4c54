#include "mtdetect/sectionfile.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtdetect/error.hpp"

namespace mtd::text {

std::vector<const Section*> SectionFile::find_all(std::string_view name) const {
  std::vector<const Section*> out;
  for (const auto& s : sections) {
    if (s.name == name) out.push_back(&s);
  }
  return out;
}

const Section* SectionFile::find(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

SectionFile parse_sections(std::string_view content, std::string source) {
  SectionFile file;
  file.source = std::move(source);
  int line_no = 0;
  size_t pos = 0;
  while (pos <= content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (const size_t hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    Record rec;
    rec.line = line_no;
    size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      const size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      rec.fields.push_back(Token{std::string(line.substr(start, i - start)),
                                 line_no, static_cast<int>(start) + 1});
    }
    if (rec.fields.empty()) {
      if (end == content.size()) break;
      continue;
    }
    const Token& first = rec.fields.front();
    if (first.text.front() == '[') {
      if (rec.fields.size() != 1 || first.text.size() < 3 ||
          first.text.back() != ']') {
        throw ParseError(file.source, line_no, first.column,
                         "malformed section header");
      }
      file.sections.push_back(
          Section{first.text.substr(1, first.text.size() - 2), line_no, {}});
    } else {
      if (file.sections.empty()) {
        throw ParseError(file.source, line_no, first.column,
                         "record outside of any section");
      }
      file.sections.back().records.push_back(std::move(rec));
    }
    if (end == content.size()) break;
  }
  return file;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw InputError("failed writing '" + path + "'");
}

SectionFile read_sections(const std::string& path) {
  return parse_sections(read_file(path), path);
}

void fail(const Token& tok, const std::string& source,
          const std::string& message) {
  throw ParseError(source, tok.line, tok.column, message);
}

void fail(const Record& rec, const std::string& source,
          const std::string& message) {
  const int col = rec.fields.empty() ? 1 : rec.fields.front().column;
  throw ParseError(source, rec.line, col, message);
}

void expect_fields(const Record& rec, const std::string& source, size_t count) {
  if (rec.fields.size() != count) {
    fail(rec, source,
         "expected " + std::to_string(count) + " fields, found " +
             std::to_string(rec.fields.size()));
  }
}

double to_double(const Token& tok, const std::string& source) {
  double value = 0.0;
  const char* first = tok.text.data();
  const char* last = first + tok.text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    fail(tok, source, "expected a number, found '" + tok.text + "'");
  }
  return value;
}

long to_long(const Token& tok, const std::string& source) {
  long value = 0;
  const char* first = tok.text.data();
  const char* last = first + tok.text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    fail(tok, source, "expected an integer, found '" + tok.text + "'");
  }
  return value;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace mtd::text
