#pragma once

// Minimal CSV support for the fixed file schemas this project reads and
// writes: comma separated, one header row, '.' decimal point, no quoting.
// Errors carry file and 1-based line number.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stocklik {

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace csv {

struct Row {
  std::vector<std::string> fields;
  int line = 0;
};

struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<Row> rows;
};

[[noreturn]] inline void fail(const std::string& path, int line, const std::string& what) {
  throw LoadError(path + ":" + std::to_string(line) + ": " + what);
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

// Reads a whole file and checks the header names match exactly (order
// included). Blank lines are skipped.
inline Table read_table(const std::string& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open file");
  Table t;
  t.path = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    std::vector<std::string> fields = split(stripped);
    if (t.header.empty()) {
      if (fields != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        fail(path, lineno, "expected header '" + want + "', got '" + stripped + "'");
      }
      t.header = fields;
      continue;
    }
    if (fields.size() != expected_header.size())
      fail(path, lineno, "expected " + std::to_string(expected_header.size()) + " fields, got " +
                             std::to_string(fields.size()));
    t.rows.push_back({std::move(fields), lineno});
  }
  if (t.header.empty()) throw LoadError(path + ": empty file");
  return t;
}

inline double parse_double(const Table& t, const Row& r, std::size_t col) {
  const std::string& s = r.fields[col];
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    fail(t.path, r.line, "not a number: '" + s + "' in column '" + t.header[col] + "'");
  return v;
}

inline int parse_int(const Table& t, const Row& r, std::size_t col) {
  const std::string& s = r.fields[col];
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    fail(t.path, r.line, "not an integer: '" + s + "' in column '" + t.header[col] + "'");
  return static_cast<int>(v);
}

// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back == v) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      if (std::strtod(shorter, nullptr) == v) return shorter;
    }
  }
  return buf;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error(path + ": cannot open for writing");
    path_ = path;
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error(path_ + ": write failed");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

}  // namespace csv
}  // namespace stocklik
