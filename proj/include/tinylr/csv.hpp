#pragma once
// Minimal RFC 4180 CSV writing and reading with round-trip number formatting.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tinylr::csv {

// %.17g round-trips every double; infinities and NaN are spelled out.
inline std::string num(double v) {
  if (v != v) return "nan";
  if (v == 1.0 / 0.0) return "inf";
  if (v == -1.0 / 0.0) return "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_num(const std::string& s) {
  if (s == "nan") return 0.0 / 0.0;
  if (s == "inf") return 1.0 / 0.0;
  if (s == "-inf") return -1.0 / 0.0;
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::runtime_error("csv: bad number '" + s + "'");
  return v;
}

inline std::string field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + field(fields[i]);
  return out + "\r\n";
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::runtime_error("csv: missing column " + name);
  }
};

inline std::string render(const Table& t) {
  std::string out = row(t.header);
  for (const auto& r : t.rows) out += row(r);
  return out;
}

inline void write_file(const std::string& path, const Table& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("csv: cannot write " + path);
  os << render(t);
}

inline Table parse(const std::string& text) {
  Table t;
  std::vector<std::string> cur;
  std::string f;
  bool quoted = false, any = false;
  auto end_row = [&] {
    cur.push_back(f);
    f.clear();
    if (t.header.empty()) t.header = cur;
    else t.rows.push_back(cur);
    cur.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') f += '"', ++i;
      else if (c == '"') quoted = false;
      else f += c;
      continue;
    }
    if (c == '"') quoted = true, any = true;
    else if (c == ',') cur.push_back(f), f.clear(), any = true;
    else if (c == '\r') continue;
    else if (c == '\n') end_row();
    else f += c, any = true;
  }
  if (any || !f.empty() || !cur.empty()) end_row();
  for (const auto& r : t.rows)
    if (r.size() != t.header.size()) throw std::runtime_error("csv: ragged row");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("csv: cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace tinylr::csv
