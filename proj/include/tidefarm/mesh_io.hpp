#pragma once
// ASCII mesh serialization. Format:
//   TFMESH 1
//   VERTICES n      followed by n lines "x y"
//   TRIANGLES m     followed by m lines "i j k region"
//   BOUNDARY b      followed by b lines "i j tagname"
// Indices are zero-based, # starts a comment, coordinates round-trip exactly.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tidefarm/mesh.hpp"

namespace tidefarm {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct LineReader {
  std::istringstream in;
  int line_no = 0;
  explicit LineReader(const std::string& text) : in(text) {}

  // Next non-empty line with comments stripped; false at end of input.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      tokens.clear();
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("line " + std::to_string(line_no) + ": " + what);
  }
};

inline double parse_double(const LineReader& r, const std::string& tok) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    r.fail("expected a number, got '" + tok + "'");
  }
}

inline long parse_int(const LineReader& r, const std::string& tok) {
  long v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    r.fail("expected an integer, got '" + tok + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline Mesh import_mesh(const std::string& text) {
  detail::LineReader r(text);
  std::vector<std::string> tok;

  if (!r.next(tok) || tok.size() != 2 || tok[0] != "TFMESH" || tok[1] != "1")
    r.fail("expected header 'TFMESH 1'");

  Mesh m;
  if (!r.next(tok) || tok.size() != 2 || tok[0] != "VERTICES") r.fail("expected 'VERTICES n'");
  long nv = detail::parse_int(r, tok[1]);
  if (nv < 0) r.fail("negative vertex count");
  m.vertices.reserve(nv);
  for (long i = 0; i < nv; ++i) {
    if (!r.next(tok) || tok.size() != 2) r.fail("expected vertex line 'x y'");
    m.vertices.push_back({detail::parse_double(r, tok[0]), detail::parse_double(r, tok[1])});
  }

  if (!r.next(tok) || tok.size() != 2 || tok[0] != "TRIANGLES") r.fail("expected 'TRIANGLES m'");
  long nt = detail::parse_int(r, tok[1]);
  if (nt < 0) r.fail("negative triangle count");
  m.triangles.reserve(nt);
  m.region.reserve(nt);
  for (long t = 0; t < nt; ++t) {
    if (!r.next(tok) || tok.size() != 4) r.fail("expected triangle line 'i j k region'");
    std::array<int, 3> tri;
    for (int k = 0; k < 3; ++k) {
      long v = detail::parse_int(r, tok[k]);
      if (v < 0 || v >= nv) r.fail("vertex index out of range");
      tri[k] = (int)v;
    }
    m.triangles.push_back(tri);
    m.region.push_back((int)detail::parse_int(r, tok[3]));
  }

  if (!r.next(tok) || tok.size() != 2 || tok[0] != "BOUNDARY") r.fail("expected 'BOUNDARY b'");
  long nb = detail::parse_int(r, tok[1]);
  if (nb < 0) r.fail("negative boundary edge count");
  m.boundary.reserve(nb);
  for (long e = 0; e < nb; ++e) {
    if (!r.next(tok) || tok.size() != 3) r.fail("expected boundary line 'i j tagname'");
    long a = detail::parse_int(r, tok[0]), b = detail::parse_int(r, tok[1]);
    if (a < 0 || a >= nv || b < 0 || b >= nv) r.fail("vertex index out of range");
    m.boundary.push_back({(int)a, (int)b, m.add_tag(tok[2])});
  }
  if (r.next(tok)) r.fail("unexpected trailing content");

  validate_mesh(m);
  return m;
}

inline std::string export_mesh(const Mesh& m) {
  std::string out = "TFMESH 1\n";
  out += "VERTICES " + std::to_string(m.vertices.size()) + "\n";
  for (const auto& v : m.vertices)
    out += detail::format_double(v.x) + " " + detail::format_double(v.y) + "\n";
  out += "TRIANGLES " + std::to_string(m.triangles.size()) + "\n";
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    out += std::to_string(tri[0]) + " " + std::to_string(tri[1]) + " " +
           std::to_string(tri[2]) + " " + std::to_string(m.region[t]) + "\n";
  }
  out += "BOUNDARY " + std::to_string(m.boundary.size()) + "\n";
  for (const auto& be : m.boundary)
    out += std::to_string(be.a) + " " + std::to_string(be.b) + " " + m.tag_names[be.tag] + "\n";
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace tidefarm
