#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>
#include "pica/error.hpp"
#include "pica/rational.hpp"

namespace pica {

// Insertion-ordered JSON keeps every file and report byte-stable.
using Json = nlohmann::ordered_json;

inline Json rational_to_json(const Rational& r) { return r.to_string(); }

inline Rational rational_from_json(const Json& j) {
  if (j.is_string()) return Rational::parse(j.get<std::string>());
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  if (j.is_number_float()) return Rational::from_double(j.get<double>());
  fail(ErrorKind::Parse, "expected a number, got " + j.dump());
}

// Non-finite doubles have no JSON spelling; they are written as null.
inline Json real_to_json(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline Json optional_real_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return real_to_json(*v);
}

inline std::optional<double> optional_real_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

template <typename T>
T json_get(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorKind::Parse, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T json_get_or(const Json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<T>();
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Parse, path + ": " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes to a sibling temp file and renames, so readers never observe a
// half-written file.
inline void write_text_file(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp);
    out << contents;
    if (!out) fail(ErrorKind::Io, "short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorKind::Io, "cannot replace " + path);
}

inline void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace pica
