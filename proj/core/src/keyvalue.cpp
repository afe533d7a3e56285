#include "keyvalue.hpp"

#include <cstdio>
#include <fstream>

#include "slicefinder/error.hpp"

namespace slicefinder::detail {

std::string trim(const std::string &s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos)
      throw Error(ErrorCode::MalformedHeader,
                  path.string() + ":" + std::to_string(lineno) + ": expected 'key: value'");
    std::string key = trim(t.substr(0, colon));
    std::string value = trim(t.substr(colon + 1));
    if (!kv.emplace(key, value).second)
      throw Error(ErrorCode::MalformedHeader,
                  path.string() + ": repeated key '" + key + "'");
  }
  return kv;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace slicefinder::detail
