#include "ildm/config.hpp"

#include <charconv>
#include <sstream>

#include "ildm/container.hpp"
#include "ildm/error.hpp"

namespace ildm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig(std::vector<ConfigKey> keys) : keys_(std::move(keys)) {
  for (const auto& k : keys_) {
    if (!values_.emplace(k.name, k.default_value).second) throw ConfigError("duplicate config key", k.name);
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  load_text(std::string(bytes.begin(), bytes.end()), path.string());
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'", origin);
    }
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'", key);
  it->second = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'", key);
  return it->second;
}

long long RunConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("'" + s + "' is not an integer", key);
  return v;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + s + "' is not a number", key);
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("'" + s + "' is not a boolean", key);
}

std::set<int> RunConfig::int_set(const std::string& key) const {
  std::set<int> out;
  std::istringstream in(str(key));
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    int v = 0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size()) throw ConfigError("'" + part + "' is not an integer", key);
    out.insert(v);
  }
  return out;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& k : keys_) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const { io::write_text_atomic(path, resolved()); }

}  // namespace ildm
