#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ildm {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Flat `key = value` configuration with a closed key set. Lines starting
/// with '#' are comments. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(std::vector<ConfigKey> keys);

  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value);

  bool known(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  /// Comma-separated integers; empty string is the empty set.
  std::set<int> int_set(const std::string& key) const;

  const std::vector<ConfigKey>& keys() const noexcept { return keys_; }
  /// Fully resolved config, one `key = value` per line in declaration order.
  std::string resolved() const;
  void write_resolved(const std::filesystem::path& path) const;

 private:
  std::vector<ConfigKey> keys_;
  std::map<std::string, std::string> values_;
};

}  // namespace ildm
