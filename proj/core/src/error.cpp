#include "ildm/error.hpp"

#include <json.hpp>

namespace ildm {

std::string_view to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Contract: return "contract";
    case ErrorCategory::Numeric: return "numeric";
  }
  return "unknown";
}

Error::Error(ErrorCategory category, std::string message, std::string key)
    : std::runtime_error(std::string(to_string(category)) + " error: " + message +
                         (key.empty() ? std::string() : " [" + key + "]")),
      category_(category),
      message_(std::move(message)),
      key_(std::move(key)) {}

std::string Error::envelope() const {
  nlohmann::json j;
  j["category"] = std::string(to_string(category_));
  j["message"] = message_;
  j["key"] = key_;
  return j.dump();
}

}  // namespace ildm
