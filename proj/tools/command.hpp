#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ildm/config.hpp"
#include "ildm/xattn.hpp"

namespace ildm::cli {

struct Command {
  std::string name;
  std::string summary;
  std::vector<ConfigKey> keys;
  std::function<int(const RunConfig&)> run;
};

std::vector<Command> data_commands();
std::vector<Command> train_commands();
std::vector<Command> eval_commands();

// Shared helpers

/// Value of a key that must be set; throws ConfigError naming the key otherwise.
const std::string& required(const RunConfig& cfg, const std::string& key);
std::filesystem::path output_dir(const RunConfig& cfg);
void write_resolved(const RunConfig& cfg, const std::filesystem::path& dir);

/// Keys shared by every command that takes a weight schedule.
std::vector<ConfigKey> schedule_keys(const std::string& default_kind);
xattn::AttnWeightSchedule schedule_from(const RunConfig& cfg);

/// Keys describing the noise schedule.
std::vector<ConfigKey> noise_keys();

/// Ordered comma-separated integers (duplicates kept).
std::vector<int> int_list(const RunConfig& cfg, const std::string& key);

std::vector<ConfigKey> concat(std::vector<ConfigKey> a, const std::vector<ConfigKey>& b);

/// Progress goes to stderr so stdout stays machine-readable.
void progress(const std::string& line);

}  // namespace ildm::cli
