#include <iostream>
#include <sstream>

#include "command.hpp"
#include "ildm/error.hpp"

namespace ildm::cli {

const std::string& required(const RunConfig& cfg, const std::string& key) {
  const std::string& v = cfg.str(key);
  if (v.empty()) throw ConfigError("missing required key '" + key + "'", key);
  return v;
}

std::filesystem::path output_dir(const RunConfig& cfg) {
  const std::filesystem::path dir = required(cfg, "out");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + ec.message(), dir.string());
  return dir;
}

void write_resolved(const RunConfig& cfg, const std::filesystem::path& dir) {
  cfg.write_resolved(dir / "resolved_config.txt");
}

std::vector<ConfigKey> schedule_keys(const std::string& default_kind) {
  return {
      {"schedule", default_kind, "cross-domain weight schedule: drop|gauss|off|full"},
      {"tau", "", "schedule centre/threshold timestep in [0,1000] (drop 900, gauss 800)"},
      {"sigma", "100", "gaussian schedule width"},
      {"alpha", "1", "gaussian schedule peak"},
      {"layers", "2,3,4", "drop schedule attention blocks (1-based, comma separated)"},
  };
}

xattn::AttnWeightSchedule schedule_from(const RunConfig& cfg) {
  switch (xattn::parse_schedule_kind(cfg.str("schedule"))) {
    case xattn::ScheduleKind::Drop: {
      const double tau = cfg.str("tau").empty() ? 900.0 : cfg.real("tau");
      for (int l : cfg.int_set("layers")) {
        if (l < 1 || l > 5) throw ConfigError("attention block " + std::to_string(l) + " outside 1..5", "layers");
      }
      return xattn::AttnWeightSchedule::drop(cfg.int_set("layers"), tau);
    }
    case xattn::ScheduleKind::Gaussian: {
      const double tau = cfg.str("tau").empty() ? 800.0 : cfg.real("tau");
      return xattn::AttnWeightSchedule::gaussian(cfg.real("alpha"), tau, cfg.real("sigma"));
    }
    case xattn::ScheduleKind::Full: return xattn::AttnWeightSchedule::full();
    case xattn::ScheduleKind::Off: return xattn::AttnWeightSchedule::off();
  }
  throw ConfigError("unknown schedule", "schedule");
}

std::vector<ConfigKey> noise_keys() {
  return {
      {"timesteps", "1000", "diffusion steps T"},
      {"beta-start", "0.0001", "first beta of the linear schedule"},
      {"beta-end", "0.02", "last beta of the linear schedule"},
  };
}

std::vector<int> int_list(const RunConfig& cfg, const std::string& key) {
  std::vector<int> out;
  std::stringstream in(cfg.str(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not an integer", key);
    }
  }
  return out;
}

std::vector<ConfigKey> concat(std::vector<ConfigKey> a, const std::vector<ConfigKey>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void progress(const std::string& line) { std::cerr << line << "\n"; }

}  // namespace ildm::cli
