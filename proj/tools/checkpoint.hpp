#pragma once

#include <filesystem>
#include <string>

#include "ildm/config.hpp"
#include "ildm/container.hpp"
#include "ildm/denoiser.hpp"
#include "ildm/schedule.hpp"

namespace ildm::cli {

/// Linear noise schedule described by the `timesteps`, `beta-start`, `beta-end` keys.
struct NoiseSpec {
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  diffusion::NoiseSchedule build() const;
  std::string to_json() const;
  static NoiseSpec from_json(const std::string& text, const std::string& origin);
  static NoiseSpec from_config(const RunConfig& cfg);
};

struct LoadedDenoiser {
  model::Denoiser model;
  NoiseSpec noise;
  std::string train_schedule;  // empty for base checkpoints
};

/// Denoiser weights plus the noise schedule (and the train-time weight schedule, if any).
void save_denoiser(const model::Denoiser& model, const NoiseSpec& noise, const std::string& train_schedule,
                   const std::filesystem::path& path);
LoadedDenoiser load_denoiser(const std::filesystem::path& path);

}  // namespace ildm::cli
