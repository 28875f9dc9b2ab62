#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ildm/sample.hpp"
#include "ildm/verify.hpp"

namespace ildm::eval {

struct ConsistencySample {
  int index = 0;
  std::string caption;
  double depth_rmse = 0.0;
  double angular_error_deg = 0.0;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population
};
Summary summarize(const std::vector<double>& values);

/// Captions of freshly sampled scene layouts, one per index.
std::vector<std::string> prompt_set(int n, std::uint64_t seed, int resolution);

/// Co-generates `n` (image, intrinsics) pairs in batches and scores each image
/// against its own intrinsics with the estimator. Batch k uses initial-noise
/// seed sample_seed(config.seed, k).
std::vector<ConsistencySample> evaluate_consistency(const model::Denoiser& model, const codec::Vae& image_vae,
                                                    const codec::Vae& intrinsic_vae,
                                                    const diffusion::NoiseSchedule& schedule,
                                                    const sample::SamplerConfig& config,
                                                    const verify::ConsistencyEstimator& estimator,
                                                    const std::vector<std::string>& prompts, int batch);

}  // namespace ildm::eval
