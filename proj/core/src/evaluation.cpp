#include "ildm/evaluation.hpp"

#include <cmath>

#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"

namespace ildm::eval {

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("nothing to summarize", "values");
  Summary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.stddev += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(values.size()));
  return s;
}

std::vector<std::string> prompt_set(int n, std::uint64_t seed, int resolution) {
  std::vector<std::string> out;
  for (int k = 0; k < n; ++k) out.push_back(scene::caption_for(scene::sample_spec(scene::sample_seed(seed, k), resolution)));
  return out;
}

std::vector<ConsistencySample> evaluate_consistency(const model::Denoiser& model, const codec::Vae& image_vae,
                                                    const codec::Vae& intrinsic_vae,
                                                    const diffusion::NoiseSchedule& schedule,
                                                    const sample::SamplerConfig& config,
                                                    const verify::ConsistencyEstimator& estimator,
                                                    const std::vector<std::string>& prompts, int batch) {
  if (batch < 1) throw ConfigError("batch must be >= 1", "batch");
  if (!estimator.trained()) throw ContractError("estimator is untrained; run `train-estimator` first", "estimator");
  std::vector<ConsistencySample> out;
  const int n = static_cast<int>(prompts.size());
  for (int begin = 0, chunk = 0; begin < n; begin += batch, ++chunk) {
    const int end = std::min(n, begin + batch);
    model::TokenBatch conds;
    for (int k = begin; k < end; ++k) conds.push_back(scene::tokenize(prompts[static_cast<std::size_t>(k)]));
    sample::SamplerConfig sc = config;
    sc.seed = scene::sample_seed(config.seed, chunk);
    const auto r = sample::sample_joint(model, image_vae, intrinsic_vae, schedule, sc, conds);
    for (int k = begin; k < end; ++k) {
      const auto m = verify::consistency_metrics(r.images.index0(k - begin),
                                                 r.intrinsics[static_cast<std::size_t>(k - begin)], estimator);
      out.push_back({k, prompts[static_cast<std::size_t>(k)], m.depth_rmse, m.angular_error_deg});
    }
  }
  return out;
}

}  // namespace ildm::eval
