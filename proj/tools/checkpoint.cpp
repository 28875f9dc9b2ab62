#include "checkpoint.hpp"

#include <json.hpp>

#include "ildm/error.hpp"

namespace ildm::cli {

using json = nlohmann::json;

diffusion::NoiseSchedule NoiseSpec::build() const {
  return diffusion::build_linear_schedule(timesteps, beta_start, beta_end);
}

std::string NoiseSpec::to_json() const {
  return json{{"kind", "linear"}, {"timesteps", timesteps}, {"beta_start", beta_start}, {"beta_end", beta_end}}.dump();
}

NoiseSpec NoiseSpec::from_json(const std::string& text, const std::string& origin) {
  NoiseSpec s;
  try {
    const json j = json::parse(text);
    if (j.at("kind").get<std::string>() != "linear") throw IoError("unknown noise schedule kind", origin);
    s.timesteps = j.at("timesteps").get<int>();
    s.beta_start = j.at("beta_start").get<double>();
    s.beta_end = j.at("beta_end").get<double>();
  } catch (const json::exception& e) {
    throw IoError(std::string("bad noise schedule entry: ") + e.what(), origin);
  }
  return s;
}

NoiseSpec NoiseSpec::from_config(const RunConfig& cfg) {
  NoiseSpec s;
  s.timesteps = static_cast<int>(cfg.integer("timesteps"));
  s.beta_start = cfg.real("beta-start");
  s.beta_end = cfg.real("beta-end");
  s.build();  // validates
  return s;
}

void save_denoiser(const model::Denoiser& model, const NoiseSpec& noise, const std::string& train_schedule,
                   const std::filesystem::path& path) {
  io::TensorContainer c;
  model.save(c);
  c.put_text("noise_schedule", noise.to_json());
  if (!train_schedule.empty()) c.put_text("train_schedule", train_schedule);
  c.save(path);
}

LoadedDenoiser load_denoiser(const std::filesystem::path& path) {
  const auto c = io::TensorContainer::load(path);
  if (!c.contains("noise_schedule")) throw IoError("checkpoint has no noise schedule entry", path.string());
  LoadedDenoiser out{model::Denoiser::load(c), NoiseSpec::from_json(c.text("noise_schedule"), path.string()), {}};
  if (c.contains("train_schedule")) out.train_schedule = c.text("train_schedule");
  return out;
}

}  // namespace ildm::cli
