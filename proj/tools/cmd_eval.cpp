#include <iomanip>
#include <iostream>
#include <sstream>

#include "checkpoint.hpp"
#include "command.hpp"
#include "ildm/error.hpp"
#include "ildm/checksum.hpp"
#include "ildm/evaluation.hpp"
#include "ildm/sample.hpp"
#include "ildm/verify.hpp"

namespace ildm::cli {

namespace {

std::vector<ConfigKey> sampler_keys(const std::string& default_schedule) {
  return concat({{"checkpoint", "", "joint checkpoint from train-ildm"},
                 {"image-vae", "", "image autoencoder checkpoint"},
                 {"intrinsic-vae", "", "intrinsic autoencoder checkpoint"},
                 {"seed", "0", "initial noise seed"},
                 {"steps", "25", "DDIM steps"},
                 {"cfg", "7.5", "classifier-free guidance scale"},
                 {"cfg-intrinsic", "true", "also guide the intrinsic branch"},
                 {"early-stop", "auto", "intrinsic early stop timestep in [0,1000]: auto|none|<t>"},
                 {"out", "", "output directory"}},
                schedule_keys(default_schedule));
}

sample::SamplerConfig sampler_config(const RunConfig& cfg) {
  sample::SamplerConfig sc;
  sc.steps = static_cast<int>(cfg.integer("steps"));
  sc.cfg_scale = cfg.real("cfg");
  sc.cfg_intrinsic = cfg.flag("cfg-intrinsic");
  sc.schedule = schedule_from(cfg);
  sc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  const std::string stop = cfg.str("early-stop");
  if (stop == "auto") {
    sc.intrinsic_early_stop = sample::default_early_stop(sc.schedule.kind());
  } else if (stop != "none") {
    sc.intrinsic_early_stop = cfg.real("early-stop");
  }
  return sc;
}

struct Models {
  LoadedDenoiser denoiser;
  codec::Vae image_vae;
  codec::Vae intrinsic_vae;
};

Models load_models(const RunConfig& cfg) {
  auto denoiser = load_denoiser(required(cfg, "checkpoint"));
  if (!denoiser.model.has_adapters()) {
    throw ConfigError("checkpoint has no intrinsic adapters; pass a train-ildm checkpoint", "checkpoint");
  }
  auto image_vae = codec::Vae::load(required(cfg, "image-vae"), "image-vae");
  auto intrinsic_vae = codec::Vae::load(required(cfg, "intrinsic-vae"), "intrinsic-vae");
  codec::require_compatible(image_vae, intrinsic_vae);
  return {std::move(denoiser), std::move(image_vae), std::move(intrinsic_vae)};
}

std::vector<std::string> split_prompts(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

int sample_cmd(const RunConfig& cfg) {
  const auto prompts = split_prompts(cfg.str("prompt"));
  if (prompts.empty()) throw ConfigError("no prompt given", "prompt");
  const auto sc = sampler_config(cfg);
  auto m = load_models(cfg);
  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);
  for (const auto& p : sample::sample_grid(m.denoiser.model, m.image_vae, m.intrinsic_vae, m.denoiser.noise.build(), sc,
                                           prompts, dir)) {
    std::cout << p.string() << " " << file_checksum(p) << "\n";
  }
  return 0;
}

int eval_consistency(const RunConfig& cfg) {
  const int n = static_cast<int>(cfg.integer("n"));
  if (n < 1) throw ConfigError("n must be positive", "n");
  const auto sc = sampler_config(cfg);
  auto m = load_models(cfg);
  const auto estimator = verify::ConsistencyEstimator::load(required(cfg, "estimator"));
  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);
  const auto prompts = eval::prompt_set(n, static_cast<std::uint64_t>(cfg.integer("prompt-seed")),
                                        m.image_vae.config().resolution);
  const auto rows = eval::evaluate_consistency(m.denoiser.model, m.image_vae, m.intrinsic_vae, m.denoiser.noise.build(),
                                               sc, estimator, prompts, static_cast<int>(cfg.integer("batch")));
  std::ostringstream csv;
  csv << std::setprecision(9) << "index,caption,depth_rmse,angular_error_deg\n";
  std::vector<double> depth, angle;
  for (const auto& r : rows) {
    csv << r.index << ",\"" << r.caption << "\"," << r.depth_rmse << "," << r.angular_error_deg << "\n";
    depth.push_back(r.depth_rmse);
    angle.push_back(r.angular_error_deg);
  }
  io::write_text_atomic(dir / "consistency.csv", csv.str());
  const auto d = eval::summarize(depth), a = eval::summarize(angle);
  std::ostringstream agg;
  agg << std::setprecision(9) << "metric,mean,std\n"
      << "depth_rmse," << d.mean << "," << d.stddev << "\n"
      << "angular_error_deg," << a.mean << "," << a.stddev << "\n"
      << "estimator_validation_depth_rmse," << estimator.validation_depth_rmse() << ",\n"
      << "estimator_validation_angular_error_deg," << estimator.validation_angular_error() << ",\n";
  io::write_text_atomic(dir / "summary.csv", agg.str());
  std::cout << "schedule " << sc.schedule.describe() << "\n" << agg.str();
  return 0;
}

int verify_pgm(const RunConfig& cfg) {
  const int instances = static_cast<int>(cfg.integer("instances"));
  const int max_card = static_cast<int>(cfg.integer("max-card"));
  const double tol = cfg.real("tol");
  const auto r = verify::sweep(instances, max_card, static_cast<std::uint64_t>(cfg.integer("seed")), tol);
  std::ostringstream os;
  os << std::setprecision(6) << "instances " << r.instances << "\n"
     << "events " << r.counts.events << " skipped " << r.counts.skipped << " divergent " << r.counts.divergent << "\n"
     << "equivalence max_discrepancy " << r.max_equivalence << " violations " << r.equivalence_violations << "\n"
     << "inequality min_slack " << r.min_inequality_slack << " min_slack_averaged "
     << r.min_inequality_slack_averaged << " violations " << r.inequality_violations << "\n"
     << "chain min_slack " << r.min_chain_slack << " violations " << r.chain_violations << "\n"
     << "result " << (r.passed(tol) ? "PASS" : "FAIL") << "\n";
  if (!cfg.str("out").empty()) {
    const auto dir = output_dir(cfg);
    write_resolved(cfg, dir);
    io::write_text_atomic(dir / "report.txt", os.str());
  }
  std::cout << os.str();
  if (!r.passed(tol)) throw NumericError("identity violated beyond tolerance", "tol");
  return 0;
}

int bench_attn(const RunConfig& cfg) {
  const std::string which = cfg.str("attn-path");
  if (which != "both") xattn::parse_attn_path(which);
  const auto r = xattn::bench_attention(static_cast<int>(cfg.integer("tokens")), static_cast<int>(cfg.integer("width")),
                                        cfg.real("w"), static_cast<int>(cfg.integer("reps")),
                                        static_cast<unsigned long long>(cfg.integer("seed")));
  std::ostringstream os;
  os << std::setprecision(6) << "path,tokens,width,w,reps,median_ns,p95_ns,tokens_per_sec,max_abs_diff\n";
  auto row = [&](const char* name, const xattn::LatencyStats& s) {
    os << name << "," << r.tokens << "," << r.width << "," << r.w << "," << r.reps << "," << s.median_ns << ","
       << s.p95_ns << "," << s.tokens_per_sec << "," << r.max_abs_diff << "\n";
  };
  if (which != "fused") row("explicit", r.explicit_path);
  if (which != "explicit") row("fused", r.fused_path);
  if (!cfg.str("out").empty()) {
    const auto dir = output_dir(cfg);
    write_resolved(cfg, dir);
    io::write_text_atomic(dir / "bench.csv", os.str());
  }
  std::cout << os.str();
  return 0;
}

}  // namespace

std::vector<Command> eval_commands() {
  return {
      {"sample",
       "co-generate images and intrinsics from caption prompts",
       concat({{"prompt", "a red sphere", "captions separated by ';'"}}, sampler_keys("gauss")),
       sample_cmd},
      {"eval-consistency",
       "score co-generated images against their intrinsics with the estimator",
       concat({{"estimator", "", "estimator checkpoint from train-estimator"},
               {"n", "64", "number of samples"},
               {"batch", "16", "samples per sampler batch"},
               {"prompt-seed", "1000", "seed of the evaluation captions"}},
              sampler_keys("full")),
       eval_consistency},
      {"verify-pgm",
       "exact enumeration check of the information identities on random discrete models",
       {{"instances", "1000", "random models"},
        {"max-card", "4", "largest variable cardinality"},
        {"seed", "0", "seed"},
        {"tol", "1e-10", "numerical tolerance"},
        {"out", "", "optional output directory for report.txt"}},
       verify_pgm},
      {"bench-attn",
       "latency of the explicit-bias and fused-mask attention paths",
       {{"tokens", "256", "tokens per domain"},
        {"width", "64", "feature width"},
        {"w", "0.5", "cross-domain weight"},
        {"reps", "50", "timed repetitions"},
        {"seed", "0", "seed"},
        {"attn-path", "both", "explicit|fused|both"},
        {"out", "", "optional output directory for bench.csv"}},
       bench_attn},
  };
}

}  // namespace ildm::cli
