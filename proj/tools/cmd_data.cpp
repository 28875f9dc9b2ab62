#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "command.hpp"
#include "ildm/codec.hpp"
#include "ildm/container.hpp"
#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"

namespace ildm::cli {

namespace {

int scene_gen(const RunConfig& cfg) {
  const int n = static_cast<int>(cfg.integer("n"));
  const int res = static_cast<int>(cfg.integer("res"));
  if (n < 1) throw ConfigError("n must be positive", "n");
  const auto dir = output_dir(cfg);
  const auto data = scene::generate_dataset(n, static_cast<std::uint64_t>(cfg.integer("seed")), res);
  scene::save_dataset(data, dir);
  write_resolved(cfg, dir);
  std::cout << "wrote " << n << " scenes at " << res << "x" << res << " to " << dir.string() << "\n";
  return 0;
}

/// Flattened latents, one vector per sample.
std::vector<std::vector<double>> rows(const Tensor& z) {
  const int n = z.dim(0);
  const std::size_t per = z.numel() / static_cast<std::size_t>(n);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    out[static_cast<std::size_t>(b)].assign(z.data() + b * per, z.data() + (b + 1) * per);
  }
  return out;
}

int train_vae(const RunConfig& cfg) {
  const std::string kind = cfg.str("kind");
  if (kind != "image" && kind != "intrinsic") throw ConfigError("kind must be image or intrinsic", "kind");
  const bool intrinsic = kind == "intrinsic";
  const auto data_dir = required(cfg, "data");
  const auto data = intrinsic ? scene::load_dataset(data_dir) : scene::load_images(data_dir);
  const Tensor& all = intrinsic ? data.intrinsics : data.images;
  const int n = all.dim(0);
  const int holdout = static_cast<int>(cfg.integer("holdout"));
  if (holdout < 1 || holdout >= n) throw ConfigError("holdout must lie in [1, n)", "holdout");

  codec::VaeConfig vc;
  vc.in_channels = intrinsic ? codec::kIntrinsicChannels : 3;
  vc.latent_channels = static_cast<int>(cfg.integer("latent-channels"));
  const auto widths = int_list(cfg, "widths");
  if (widths.size() != 3) throw ConfigError("widths needs three entries", "widths");
  vc.widths = {widths[0], widths[1], widths[2]};
  vc.resolution = data.resolution;
  vc.kl_weight = static_cast<float>(cfg.real("kl-weight"));

  codec::VaeTrainConfig tc;
  tc.steps = static_cast<int>(cfg.integer("steps"));
  tc.batch = static_cast<int>(cfg.integer("batch"));
  tc.lr = cfg.real("lr");
  tc.zero_mask_prob = cfg.real("zero-mask");
  tc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  tc.warmup = static_cast<int>(cfg.integer("warmup"));

  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);
  const Tensor train = all.slice0(0, n - holdout);
  const Tensor held = all.slice0(n - holdout, n);
  codec::Vae vae(vc, tc.seed);
  const auto log = codec::train_vae(vae, train, tc, intrinsic, [&](int step, double loss) {
    if (step % 100 == 0) progress("step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
  codec::calibrate_latent_scale(vae, train);
  vae.save(dir / "vae.ildm", intrinsic ? "intrinsic-vae" : "image-vae");

  std::ostringstream loss_csv;
  loss_csv << std::setprecision(9) << "step,loss,recon\n";
  for (std::size_t k = 0; k < log.loss.size(); ++k) loss_csv << k << "," << log.loss[k] << "," << log.recon[k] << "\n";
  io::write_text_atomic(dir / "loss.csv", loss_csv.str());

  const auto report = codec::reconstruction_report(vae, held, {false, false, false, false});
  std::ostringstream rep;
  rep << std::setprecision(9) << "channel,mse\n";
  for (std::size_t c = 0; c < report.channel_mse.size(); ++c) rep << c << "," << report.channel_mse[c] << "\n";
  rep << "mean," << report.mean_channel_mse << "\nworst," << report.worst_channel_mse << "\n";
  io::write_text_atomic(dir / "reconstruction.csv", rep.str());
  std::cout << "held-out mean channel mse " << report.mean_channel_mse << " (worst " << report.worst_channel_mse
            << ")\n";
  return 0;
}

int mmd_report(const RunConfig& cfg) {
  const auto data = scene::load_dataset(required(cfg, "data"));
  const auto image_vae = codec::Vae::load(required(cfg, "image-vae"), "image-vae");
  const auto intrinsic_vae = codec::Vae::load(required(cfg, "intrinsic-vae"), "intrinsic-vae");
  codec::require_compatible(image_vae, intrinsic_vae);
  const int n = std::min(static_cast<int>(cfg.integer("n")), data.size());
  if (n < 2) throw ConfigError("need at least two samples", "n");
  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);

  const Tensor stacks = data.intrinsics.slice0(0, n);
  const auto image = rows(image_vae.encode(data.images.slice0(0, n)));
  std::vector<std::pair<std::string, std::vector<std::vector<double>>>> sets;
  sets.emplace_back("intrinsic:all", rows(codec::encode_intrinsics(intrinsic_vae, stacks, {false, false, false, false})));
  for (int k = 0; k < codec::kIntrinsicCount; ++k) {
    std::array<bool, codec::kIntrinsicCount> mask{true, true, true, true};
    mask[static_cast<std::size_t>(k)] = false;
    sets.emplace_back(std::string("intrinsic:") + codec::kIntrinsicNames[static_cast<std::size_t>(k)],
                      rows(codec::encode_intrinsics(intrinsic_vae, stacks, mask)));
  }
  double bw = cfg.real("bandwidth");
  if (bw <= 0.0) bw = codec::median_distance(image, sets.front().second);

  std::ostringstream csv;
  csv << std::setprecision(9) << "set_a,set_b,n,bandwidth,mmd2\n";
  const int half = n / 2;
  const std::vector<std::vector<double>> first(image.begin(), image.begin() + half);
  const std::vector<std::vector<double>> second(image.begin() + half, image.begin() + 2 * half);
  csv << "image[0:n/2],image[n/2:n]," << half << "," << bw << "," << codec::latent_mmd(first, second, bw) << "\n";
  for (const auto& [name, z] : sets) {
    csv << "image," << name << "," << n << "," << bw << "," << codec::latent_mmd(image, z, bw) << "\n";
  }
  io::write_text_atomic(dir / "mmd.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

std::vector<Command> data_commands() {
  return {
      {"scene-gen",
       "render a synthetic scene dataset with intrinsic ground truth",
       {{"n", "512", "number of scenes"},
        {"seed", "0", "dataset seed"},
        {"res", "64", "image resolution"},
        {"out", "", "output directory"}},
       scene_gen},
      {"train-vae",
       "train the image or intrinsic autoencoder",
       {{"data", "", "dataset directory"},
        {"kind", "intrinsic", "image|intrinsic"},
        {"out", "", "output directory"},
        {"steps", "2000", "optimizer steps"},
        {"batch", "8", "batch size"},
        {"lr", "0.001", "peak learning rate"},
        {"warmup", "100", "linear warmup steps"},
        {"zero-mask", "0.1", "per-field zero-mask probability (intrinsic only)"},
        {"seed", "0", "initialization and sampling seed"},
        {"widths", "32,64,64", "channel widths per resolution level"},
        {"latent-channels", "4", "latent channels"},
        {"kl-weight", "0.000001", "KL regularizer weight"},
        {"holdout", "64", "trailing samples held out for the reconstruction report"}},
       train_vae},
      {"mmd-report",
       "MMD between image latents and intrinsic latents",
       {{"data", "", "dataset directory"},
        {"image-vae", "", "image autoencoder checkpoint"},
        {"intrinsic-vae", "", "intrinsic autoencoder checkpoint"},
        {"n", "256", "samples per set"},
        {"bandwidth", "0", "gaussian kernel width (0: median pairwise distance)"},
        {"out", "", "output directory"}},
       mmd_report},
  };
}

}  // namespace ildm::cli
