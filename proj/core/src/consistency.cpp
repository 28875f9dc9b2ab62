#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>

#include "ildm/container.hpp"
#include "ildm/error.hpp"
#include "ildm/optim.hpp"
#include "ildm/verify.hpp"

namespace ildm::verify {

using json = nlohmann::json;
using ag::Var;

double depth_rmse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ContractError("depth maps differ in shape", "depth");
  if (a.numel() == 0) throw ContractError("empty depth map", "depth");
  double s = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    const double d = static_cast<double>(a[k]) - b[k];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.numel()));
}

double mean_angular_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 3 || a.dim(0) != 3) {
    throw ContractError("normal fields must both be [3,H,W]", "normal");
  }
  const std::size_t plane = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double x = a[c * plane + p], y = b[c * plane + p];
      na += x * x;
      nb += y * y;
      dot += x * y;
    }
    if (na == 0.0 || nb == 0.0) continue;
    const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    total += std::acos(cosine) * 180.0 / std::numbers::pi;
    ++counted;
  }
  if (counted == 0) throw DegenerateInputError("no valid normals to compare", "normal");
  return total / static_cast<double>(counted);
}

ConsistencyEstimator::ConsistencyEstimator(const EstimatorConfig& c, std::uint64_t seed) : config_(c) {
  if (c.resolution % 4 != 0) throw ConfigError("resolution must be divisible by 4", "resolution");
  Rng rng(seed);
  const auto [w0, w1, w2] = c.widths;
  in_ = nn::Conv2d(store_, "in", 3, w0, 3, 1, rng);
  res0_ = nn::ResBlock(store_, "res0", w0, w0, 0, c.groups, rng);
  down1_ = nn::Conv2d(store_, "down1", w0, w1, 3, 2, rng);
  res1_ = nn::ResBlock(store_, "res1", w1, w1, 0, c.groups, rng);
  down2_ = nn::Conv2d(store_, "down2", w1, w2, 3, 2, rng);
  res2_ = nn::ResBlock(store_, "res2", w2, w2, 0, c.groups, rng);
  up2_ = nn::Conv2d(store_, "up2", w2, w1, 3, 1, rng);
  dec1_ = nn::ResBlock(store_, "dec1", 2 * w1, w1, 0, c.groups, rng);
  up1_ = nn::Conv2d(store_, "up1", w1, w0, 3, 1, rng);
  dec0_ = nn::ResBlock(store_, "dec0", 2 * w0, w0, 0, c.groups, rng);
  norm_out_ = nn::GroupNorm(store_, "norm_out", w0, c.groups);
  out_ = nn::Conv2d(store_, "out", w0, 4, 3, 1, rng, 0.1f);
}

Var ConsistencyEstimator::forward(const Var& images) const {
  const int r = config_.resolution;
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) != r || images.dim(3) != r) {
    throw ContractError("estimator input " + shape_string(images.shape()) + " is not [B,3," + std::to_string(r) +
                            "," + std::to_string(r) + "]",
                        "image");
  }
  const Var s0 = res0_(in_(images));
  const Var s1 = res1_(down1_(s0));
  Var h = res2_(down2_(s1));
  h = dec1_(ops::concat_channels(up2_(ops::upsample_nearest2x(h)), s1));
  h = dec0_(ops::concat_channels(up1_(ops::upsample_nearest2x(h)), s0));
  return out_(ops::silu(norm_out_(h)));
}

ConsistencyEstimator::Estimate ConsistencyEstimator::estimate(const Tensor& image) const {
  ag::NoGradGuard guard;
  Tensor x = image;
  if (x.rank() == 3) x = std::move(x).reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.dim(0) != 1) throw ContractError("estimate takes one image", "image");
  const Tensor y = forward(Var(x)).value();
  const int h = y.dim(2), w = y.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Estimate e{Tensor({h, w}), Tensor({3, h, w})};
  for (std::size_t p = 0; p < plane; ++p) {
    e.depth[p] = std::clamp(y[p], -1.0f, 1.0f);
    double n2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) n2 += static_cast<double>(y[(1 + c) * plane + p]) * y[(1 + c) * plane + p];
    const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
    for (std::size_t c = 0; c < 3; ++c) e.normal[c * plane + p] = static_cast<float>(y[(1 + c) * plane + p] * inv);
  }
  return e;
}

namespace {

/// [4,H,W] regression target: normalized depth then the unit normal.
void write_target(const scene::Dataset& data, int index, float* out) {
  const int r = data.resolution;
  const std::size_t plane = static_cast<std::size_t>(r) * r;
  std::copy_n(data.depth_norm.data() + static_cast<std::size_t>(index) * plane, plane, out);
  const float* normal = data.intrinsics.data() + (static_cast<std::size_t>(index) * codec::kIntrinsicChannels + 3) * plane;
  std::copy_n(normal, 3 * plane, out + plane);
}

int validation_start(int n, double fraction) {
  const int held = std::clamp(static_cast<int>(std::lround(n * fraction)), n > 1 ? 1 : 0, n - 1);
  return n - held;
}

}  // namespace

std::vector<double> ConsistencyEstimator::train(const scene::Dataset& data, const EstimatorTrainConfig& cfg) {
  if (data.intrinsics.empty() || data.depth_norm.empty()) {
    throw ContractError("estimator training needs the intrinsic shard", "data");
  }
  if (data.resolution != config_.resolution) throw ContractError("dataset resolution differs from the estimator", "resolution");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("steps and batch must be positive", "steps");
  if (cfg.validation_fraction <= 0.0 || cfg.validation_fraction >= 1.0) {
    throw ConfigError("validation_fraction must lie in (0,1)", "validation_fraction");
  }
  const int n = data.size();
  if (n < 2) throw ContractError("estimator training needs at least two samples", "data");
  const int split = validation_start(n, cfg.validation_fraction);
  const int r = config_.resolution;
  const std::size_t image_size = 3 * static_cast<std::size_t>(r) * r;
  const std::size_t target_size = 4 * static_cast<std::size_t>(r) * r;

  Rng rng(cfg.seed);
  nn::AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = 0.0;
  nn::AdamW opt(store_.trainable(), ocfg);
  std::uniform_int_distribution<int> pick(0, split - 1);
  std::vector<double> losses;
  for (int step = 0; step < cfg.steps; ++step) {
    const double frac = static_cast<double>(step) / std::max(1, cfg.steps);
    opt.set_lr(cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac))));
    Tensor x({cfg.batch, 3, r, r}), y({cfg.batch, 4, r, r});
    for (int b = 0; b < cfg.batch; ++b) {
      const int idx = pick(rng);
      std::copy_n(data.images.data() + static_cast<std::size_t>(idx) * image_size, image_size,
                  x.data() + static_cast<std::size_t>(b) * image_size);
      write_target(data, idx, y.data() + static_cast<std::size_t>(b) * target_size);
    }
    opt.zero_grad();
    Var loss = ops::mse(forward(Var(x)), y);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) throw NumericError("non-finite estimator loss at step " + std::to_string(step), "loss");
    ag::backward(loss);
    nn::clip_grad_norm(store_.trainable(), 1.0);
    opt.step();
    losses.push_back(lv);
  }
  const auto [rmse, angle] = evaluate(data, split, n);
  validation_depth_rmse_ = rmse;
  validation_angular_error_ = angle;
  return losses;
}

std::pair<double, double> ConsistencyEstimator::evaluate(const scene::Dataset& data, int begin, int end) const {
  if (begin < 0 || end > data.size() || begin >= end) throw ContractError("empty evaluation range", "range");
  const int r = data.resolution;
  const std::size_t plane = static_cast<std::size_t>(r) * r;
  double rmse = 0.0, angle = 0.0;
  for (int k = begin; k < end; ++k) {
    const Estimate e = estimate(data.images.index0(k));
    Tensor target({4, r, r});
    write_target(data, k, target.data());
    const Tensor depth({r, r}, std::vector<float>(target.data(), target.data() + plane));
    const Tensor normal({3, r, r}, std::vector<float>(target.data() + plane, target.data() + 4 * plane));
    rmse += depth_rmse(e.depth, depth);
    angle += mean_angular_error(e.normal, normal);
  }
  const double count = end - begin;
  return {rmse / count, angle / count};
}

void ConsistencyEstimator::save(const std::filesystem::path& path) const {
  io::TensorContainer c;
  json meta;
  meta["kind"] = "estimator";
  meta["config"] = {{"widths", config_.widths}, {"groups", config_.groups}, {"resolution", config_.resolution}};
  meta["validation_depth_rmse"] = validation_depth_rmse_;
  meta["validation_angular_error"] = validation_angular_error_;
  c.put_text("__meta__", meta.dump());
  for (const auto& [name, v] : store_.entries()) c.put("param/" + name, v.value());
  c.save(path);
}

ConsistencyEstimator ConsistencyEstimator::load(const std::filesystem::path& path) {
  const auto c = io::TensorContainer::load(path);
  EstimatorConfig cfg;
  double rmse = -1.0, angle = -1.0;
  try {
    const json meta = json::parse(c.text("__meta__"));
    if (meta.value("kind", "") != "estimator") {
      throw IoError("checkpoint kind '" + meta.value("kind", "") + "' is not 'estimator'", path.string());
    }
    cfg.widths = meta.at("config").at("widths").get<std::array<int, 3>>();
    cfg.groups = meta.at("config").at("groups").get<int>();
    cfg.resolution = meta.at("config").at("resolution").get<int>();
    rmse = meta.at("validation_depth_rmse").get<double>();
    angle = meta.at("validation_angular_error").get<double>();
  } catch (const json::exception& e) {
    throw IoError(std::string("bad estimator header: ") + e.what(), path.string());
  }
  ConsistencyEstimator est(cfg, 0);
  std::map<std::string, Tensor> values;
  for (const auto& e : c.entries()) {
    if (e.name.rfind("param/", 0) == 0) values.emplace(e.name.substr(6), c.tensor(e.name));
  }
  est.store_.load(values);
  est.validation_depth_rmse_ = rmse;
  est.validation_angular_error_ = angle;
  return est;
}

ConsistencyMetrics consistency_metrics(const Tensor& image, const codec::IntrinsicStack& stack,
                                       const ConsistencyEstimator& estimator) {
  if (!estimator.trained()) {
    throw ContractError("estimator is untrained; run `train-estimator` first", "estimator");
  }
  const auto e = estimator.estimate(image);
  ConsistencyMetrics m;
  m.depth_rmse = depth_rmse(e.depth, codec::decode_depth(stack.depth));
  m.angular_error_deg = mean_angular_error(e.normal, codec::decode_normals(stack.normal));
  return m;
}

}  // namespace ildm::verify
