#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>

#include "ildm/codec.hpp"
#include "ildm/error.hpp"
#include "ildm/optim.hpp"

namespace ildm::codec {

using json = nlohmann::json;

std::string VaeConfig::to_json() const {
  json j;
  j["in_channels"] = in_channels;
  j["latent_channels"] = latent_channels;
  j["widths"] = widths;
  j["groups"] = groups;
  j["resolution"] = resolution;
  j["kl_weight"] = kl_weight;
  return j.dump();
}

VaeConfig VaeConfig::from_json(const std::string& text) {
  VaeConfig c;
  try {
    const json j = json::parse(text);
    c.in_channels = j.at("in_channels").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.widths = j.at("widths").get<std::array<int, 3>>();
    c.groups = j.at("groups").get<int>();
    c.resolution = j.at("resolution").get<int>();
    c.kl_weight = j.at("kl_weight").get<float>();
  } catch (const json::exception& e) {
    throw IoError(std::string("bad autoencoder header: ") + e.what(), "__meta__");
  }
  return c;
}

Vae::Vae(const VaeConfig& c, std::uint64_t seed) : config_(c) {
  if (c.resolution % 4 != 0) throw ConfigError("resolution must be divisible by 4", "resolution");
  Rng rng(seed);
  const auto [w0, w1, w2] = c.widths;
  enc_in_ = nn::Conv2d(store_, "enc.in", c.in_channels, w0, 3, 1, rng);
  enc_res0_ = nn::ResBlock(store_, "enc.res0", w0, w0, 0, c.groups, rng);
  enc_down1_ = nn::Conv2d(store_, "enc.down1", w0, w1, 3, 2, rng);
  enc_res1_ = nn::ResBlock(store_, "enc.res1", w1, w1, 0, c.groups, rng);
  enc_down2_ = nn::Conv2d(store_, "enc.down2", w1, w2, 3, 2, rng);
  enc_res2_ = nn::ResBlock(store_, "enc.res2", w2, w2, 0, c.groups, rng);
  enc_norm_ = nn::GroupNorm(store_, "enc.norm", w2, c.groups);
  enc_out_ = nn::Conv2d(store_, "enc.out", w2, 2 * c.latent_channels, 3, 1, rng);

  dec_in_ = nn::Conv2d(store_, "dec.in", c.latent_channels, w2, 3, 1, rng);
  dec_res2_ = nn::ResBlock(store_, "dec.res2", w2, w2, 0, c.groups, rng);
  dec_up2_ = nn::Conv2d(store_, "dec.up2", w2, w1, 3, 1, rng);
  dec_res1_ = nn::ResBlock(store_, "dec.res1", w1, w1, 0, c.groups, rng);
  dec_up1_ = nn::Conv2d(store_, "dec.up1", w1, w0, 3, 1, rng);
  dec_res0_ = nn::ResBlock(store_, "dec.res0", w0, w0, 0, c.groups, rng);
  dec_norm_ = nn::GroupNorm(store_, "dec.norm", w0, c.groups);
  dec_out_ = nn::Conv2d(store_, "dec.out", w0, c.in_channels, 3, 1, rng);
}

Shape Vae::latent_shape() const { return {config_.latent_channels, config_.latent_size(), config_.latent_size()}; }

Vae::Posterior Vae::encode_posterior(const Var& x) const {
  const Shape expect{x.value().rank() == 4 ? x.dim(0) : -1, config_.in_channels, config_.resolution, config_.resolution};
  if (x.shape() != expect) {
    throw ContractError("autoencoder input " + shape_string(x.shape()) + " does not match [B," +
                            std::to_string(config_.in_channels) + "," + std::to_string(config_.resolution) + "," +
                            std::to_string(config_.resolution) + "]",
                        "input");
  }
  Var h = enc_res0_(enc_in_(x));
  h = enc_res1_(enc_down1_(h));
  h = enc_res2_(enc_down2_(h));
  h = enc_out_(ops::silu(enc_norm_(h)));
  const int cz = config_.latent_channels;
  Posterior p;
  p.mean = ops::slice_channels(h, 0, cz);
  p.logvar = ops::slice_channels(h, cz, 2 * cz);
  p.logvar = ops::clamp(p.logvar, -30.0f, 20.0f);
  return p;
}

Var Vae::decode_raw(const Var& z) const {
  const Shape expect{z.value().rank() == 4 ? z.dim(0) : -1, config_.latent_channels, config_.latent_size(),
                     config_.latent_size()};
  if (z.shape() != expect) {
    throw ContractError("latent " + shape_string(z.shape()) + " does not match the autoencoder latent shape", "latent");
  }
  Var h = dec_res2_(dec_in_(z));
  h = dec_res1_(dec_up2_(ops::upsample_nearest2x(h)));
  h = dec_res0_(dec_up1_(ops::upsample_nearest2x(h)));
  return dec_out_(ops::silu(dec_norm_(h)));
}

Tensor Vae::encode(const Tensor& x) const {
  ag::NoGradGuard guard;
  const int n = x.dim(0);
  std::vector<Tensor> parts;
  constexpr int kChunk = 16;
  for (int b = 0; b < n; b += kChunk) {
    const Tensor chunk = x.slice0(b, std::min(n, b + kChunk));
    parts.push_back(encode_posterior(Var(chunk)).mean.value() * latent_scale_);
  }
  if (parts.size() == 1) return parts[0];
  std::vector<float> all;
  for (const auto& p : parts) all.insert(all.end(), p.storage().begin(), p.storage().end());
  Shape s = parts[0].shape();
  s[0] = n;
  return Tensor(s, std::move(all));
}

Tensor Vae::decode(const Tensor& z) const {
  ag::NoGradGuard guard;
  const int n = z.dim(0);
  std::vector<float> all;
  constexpr int kChunk = 16;
  for (int b = 0; b < n; b += kChunk) {
    const Tensor chunk = z.slice0(b, std::min(n, b + kChunk)) * (1.0f / latent_scale_);
    const Tensor y = decode_raw(Var(chunk)).value();
    all.insert(all.end(), y.storage().begin(), y.storage().end());
  }
  for (float& v : all) v = std::clamp(v, -1.0f, 1.0f);
  return Tensor({n, config_.in_channels, config_.resolution, config_.resolution}, std::move(all));
}

void Vae::save(const std::filesystem::path& path, const std::string& kind) const {
  io::TensorContainer c;
  json meta;
  meta["kind"] = kind;
  meta["config"] = json::parse(config_.to_json());
  meta["latent_scale"] = latent_scale_;
  c.put_text("__meta__", meta.dump());
  for (const auto& [name, v] : store_.entries()) c.put("param/" + name, v.value());
  c.save(path);
}

Vae Vae::load(const std::filesystem::path& path, const std::string& kind) {
  const auto c = io::TensorContainer::load(path);
  json meta;
  try {
    meta = json::parse(c.text("__meta__"));
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what(), path.string());
  }
  if (meta.value("kind", "") != kind) {
    throw IoError("checkpoint kind '" + meta.value("kind", "") + "' is not '" + kind + "'", path.string());
  }
  Vae v(VaeConfig::from_json(meta.at("config").dump()), 0);
  v.latent_scale_ = meta.at("latent_scale").get<float>();
  std::map<std::string, Tensor> values;
  for (const auto& e : c.entries()) {
    if (e.name.rfind("param/", 0) == 0) values.emplace(e.name.substr(6), c.tensor(e.name));
  }
  v.store_.load(values);
  return v;
}

Tensor apply_intrinsic_mask(const Tensor& stacks, const std::vector<std::array<bool, kIntrinsicCount>>& mask) {
  if (stacks.rank() != 4 || stacks.dim(1) != kIntrinsicChannels) {
    throw ContractError("intrinsic batch must be [B,12,H,W], got " + shape_string(stacks.shape()), "intrinsics");
  }
  if (mask.size() != static_cast<std::size_t>(stacks.dim(0))) throw ContractError("one mask per sample", "mask");
  Tensor out = stacks;
  const std::size_t field = 3 * static_cast<std::size_t>(stacks.dim(2)) * stacks.dim(3);
  for (std::size_t b = 0; b < mask.size(); ++b) {
    for (int k = 0; k < kIntrinsicCount; ++k) {
      if (!mask[b][static_cast<std::size_t>(k)]) continue;
      auto first = out.storage().begin() + static_cast<std::ptrdiff_t>((b * kIntrinsicCount + k) * field);
      std::fill(first, first + static_cast<std::ptrdiff_t>(field), 0.0f);
    }
  }
  return out;
}

Tensor intrinsic_loss_weights(const std::vector<std::array<bool, kIntrinsicCount>>& mask) {
  Tensor w({static_cast<int>(mask.size()), kIntrinsicChannels}, 1.0f);
  for (std::size_t b = 0; b < mask.size(); ++b) {
    for (int c = 0; c < kIntrinsicChannels; ++c) {
      if (mask[b][static_cast<std::size_t>(c / 3)]) w[b * kIntrinsicChannels + static_cast<std::size_t>(c)] = 0.0f;
    }
  }
  return w;
}

Tensor encode_intrinsics(const Vae& vae, const Tensor& stacks, const std::array<bool, kIntrinsicCount>& mask) {
  std::vector<std::array<bool, kIntrinsicCount>> masks(static_cast<std::size_t>(stacks.dim(0)), mask);
  return vae.encode(apply_intrinsic_mask(stacks, masks));
}

IntrinsicStack decode_intrinsics(const Vae& vae, const Tensor& latent) {
  if (vae.config().in_channels != kIntrinsicChannels) throw ContractError("not an intrinsic autoencoder", "vae");
  Tensor z = latent;
  if (z.rank() == 3) {
    Shape s = z.shape();
    s.insert(s.begin(), 1);
    z = std::move(z).reshaped(s);
  }
  if (z.dim(0) != 1) throw ContractError("decode_intrinsics takes one latent", "latent");
  return IntrinsicStack::from_channels(vae.decode(z).index0(0));
}

void require_compatible(const Vae& image_vae, const Vae& intrinsic_vae) {
  if (image_vae.latent_shape() != intrinsic_vae.latent_shape()) {
    throw ContractError("image latent " + shape_string(image_vae.latent_shape()) + " and intrinsic latent " +
                            shape_string(intrinsic_vae.latent_shape()) + " differ",
                        "latent_shape");
  }
}

VaeTrainLog train_vae(Vae& vae, const Tensor& data, const VaeTrainConfig& cfg, bool intrinsic,
                      const std::function<void(int, double)>& progress) {
  if (data.rank() != 4 || data.dim(0) < 1) throw ContractError("training data must be a nonempty [n,C,H,W] batch", "data");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("steps and batch must be positive", "steps");
  if (cfg.zero_mask_prob < 0.0 || cfg.zero_mask_prob > 1.0) throw ConfigError("zero_mask_prob must lie in [0,1]", "zero_mask_prob");
  Rng rng(cfg.seed);
  const int n = data.dim(0);
  const std::size_t sample = data.numel() / static_cast<std::size_t>(n);
  nn::AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = 0.0;
  nn::AdamW opt(vae.params().trainable(), ocfg);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::bernoulli_distribution drop(cfg.zero_mask_prob);
  VaeTrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    const double warm = cfg.warmup > 0 ? std::min(1.0, (step + 1.0) / cfg.warmup) : 1.0;
    const double progress_frac = static_cast<double>(step) / std::max(1, cfg.steps);
    const double decay = 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress_frac));
    opt.set_lr(cfg.lr * warm * decay);

    Shape bs = data.shape();
    bs[0] = cfg.batch;
    Tensor batch(bs);
    for (int b = 0; b < cfg.batch; ++b) {
      const int idx = pick(rng);
      std::copy_n(data.data() + static_cast<std::size_t>(idx) * sample, sample, batch.data() + static_cast<std::size_t>(b) * sample);
    }
    Tensor weights({cfg.batch, data.dim(1)}, 1.0f);
    Tensor input = batch;
    if (intrinsic) {
      std::vector<std::array<bool, kIntrinsicCount>> mask(static_cast<std::size_t>(cfg.batch));
      for (auto& m : mask) {
        for (auto& bit : m) bit = drop(rng);
      }
      input = apply_intrinsic_mask(batch, mask);
      weights = intrinsic_loss_weights(mask);
    }

    opt.zero_grad();
    auto post = vae.encode_posterior(Var(input));
    Var noise(Tensor::randn(post.mean.shape(), rng));
    Var z = ops::add(post.mean, ops::mul(ops::exp(ops::scale(post.logvar, 0.5f)), noise));
    Var recon = ops::weighted_mse(vae.decode_raw(z), batch, weights);
    Var loss = ops::add(recon, ops::scale(ops::gaussian_kl(post.mean, post.logvar), vae.config().kl_weight));
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) throw NumericError("non-finite autoencoder loss at step " + std::to_string(step), "loss");
    ag::backward(loss);
    if (cfg.grad_clip > 0.0) nn::clip_grad_norm(vae.params().trainable(), cfg.grad_clip);
    opt.step();
    log.loss.push_back(lv);
    log.recon.push_back(recon.value()[0]);
    if (progress) progress(step, lv);
  }
  return log;
}

void calibrate_latent_scale(Vae& vae, const Tensor& data) {
  vae.set_latent_scale(1.0f);
  const Tensor z = vae.encode(data);
  double s = 0.0, s2 = 0.0;
  for (float v : z.storage()) {
    s += v;
    s2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(z.numel());
  const double var = s2 / n - (s / n) * (s / n);
  if (!(var > 0.0)) throw NumericError("latent variance is zero", "latent_scale");
  vae.set_latent_scale(static_cast<float>(1.0 / std::sqrt(var)));
}

ReconstructionReport reconstruction_report(const Vae& vae, const Tensor& data,
                                           const std::array<bool, kIntrinsicCount>& mask) {
  const int n = data.dim(0), channels = data.dim(1);
  Tensor input = data;
  if (channels == kIntrinsicChannels) {
    input = apply_intrinsic_mask(data, std::vector<std::array<bool, kIntrinsicCount>>(static_cast<std::size_t>(n), mask));
  }
  const Tensor recon = vae.decode(vae.encode(input));
  const std::size_t plane = static_cast<std::size_t>(data.dim(2)) * data.dim(3);
  ReconstructionReport r;
  r.channel_mse.assign(static_cast<std::size_t>(channels), 0.0);
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * channels + c) * plane;
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = static_cast<double>(recon[base + j]) - data[base + j];
        s += d * d;
      }
      r.channel_mse[static_cast<std::size_t>(c)] += s / (static_cast<double>(plane) * n);
    }
  }
  for (double v : r.channel_mse) {
    r.mean_channel_mse += v / channels;
    r.worst_channel_mse = std::max(r.worst_channel_mse, v);
  }
  if (channels == kIntrinsicChannels) {
    for (int k = 0; k < kIntrinsicCount; ++k) {
      r.field_mse.push_back((r.channel_mse[3 * k] + r.channel_mse[3 * k + 1] + r.channel_mse[3 * k + 2]) / 3.0);
    }
  } else {
    r.field_mse.push_back(r.mean_channel_mse);
  }
  return r;
}

}  // namespace ildm::codec
