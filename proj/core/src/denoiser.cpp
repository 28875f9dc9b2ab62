#include "ildm/denoiser.hpp"

#include <json.hpp>

#include "ildm/error.hpp"

namespace ildm::model {

using json = nlohmann::json;

std::vector<int> null_condition() { return {kNullToken}; }

std::string DenoiserConfig::to_json() const {
  json j;
  j["latent_channels"] = latent_channels;
  j["latent_size"] = latent_size;
  j["width0"] = width0;
  j["width1"] = width1;
  j["head_dim"] = head_dim;
  j["groups"] = groups;
  j["time_features"] = time_features;
  j["time_dim"] = time_dim;
  j["vocab_size"] = vocab_size;
  j["max_tokens"] = max_tokens;
  j["cond_dim"] = cond_dim;
  j["lora_rank"] = lora_rank;
  j["lora_scale"] = lora_scale;
  j["lora_cross_attn"] = lora_cross_attn;
  j["lora_time_embed"] = lora_time_embed;
  j["parameterization"] = diffusion::to_string(parameterization);
  return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
  DenoiserConfig c;
  try {
    const json j = json::parse(text);
    c.latent_channels = j.at("latent_channels").get<int>();
    c.latent_size = j.at("latent_size").get<int>();
    c.width0 = j.at("width0").get<int>();
    c.width1 = j.at("width1").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.groups = j.at("groups").get<int>();
    c.time_features = j.at("time_features").get<int>();
    c.time_dim = j.at("time_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_tokens = j.at("max_tokens").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.lora_rank = j.at("lora_rank").get<int>();
    c.lora_scale = j.at("lora_scale").get<float>();
    c.lora_cross_attn = j.at("lora_cross_attn").get<bool>();
    c.lora_time_embed = j.at("lora_time_embed").get<bool>();
    c.parameterization = diffusion::parse_parameterization(j.at("parameterization").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError(std::string("bad denoiser header: ") + e.what(), "__meta__");
  }
  return c;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  if (c.width0 % c.head_dim != 0 || c.width1 % c.head_dim != 0) throw ConfigError("head_dim must divide widths", "head_dim");
  if (c.latent_size % 2 != 0) throw ConfigError("latent size must be even", "latent_size");
  if (c.vocab_size < 2) throw ConfigError("vocabulary needs pad and null tokens", "vocab_size");
  Rng rng(seed);
  token_table_ = store_.add("cond.tokens", nn::normal_init({c.vocab_size, c.cond_dim}, 1.0f, rng));
  position_table_ = store_.add("cond.positions", nn::normal_init({c.max_tokens, c.cond_dim}, 0.1f, rng));
  time1_ = nn::Linear(store_, "time.fc1", c.time_features, c.time_dim, rng);
  time2_ = nn::Linear(store_, "time.fc2", c.time_dim, c.time_dim, rng);

  conv_in_ = nn::Conv2d(store_, "conv_in", c.latent_channels, c.width0, 3, 1, rng);
  res0_ = nn::ResBlock(store_, "down0.res", c.width0, c.width0, c.time_dim, c.groups, rng);
  down_ = nn::Conv2d(store_, "down0.downsample", c.width0, c.width0, 3, 2, rng);
  res1_ = nn::ResBlock(store_, "down1.res", c.width0, c.width1, c.time_dim, c.groups, rng);
  mid_ = nn::ResBlock(store_, "mid.res", c.width1, c.width1, c.time_dim, c.groups, rng);
  up1_ = nn::ResBlock(store_, "up1.res", 2 * c.width1, c.width1, c.time_dim, c.groups, rng);
  up0_ = nn::ResBlock(store_, "up0.res", c.width1 + c.width0, c.width0, c.time_dim, c.groups, rng);
  norm_out_ = nn::GroupNorm(store_, "out.norm", c.width0, c.groups);
  conv_out_ = nn::Conv2d(store_, "out.conv", c.width0, c.latent_channels, 3, 1, rng, 0.1f);

  const int widths[kAttentionBlocks] = {c.width0, c.width1, c.width1, c.width1, c.width0};
  for (int b = 0; b < kAttentionBlocks; ++b) {
    const std::string p = "site" + std::to_string(b + 1);
    const int w = widths[b];
    AttnSite s;
    s.heads = w / c.head_dim;
    s.norm = nn::GroupNorm(store_, p + ".norm", w, c.groups);
    s.q = nn::Linear(store_, p + ".q", w, w, rng, false);
    s.k = nn::Linear(store_, p + ".k", w, w, rng, false);
    s.v = nn::Linear(store_, p + ".v", w, w, rng, false);
    s.o = nn::Linear(store_, p + ".o", w, w, rng, true, 0.5f);
    s.cross_norm = nn::GroupNorm(store_, p + ".cross_norm", w, c.groups);
    s.cq = nn::Linear(store_, p + ".cross_q", w, w, rng, false);
    s.ck = nn::Linear(store_, p + ".cross_k", c.cond_dim, w, rng, false);
    s.cv = nn::Linear(store_, p + ".cross_v", c.cond_dim, w, rng, false);
    s.co = nn::Linear(store_, p + ".cross_o", w, w, rng, true, 0.5f);
    sites_.push_back(std::move(s));
  }
}

bool Denoiser::is_adapter_param(const std::string& name) { return name.find(".lora_") != std::string::npos; }

void Denoiser::attach_adapters(std::uint64_t seed) {
  if (adapters_) return;
  Rng rng(seed);
  const int r = config_.lora_rank;
  const float s = config_.lora_scale;
  for (auto& site : sites_) {
    for (nn::Linear* l : {&site.q, &site.k, &site.v, &site.o}) l->attach_adapter(store_, r, s, rng);
    if (config_.lora_cross_attn) {
      for (nn::Linear* l : {&site.cq, &site.ck, &site.cv, &site.co}) l->attach_adapter(store_, r, s, rng);
    }
  }
  if (config_.lora_time_embed) {
    time1_.attach_adapter(store_, r, s, rng);
    time2_.attach_adapter(store_, r, s, rng);
  }
  adapters_ = true;
}

void Denoiser::freeze_base() {
  store_.freeze_all();
  store_.set_trainable(is_adapter_param, true);
}

int Denoiser::tokens_per_block(int block) const {
  if (block < 1 || block > kAttentionBlocks) {
    throw ContractError("attention block index " + std::to_string(block) + " outside 1.." + std::to_string(kAttentionBlocks),
                        "block");
  }
  const int full = config_.latent_size * config_.latent_size;
  return (block == 1 || block == kAttentionBlocks) ? full : full / 4;
}

void Denoiser::check_inputs(const Var& x_t, const std::vector<double>& t, const TokenBatch& cond) const {
  const Shape expect{x_t.value().rank() == 4 ? x_t.dim(0) : -1, config_.latent_channels, config_.latent_size,
                     config_.latent_size};
  if (x_t.shape() != expect) {
    throw ContractError("latent shape " + shape_string(x_t.shape()) + " does not match [B," +
                            std::to_string(config_.latent_channels) + "," + std::to_string(config_.latent_size) + "," +
                            std::to_string(config_.latent_size) + "]",
                        "x_t");
  }
  const auto batch = static_cast<std::size_t>(x_t.dim(0));
  if (t.size() != batch) throw ContractError("need one timestep per sample", "t");
  if (cond.size() != batch) throw ContractError("need one condition per sample", "condition");
}

Var Denoiser::condition_tokens(const TokenBatch& cond) const {
  TokenBatch padded = cond;
  for (auto& seq : padded) {
    if (static_cast<int>(seq.size()) > config_.max_tokens) {
      throw ContractError("condition has " + std::to_string(seq.size()) + " tokens, limit " +
                              std::to_string(config_.max_tokens),
                          "condition");
    }
    seq.resize(static_cast<std::size_t>(config_.max_tokens), kPadToken);
  }
  return ops::add_positional(ops::embedding(token_table_, padded), position_table_);
}

Var Denoiser::time_embedding(const std::vector<double>& t, bool intrinsic) const {
  const bool adapt = intrinsic && config_.lora_time_embed;
  Var f(nn::timestep_features(t, config_.time_features));
  return time2_(ops::silu(time1_(f, adapt)), adapt);
}

void Denoiser::run_site(int block, std::vector<Stream>& streams, const Var& cond_tokens, const std::vector<double>& w,
                        AttentionProbe* probe) const {
  const AttnSite& s = sites_[static_cast<std::size_t>(block - 1)];
  const int height = streams[0].h.dim(2), width = streams[0].h.dim(3);

  struct Qkv {
    Var q, k, v;
  };
  std::vector<Qkv> qkv;
  for (const auto& st : streams) {
    Var n = ops::to_tokens(s.norm(st.h));
    qkv.push_back({s.q(n, st.intrinsic), s.k(n, st.intrinsic), s.v(n, st.intrinsic)});
  }

  if (streams.size() == 1) {
    Var a = ops::attention(qkv[0].q, qkv[0].k, qkv[0].v, Var(), Var(), {}, s.heads);
    if (probe && probe->keep_activations) probe->image_attention.push_back(a.value());
    streams[0].h = ops::add(streams[0].h, ops::from_tokens(s.o(a), height, width));
  } else {
    const auto& x = qkv[0];
    const auto& i = qkv[1];
    Var ax = ops::attention(x.q, x.k, x.v, i.k, i.v, w, s.heads);
    const std::vector<double> ones(w.size(), 1.0);
    Var ai = ops::attention(i.q, i.k, i.v, x.k, x.v, ones, s.heads);
    if (probe) {
      probe->weights.push_back(w);
      if (probe->keep_activations) probe->image_attention.push_back(ax.value());
      if (probe->heatmap_block == block) {
        const int n = x.q.dim(1), c = x.q.dim(2);
        using MatF = xattn::Matrix<float>;
        const auto sample0 = [&](const Var& v) { return MatF(Eigen::Map<const MatF>(v.value().data(), n, c)); };
        probe->heatmap = xattn::image_attention_row(sample0(x.q), sample0(x.k), sample0(i.k), w[0], s.heads,
                                                    probe->heatmap_query);
      }
    }
    streams[0].h = ops::add(streams[0].h, ops::from_tokens(s.o(ax), height, width));
    streams[1].h = ops::add(streams[1].h, ops::from_tokens(s.o(ai, true), height, width));
  }

  const Var ck_base = s.ck(cond_tokens), cv_base = s.cv(cond_tokens);
  Var ck_adapt, cv_adapt;
  for (auto& st : streams) {
    const bool adapt = st.intrinsic && config_.lora_cross_attn;
    if (adapt && !ck_adapt.defined()) {
      ck_adapt = s.ck(cond_tokens, true);
      cv_adapt = s.cv(cond_tokens, true);
    }
    Var n = ops::to_tokens(s.cross_norm(st.h));
    Var a = ops::attention(s.cq(n, adapt), adapt ? ck_adapt : ck_base, adapt ? cv_adapt : cv_base, Var(), Var(), {},
                           s.heads);
    st.h = ops::add(st.h, ops::from_tokens(s.co(a, adapt), height, width));
  }
}

void Denoiser::run_unet(std::vector<Stream>& streams, const std::vector<double>& t, const TokenBatch& cond,
                        const xattn::AttnWeightSchedule* schedule, AttentionProbe* probe) const {
  const Var cond_tokens = condition_tokens(cond);
  std::vector<Var> temb;
  for (const auto& st : streams) {
    temb.push_back(st.intrinsic && config_.lora_time_embed ? time_embedding(t, true)
                                                            : (temb.empty() ? time_embedding(t, false) : temb[0]));
  }

  auto weights_for = [&](int block) {
    std::vector<double> w(t.size(), 0.0);
    if (schedule) {
      for (std::size_t b = 0; b < t.size(); ++b) w[b] = xattn::eval_weight(*schedule, block, t[b]);
    }
    return w;
  };
  auto each = [&](auto&& f) {
    for (std::size_t k = 0; k < streams.size(); ++k) streams[k].h = f(streams[k].h, temb[k]);
  };

  each([&](const Var& h, const Var&) { return conv_in_(h); });
  each([&](const Var& h, const Var& e) { return res0_(h, e); });
  run_site(1, streams, cond_tokens, weights_for(1), probe);
  std::vector<Var> skip0;
  for (const auto& st : streams) skip0.push_back(st.h);

  each([&](const Var& h, const Var&) { return down_(h); });
  each([&](const Var& h, const Var& e) { return res1_(h, e); });
  run_site(2, streams, cond_tokens, weights_for(2), probe);
  std::vector<Var> skip1;
  for (const auto& st : streams) skip1.push_back(st.h);

  each([&](const Var& h, const Var& e) { return mid_(h, e); });
  run_site(3, streams, cond_tokens, weights_for(3), probe);

  for (std::size_t k = 0; k < streams.size(); ++k) {
    streams[k].h = up1_(ops::concat_channels(streams[k].h, skip1[k]), temb[k]);
  }
  run_site(4, streams, cond_tokens, weights_for(4), probe);
  each([&](const Var& h, const Var&) { return ops::upsample_nearest2x(h); });

  for (std::size_t k = 0; k < streams.size(); ++k) {
    streams[k].h = up0_(ops::concat_channels(streams[k].h, skip0[k]), temb[k]);
  }
  run_site(5, streams, cond_tokens, weights_for(5), probe);
  each([&](const Var& h, const Var&) { return conv_out_(ops::silu(norm_out_(h))); });
}

Var Denoiser::forward_image_only(const Var& x_t, const std::vector<double>& t, const TokenBatch& cond) const {
  check_inputs(x_t, t, cond);
  std::vector<Stream> streams{{x_t, false}};
  run_unet(streams, t, cond, nullptr, nullptr);
  return streams[0].h;
}

DualOutput Denoiser::forward_dual(const Var& x_t, const Var& i_t, const std::vector<double>& t, const TokenBatch& cond,
                                  const xattn::AttnWeightSchedule& schedule, AttentionProbe* probe) const {
  check_inputs(x_t, t, cond);
  if (x_t.shape() != i_t.shape()) {
    throw ContractError("image latent " + shape_string(x_t.shape()) + " and intrinsic latent " +
                            shape_string(i_t.shape()) + " differ",
                        "i_t");
  }
  if (probe) {
    probe->weights.clear();
    probe->image_attention.clear();
    probe->heatmap.clear();
  }
  std::vector<Stream> streams{{x_t, false}, {i_t, true}};
  run_unet(streams, t, cond, &schedule, probe);
  return {streams[0].h, streams[1].h};
}

std::vector<double> Denoiser::attention_heatmap(const Tensor& x_t, const Tensor& i_t, double t,
                                                const std::vector<int>& cond,
                                                const xattn::AttnWeightSchedule& schedule, int block,
                                                int query) const {
  const int n = tokens_per_block(block);
  if (query < 0 || query >= n) {
    throw ContractError("query position " + std::to_string(query) + " outside the " + std::to_string(n) +
                            "-token grid of block " + std::to_string(block),
                        "query");
  }
  ag::NoGradGuard guard;
  AttentionProbe probe;
  probe.heatmap_block = block;
  probe.heatmap_query = query;
  forward_dual(Var(x_t), Var(i_t), {t}, {cond}, schedule, &probe);
  return probe.heatmap;
}

void Denoiser::save(io::TensorContainer& out) const {
  json meta;
  meta["kind"] = "denoiser";
  meta["config"] = json::parse(config_.to_json());
  meta["adapters"] = adapters_;
  out.put_text("__meta__", meta.dump());
  for (const auto& [name, v] : store_.entries()) out.put("param/" + name, v.value());
}

void Denoiser::save(const std::filesystem::path& path) const {
  io::TensorContainer c;
  save(c);
  c.save(path);
}

Denoiser Denoiser::load(const io::TensorContainer& in) {
  json meta;
  try {
    meta = json::parse(in.text("__meta__"));
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what(), "__meta__");
  }
  if (meta.value("kind", "") != "denoiser") throw IoError("checkpoint is not a denoiser", "__meta__");
  Denoiser d(DenoiserConfig::from_json(meta.at("config").dump()), 0);
  if (meta.value("adapters", false)) d.attach_adapters(0);
  std::map<std::string, Tensor> values;
  for (const auto& e : in.entries()) {
    if (e.name.rfind("param/", 0) == 0) values.emplace(e.name.substr(6), in.tensor(e.name));
  }
  d.store_.load(values);
  return d;
}

Denoiser Denoiser::load(const std::filesystem::path& path) { return load(io::TensorContainer::load(path)); }

}  // namespace ildm::model
