#include "ildm/nn.hpp"

#include <cmath>
#include <fstream>

#include "ildm/checksum.hpp"
#include "ildm/error.hpp"

namespace ildm {

void Fnv1a::update(const void* data, std::size_t size) noexcept {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return s;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for checksum", path.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

}  // namespace ildm

namespace ildm::nn {

Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name)) throw ContractError("duplicate parameter name", name);
  Var v(std::move(init), trainable);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter", name);
  return entries_[it->second].second;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& [name, v] : entries_) {
    if (v.requires_grad()) out.push_back(v);
  }
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, v] : entries_) {
    if (v.requires_grad()) out.push_back(name);
  }
  return out;
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& select, bool trainable) {
  for (auto& [name, v] : entries_) {
    if (select(name)) v.set_requires_grad(trainable);
  }
}

void ParamStore::freeze_all() {
  for (auto& [name, v] : entries_) v.set_requires_grad(false);
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().numel();
  return n;
}

std::uint64_t ParamStore::hash(const std::function<bool(const std::string&)>& select) const {
  Fnv1a h;
  for (const auto& [name, v] : entries_) {
    if (select && !select(name)) continue;
    h.update(name);
    for (int d : v.shape()) h.update(&d, sizeof(d));
    h.update(v.value().data(), v.value().numel() * sizeof(float));
  }
  return h.digest();
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : entries_) out.emplace(name, v.value());
  return out;
}

void ParamStore::load(const std::map<std::string, Tensor>& values) {
  for (const auto& [name, v] : entries_) {
    auto it = values.find(name);
    if (it == values.end()) throw ContractError("checkpoint is missing parameter", name);
    if (it->second.shape() != v.shape()) {
      throw ContractError("parameter shape " + shape_string(it->second.shape()) + " does not match model " +
                              shape_string(v.shape()),
                          name);
    }
  }
  for (const auto& [name, t] : values) {
    if (!index_.count(name)) throw ContractError("checkpoint has a parameter the model does not", name);
  }
  for (auto& [name, v] : entries_) v.mutable_value() = values.at(name);
}

Tensor normal_init(const Shape& shape, float stddev, Rng& rng) {
  Tensor t = Tensor::randn(shape, rng);
  for (auto& v : t.storage()) v *= stddev;
  return t;
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride_, Rng& rng,
               float init_gain)
    : stride(stride_), pad(kernel / 2) {
  const float fan_in = static_cast<float>(in * kernel * kernel);
  weight = store.add(name + ".weight", normal_init({out, in, kernel, kernel}, init_gain * std::sqrt(1.0f / fan_in), rng));
  bias = store.add(name + ".bias", Tensor({out}));
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, int channels, int groups_) : groups(groups_) {
  if (channels % groups != 0) throw ConfigError("group count must divide channels", name);
  gamma = store.add(name + ".gamma", Tensor({channels}, 1.0f));
  beta = store.add(name + ".beta", Tensor({channels}));
}

Linear::Linear(ParamStore& store, const std::string& name_, int in, int out, Rng& rng, bool with_bias,
               float init_gain)
    : name(name_) {
  weight = store.add(name + ".weight", normal_init({out, in}, init_gain * std::sqrt(1.0f / static_cast<float>(in)), rng));
  if (with_bias) bias = store.add(name + ".bias", Tensor({out}));
}

void Linear::attach_adapter(ParamStore& store, int rank, float scale, Rng& rng) {
  const int in = in_features(), out = out_features();
  if (rank < 1 || rank > std::min(in, out)) {
    throw ConfigError("LoRA rank must lie in [1, min(d_in, d_out)] = [1, " + std::to_string(std::min(in, out)) + "]",
                      "lora_rank");
  }
  LoraAdapter a;
  a.rank = rank;
  a.scale = scale;
  a.a = store.add(name + ".lora_a", normal_init({rank, in}, std::sqrt(1.0f / static_cast<float>(in)), rng));
  a.b = store.add(name + ".lora_b", Tensor({out, rank}));
  adapter = std::move(a);
}

Var Linear::operator()(const Var& x, bool use_adapter) const {
  Var y = ops::linear(x, weight, bias);
  if (use_adapter && adapter) {
    Var delta = ops::linear(ops::linear(x, adapter->a, Var()), adapter->b, Var());
    if (adapter->scale != 1.0f) delta = ops::scale(delta, adapter->scale);
    y = ops::add(y, delta);
  }
  return y;
}

ResBlock::ResBlock(ParamStore& store, const std::string& name, int in, int out, int time_dim, int groups, Rng& rng)
    : norm1(store, name + ".norm1", in, groups),
      norm2(store, name + ".norm2", out, groups),
      conv1(store, name + ".conv1", in, out, 3, 1, rng),
      conv2(store, name + ".conv2", out, out, 3, 1, rng, 0.5f) {
  if (time_dim > 0) time_proj.emplace(store, name + ".time_proj", time_dim, out, rng);
  if (in != out) skip.emplace(store, name + ".skip", in, out, 1, 1, rng);
}

Var ResBlock::operator()(const Var& x, const Var& time_emb) const {
  Var h = conv1(ops::silu(norm1(x)));
  if (time_proj && time_emb.defined()) h = ops::add_channel_embedding(h, (*time_proj)(ops::silu(time_emb)));
  h = conv2(ops::silu(norm2(h)));
  return ops::add(skip ? (*skip)(x) : x, h);
}

Tensor timestep_features(const std::vector<double>& t, int dim) {
  const int half = dim / 2;
  Tensor out({static_cast<int>(t.size()), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      out[b * dim + j] = static_cast<float>(std::sin(t[b] * freq));
      out[b * dim + half + j] = static_cast<float>(std::cos(t[b] * freq));
    }
  }
  return out;
}

}  // namespace ildm::nn
