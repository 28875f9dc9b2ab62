#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ildm/autograd.hpp"
#include "ildm/ops.hpp"

namespace ildm::nn {

using ag::Var;

/// Ordered, named parameter registry. Layers hold Var handles that alias the
/// store's nodes, so loading or freezing through the store affects them.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
  std::vector<Var> trainable() const;
  std::vector<std::string> trainable_names() const;

  void set_trainable(const std::function<bool(const std::string&)>& select, bool trainable);
  void freeze_all();
  void zero_grad();

  std::size_t parameter_count() const;
  /// FNV-1a over names, shapes and raw float bytes of the selected entries.
  std::uint64_t hash(const std::function<bool(const std::string&)>& select = {}) const;

  std::map<std::string, Tensor> snapshot() const;
  /// Copies values in; names and shapes must match the registry exactly.
  void load(const std::map<std::string, Tensor>& values);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

Tensor normal_init(const Shape& shape, float stddev, Rng& rng);

struct Conv2d {
  Var weight, bias;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
         float init_gain = 1.0f);
  Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

struct GroupNorm {
  Var gamma, beta;
  int groups = 8;

  GroupNorm() = default;
  GroupNorm(ParamStore& store, const std::string& name, int channels, int groups);
  Var operator()(const Var& x) const { return ops::group_norm(x, gamma, beta, groups); }
};

/// Trainable low-rank delta: effective weight = base + scale * B * A.
struct LoraAdapter {
  Var a;  // [rank, in]
  Var b;  // [out, rank], zero at creation
  int rank = 0;
  float scale = 1.0f;
};

struct Linear {
  Var weight, bias;
  std::optional<LoraAdapter> adapter;
  std::string name;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true,
         float init_gain = 1.0f);

  void attach_adapter(ParamStore& store, int rank, float scale, Rng& rng);
  /// `use_adapter` selects the adapted weights when an adapter exists.
  Var operator()(const Var& x, bool use_adapter = false) const;
  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }
};

/// GN -> SiLU -> conv -> (+ time embedding) -> GN -> SiLU -> conv, plus skip.
struct ResBlock {
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  std::optional<Linear> time_proj;
  std::optional<Conv2d> skip;

  ResBlock() = default;
  ResBlock(ParamStore& store, const std::string& name, int in, int out, int time_dim, int groups, Rng& rng);
  Var operator()(const Var& x, const Var& time_emb = Var()) const;
};

/// Sinusoidal features of (possibly fractional) timesteps: [B, dim].
Tensor timestep_features(const std::vector<double>& t, int dim);

}  // namespace ildm::nn
