#pragma once

#include <vector>

#include "ildm/autograd.hpp"
#include "ildm/xattn.hpp"

// Differentiable operations on float tensors. Spatial tensors are NCHW,
// token tensors are [B, N, C].

namespace ildm::ops {

using ag::Var;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var exp(const Var& a);
Var clamp(const Var& a, float lo, float hi);
Var silu(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

/// mean((pred - target)^2) over all elements.
Var mse(const Var& pred, const Tensor& target);
/// Per-(sample, channel) weighted squared error divided by sum(weight) * H * W.
/// `weight` is [B, C]; a zero weight excludes that channel plane.
Var weighted_mse(const Var& pred, const Tensor& target, const Tensor& weight);
/// Mean over elements of KL(N(mean, exp(logvar)) || N(0, 1)).
Var gaussian_kl(const Var& mean, const Var& logvar);

/// x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout] (may be undefined).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps = 1e-5f);
/// x [M,K] (or [B,N,K]), w [O,K], b [O] (may be undefined).
Var linear(const Var& x, const Var& w, const Var& b);
/// x [B,C,H,W] + e[B,C] broadcast over space.
Var add_channel_embedding(const Var& x, const Var& e);
Var upsample_nearest2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
/// Channels [begin, end) of [B,C,H,W].
Var slice_channels(const Var& x, int begin, int end);
/// [B,C,H,W] -> [B,H*W,C]
Var to_tokens(const Var& x);
/// [B,N,C] -> [B,C,H,W]
Var from_tokens(const Var& x, int height, int width);
/// table [V,E], tokens [B][L] -> [B,L,E]
Var embedding(const Var& table, const std::vector<std::vector<int>>& tokens);
/// x [B,L,E] + p [L,E]
Var add_positional(const Var& x, const Var& p);
/// Split [B, ..] rows of a batched tensor.
Var slice_batch(const Var& x, int begin, int end);

/// Batched (biased) multi-head attention over [B,N,C] token tensors.
/// `k_cross`/`v_cross` may be undefined; `w` holds one weight per sample
/// (ignored when there is no cross block).
Var attention(const Var& q, const Var& k, const Var& v, const Var& k_cross, const Var& v_cross,
              const std::vector<double>& w, int heads, xattn::AttnPath path = xattn::AttnPath::Fused);

}  // namespace ildm::ops
