#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "ildm/error.hpp"

// Cross-domain self-attention with a scheduled log-bias on the image branch.
//
// Image queries attend over the concatenation of image keys (bias 0) and
// intrinsic keys (bias log w). Intrinsic queries attend over the same
// concatenation without bias. w = 0 removes the intrinsic keys from the
// softmax support altogether, so the image branch reduces exactly to
// single-domain attention.

namespace ildm::xattn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Weight schedules

enum class ScheduleKind { Drop, Gaussian, Full, Off };

/// Timestep range the schedule hyperparameters are expressed in.
inline constexpr double kReferenceTimesteps = 1000.0;

class AttnWeightSchedule {
 public:
  /// w = 1 iff l in layers and t <= tau.
  static AttnWeightSchedule drop(std::set<int> layers, double tau);
  /// w = alpha * exp(-(t - tau)^2 / sigma^2).
  static AttnWeightSchedule gaussian(double alpha, double tau, double sigma);
  static AttnWeightSchedule full();
  static AttnWeightSchedule off();

  ScheduleKind kind() const noexcept { return kind_; }
  const std::set<int>& layers() const noexcept { return layers_; }
  double tau() const noexcept { return tau_; }
  double alpha() const noexcept { return alpha_; }
  double sigma() const noexcept { return sigma_; }

  /// `block` is 1-based; `t` is in the [0, 1000] range.
  double eval(int block, double t) const;

  std::string describe() const;

 private:
  ScheduleKind kind_ = ScheduleKind::Full;
  std::set<int> layers_;
  double tau_ = 0.0;
  double alpha_ = 1.0;
  double sigma_ = 1.0;
};

double eval_weight(const AttnWeightSchedule& schedule, int block, double t);

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

// ---------------------------------------------------------------------------
// Kernel

enum class AttnPath { Explicit, Fused };

AttnPath parse_attn_path(const std::string& name);

template <class T>
struct HeadCache {
  Matrix<T> probs;  // N x M, or N x (M + Mc) when the cross block is live
};

template <class T>
struct AttentionForward {
  Matrix<T> out;
  std::vector<HeadCache<T>> heads;
  bool used_cross = false;
};

template <class T>
struct AttentionGrads {
  Matrix<T> q, k_own, v_own, k_cross, v_cross;
};

namespace detail {

template <class T>
void softmax_rows(Matrix<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const T m = row.maxCoeff();
    T total = 0;
    for (Eigen::Index c = 0; c < row.size(); ++c) {
      const T e = std::exp(row(c) - m);  // exp(-inf) == 0 for masked columns
      row(c) = e;
      total += e;
    }
    row /= total;
  }
}

template <class T>
Matrix<T> head_cols(const Matrix<T>& m, int head, int width) {
  return m.middleCols(static_cast<Eigen::Index>(head) * width, width);
}

}  // namespace detail

/// Single head. `k_cross`/`v_cross` may be null (single-domain attention).
template <class T>
Matrix<T> attend_head(const Matrix<T>& q, const Matrix<T>& k_own, const Matrix<T>& v_own, const Matrix<T>* k_cross,
                      const Matrix<T>* v_cross, double w, AttnPath path, HeadCache<T>* cache) {
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  const bool live_cross = k_cross != nullptr && w > 0.0;
  Matrix<T> probs;
  Matrix<T> out;
  if (path == AttnPath::Explicit && k_cross != nullptr) {
    const Eigen::Index m = k_own.rows();
    const Eigen::Index mc = k_cross->rows();
    // Additive bias log(W): 0 on own keys, log w on cross keys (-inf at w = 0).
    Matrix<T> bias(q.rows(), m + mc);
    bias.leftCols(m).setZero();
    bias.rightCols(mc).setConstant(w > 0.0 ? static_cast<T>(std::log(w)) : -std::numeric_limits<T>::infinity());
    probs.resize(q.rows(), m + mc);
    probs.leftCols(m).noalias() = (q * k_own.transpose()) * scale;
    probs.rightCols(mc).noalias() = (q * k_cross->transpose()) * scale;
    probs += bias;
    detail::softmax_rows(probs);
    out.noalias() = probs.leftCols(m) * v_own;
    out.noalias() += probs.rightCols(mc) * (*v_cross);
    if (!live_cross) probs = Matrix<T>(probs.leftCols(m));
  } else if (live_cross) {
    const Eigen::Index m = k_own.rows();
    probs.resize(q.rows(), m + k_cross->rows());
    probs.leftCols(m).noalias() = (q * k_own.transpose()) * scale;
    probs.rightCols(k_cross->rows()).noalias() = (q * k_cross->transpose()) * scale;
    if (w != 1.0) probs.rightCols(k_cross->rows()).array() += static_cast<T>(std::log(w));
    detail::softmax_rows(probs);
    out.noalias() = probs.leftCols(m) * v_own;
    out.noalias() += probs.rightCols(k_cross->rows()) * (*v_cross);
  } else {
    probs.noalias() = (q * k_own.transpose()) * scale;
    detail::softmax_rows(probs);
    out.noalias() = probs * v_own;
  }
  if (cache) cache->probs = std::move(probs);
  return out;
}

template <class T>
void attend_head_backward(const Matrix<T>& d_out, const Matrix<T>& q, const Matrix<T>& k_own, const Matrix<T>& v_own,
                          const Matrix<T>* k_cross, const Matrix<T>* v_cross, const HeadCache<T>& cache,
                          bool live_cross, AttentionGrads<T>& g) {
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  const Eigen::Index m = k_own.rows();
  const Matrix<T>& p = cache.probs;
  Matrix<T> dp(p.rows(), p.cols());
  dp.leftCols(m).noalias() = d_out * v_own.transpose();
  if (live_cross) dp.rightCols(k_cross->rows()).noalias() = d_out * v_cross->transpose();
  Matrix<T> ds = p.cwiseProduct(dp);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
  ds -= p.cwiseProduct(rowdot.replicate(1, p.cols()));
  ds *= scale;

  g.v_own.noalias() = p.leftCols(m).transpose() * d_out;
  g.k_own.noalias() = ds.leftCols(m).transpose() * q;
  g.q.noalias() = ds.leftCols(m) * k_own;
  if (k_cross != nullptr) {
    if (live_cross) {
      const Eigen::Index mc = k_cross->rows();
      g.v_cross.noalias() = p.rightCols(mc).transpose() * d_out;
      g.k_cross.noalias() = ds.rightCols(mc).transpose() * q;
      g.q.noalias() += ds.rightCols(mc) * (*k_cross);
    } else {
      g.v_cross = Matrix<T>::Zero(v_cross->rows(), v_cross->cols());
      g.k_cross = Matrix<T>::Zero(k_cross->rows(), k_cross->cols());
    }
  }
}

/// Multi-head attention; every head shares the same scalar w.
template <class T>
AttentionForward<T> multihead_attention(const Matrix<T>& q, const Matrix<T>& k_own, const Matrix<T>& v_own,
                                        const Matrix<T>* k_cross, const Matrix<T>* v_cross, double w, int heads,
                                        AttnPath path = AttnPath::Fused) {
  if (heads < 1 || q.cols() % heads != 0 || v_own.cols() % heads != 0) {
    throw ContractError("head count " + std::to_string(heads) + " does not divide the attention width", "heads");
  }
  if (k_own.cols() != q.cols() || k_own.rows() != v_own.rows()) {
    throw ContractError("query/key/value widths disagree", "attention");
  }
  if ((k_cross == nullptr) != (v_cross == nullptr)) throw ContractError("cross keys without values", "attention");
  if (k_cross && (k_cross->cols() != q.cols() || v_cross->cols() != v_own.cols() || k_cross->rows() != v_cross->rows())) {
    throw ContractError("cross-domain key/value shapes disagree with own-domain shapes", "attention");
  }
  if (!(w >= 0.0 && w <= 1.0)) throw ContractError("attention weight must lie in [0,1]", "w");

  AttentionForward<T> fwd;
  fwd.used_cross = k_cross != nullptr && w > 0.0;
  fwd.heads.resize(static_cast<std::size_t>(heads));
  const int dk = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v_own.cols()) / heads;
  if (heads == 1) {
    fwd.out = attend_head(q, k_own, v_own, k_cross, v_cross, w, path, &fwd.heads[0]);
    return fwd;
  }
  fwd.out.resize(q.rows(), v_own.cols());
  for (int h = 0; h < heads; ++h) {
    const Matrix<T> qh = detail::head_cols(q, h, dk);
    const Matrix<T> kh = detail::head_cols(k_own, h, dk);
    const Matrix<T> vh = detail::head_cols(v_own, h, dv);
    Matrix<T> kch, vch;
    if (k_cross) {
      kch = detail::head_cols(*k_cross, h, dk);
      vch = detail::head_cols(*v_cross, h, dv);
    }
    fwd.out.middleCols(static_cast<Eigen::Index>(h) * dv, dv) =
        attend_head<T>(qh, kh, vh, k_cross ? &kch : nullptr, k_cross ? &vch : nullptr, w, path,
                       &fwd.heads[static_cast<std::size_t>(h)]);
  }
  return fwd;
}

template <class T>
AttentionGrads<T> multihead_attention_backward(const Matrix<T>& d_out, const Matrix<T>& q, const Matrix<T>& k_own,
                                               const Matrix<T>& v_own, const Matrix<T>* k_cross,
                                               const Matrix<T>* v_cross, const AttentionForward<T>& fwd) {
  const int heads = static_cast<int>(fwd.heads.size());
  AttentionGrads<T> g;
  if (heads == 1) {
    attend_head_backward(d_out, q, k_own, v_own, k_cross, v_cross, fwd.heads[0], fwd.used_cross, g);
    return g;
  }
  const int dk = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v_own.cols()) / heads;
  g.q.resize(q.rows(), q.cols());
  g.k_own.resize(k_own.rows(), k_own.cols());
  g.v_own.resize(v_own.rows(), v_own.cols());
  if (k_cross) {
    g.k_cross.resize(k_cross->rows(), k_cross->cols());
    g.v_cross.resize(v_cross->rows(), v_cross->cols());
  }
  for (int h = 0; h < heads; ++h) {
    const Matrix<T> qh = detail::head_cols(q, h, dk);
    const Matrix<T> kh = detail::head_cols(k_own, h, dk);
    const Matrix<T> vh = detail::head_cols(v_own, h, dv);
    const Matrix<T> doh = detail::head_cols(d_out, h, dv);
    Matrix<T> kch, vch;
    if (k_cross) {
      kch = detail::head_cols(*k_cross, h, dk);
      vch = detail::head_cols(*v_cross, h, dv);
    }
    AttentionGrads<T> gh;
    attend_head_backward<T>(doh, qh, kh, vh, k_cross ? &kch : nullptr, k_cross ? &vch : nullptr,
                            fwd.heads[static_cast<std::size_t>(h)], fwd.used_cross, gh);
    g.q.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = gh.q;
    g.k_own.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = gh.k_own;
    g.v_own.middleCols(static_cast<Eigen::Index>(h) * dv, dv) = gh.v_own;
    if (k_cross) {
      g.k_cross.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = gh.k_cross;
      g.v_cross.middleCols(static_cast<Eigen::Index>(h) * dv, dv) = gh.v_cross;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Cross-domain attention with projections (one block, one sample)

template <class T>
struct AttnProjections {
  // Each maps model width d to inner width d_k (rows = d, cols = d_k).
  Matrix<T> q_x, k_x, v_x, q_i, k_i, v_i;
};

template <class T>
struct CrossDomainResult {
  Matrix<T> attn_x, attn_i;
  // Cached intermediates for the backward pass.
  Matrix<T> q_x, k_x, v_x, q_i, k_i, v_i;
  AttentionForward<T> fwd_x, fwd_i;
};

template <class T>
struct CrossDomainGrads {
  Matrix<T> z_x, z_i;
  AttnProjections<T> proj;
};

template <class T>
CrossDomainResult<T> cross_domain_attention(const Matrix<T>& z_x, const Matrix<T>& z_i,
                                            const AttnProjections<T>& proj, double w, int heads = 1,
                                            AttnPath path = AttnPath::Fused) {
  if (z_x.rows() != z_i.rows()) {
    throw ContractError("image and intrinsic token counts differ (" + std::to_string(z_x.rows()) + " vs " +
                            std::to_string(z_i.rows()) + ")",
                        "tokens");
  }
  if (z_x.cols() != z_i.cols()) throw ContractError("image and intrinsic token widths differ", "width");
  for (const Matrix<T>* p : {&proj.q_x, &proj.k_x, &proj.v_x, &proj.q_i, &proj.k_i, &proj.v_i}) {
    if (p->rows() != z_x.cols()) throw ContractError("projection input width does not match tokens", "projection");
  }
  CrossDomainResult<T> r;
  r.q_x.noalias() = z_x * proj.q_x;
  r.k_x.noalias() = z_x * proj.k_x;
  r.v_x.noalias() = z_x * proj.v_x;
  r.q_i.noalias() = z_i * proj.q_i;
  r.k_i.noalias() = z_i * proj.k_i;
  r.v_i.noalias() = z_i * proj.v_i;
  r.fwd_x = multihead_attention<T>(r.q_x, r.k_x, r.v_x, &r.k_i, &r.v_i, w, heads, path);
  r.fwd_i = multihead_attention<T>(r.q_i, r.k_i, r.v_i, &r.k_x, &r.v_x, 1.0, heads, path);
  r.attn_x = r.fwd_x.out;
  r.attn_i = r.fwd_i.out;
  return r;
}

template <class T>
CrossDomainGrads<T> cross_domain_attention_backward(const Matrix<T>& z_x, const Matrix<T>& z_i,
                                                    const AttnProjections<T>& proj, const CrossDomainResult<T>& r,
                                                    const Matrix<T>& d_attn_x, const Matrix<T>& d_attn_i) {
  const AttentionGrads<T> gx = multihead_attention_backward<T>(d_attn_x, r.q_x, r.k_x, r.v_x, &r.k_i, &r.v_i, r.fwd_x);
  const AttentionGrads<T> gi = multihead_attention_backward<T>(d_attn_i, r.q_i, r.k_i, r.v_i, &r.k_x, &r.v_x, r.fwd_i);
  const Matrix<T> dq_x = gx.q;
  const Matrix<T> dk_x = gx.k_own + gi.k_cross;
  const Matrix<T> dv_x = gx.v_own + gi.v_cross;
  const Matrix<T> dq_i = gi.q;
  const Matrix<T> dk_i = gi.k_own + gx.k_cross;
  const Matrix<T> dv_i = gi.v_own + gx.v_cross;

  CrossDomainGrads<T> g;
  g.proj.q_x.noalias() = z_x.transpose() * dq_x;
  g.proj.k_x.noalias() = z_x.transpose() * dk_x;
  g.proj.v_x.noalias() = z_x.transpose() * dv_x;
  g.proj.q_i.noalias() = z_i.transpose() * dq_i;
  g.proj.k_i.noalias() = z_i.transpose() * dk_i;
  g.proj.v_i.noalias() = z_i.transpose() * dv_i;
  g.z_x.noalias() = dq_x * proj.q_x.transpose();
  g.z_x.noalias() += dk_x * proj.k_x.transpose();
  g.z_x.noalias() += dv_x * proj.v_x.transpose();
  g.z_i.noalias() = dq_i * proj.q_i.transpose();
  g.z_i.noalias() += dk_i * proj.k_i.transpose();
  g.z_i.noalias() += dv_i * proj.v_i.transpose();
  return g;
}

/// Image-branch attention row for one query, averaged over heads: N own-key
/// weights followed by N cross-domain weights (zeros when w = 0).
std::vector<double> image_attention_row(const Matrix<float>& q_x, const Matrix<float>& k_x,
                                        const Matrix<float>& k_i, double w, int heads, int query);

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckInputs {
  Matrix<double> z_x, z_i;
  AttnProjections<double> proj;
  double w = 1.0;
  int heads = 1;
  // Loss = <r_x, attn_x> + <r_i, attn_i>; leave r_i empty to check the image branch alone.
  Matrix<double> r_x, r_i;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::vector<std::pair<std::string, double>> per_parameter;  // name -> max relative error
  CrossDomainGrads<double> analytic;
};

/// Random instance with entries ~ N(0,1) (tokens) and N(0, 1/d) (projections).
GradCheckInputs random_gradcheck_instance(int tokens, int width, int inner, double w, int heads, unsigned long long seed);

/// Analytic gradients vs. central differences: max over all parameters of
/// |analytic - numeric| / max(|analytic|, 1e-8).
GradCheckReport attention_backward_check(const GradCheckInputs& inputs, double epsilon);

// ---------------------------------------------------------------------------
// Benchmark

struct LatencyStats {
  double median_ns = 0.0;
  double p95_ns = 0.0;
  double tokens_per_sec = 0.0;
};

struct BenchReport {
  int tokens = 0;
  int width = 0;
  double w = 0.0;
  int reps = 0;
  LatencyStats explicit_path;
  LatencyStats fused_path;
  double max_abs_diff = 0.0;  // explicit vs fused outputs, both branches
};

BenchReport bench_attention(int tokens, int width, double w, int reps, unsigned long long seed = 0);

}  // namespace ildm::xattn
