#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ildm/codec.hpp"
#include "ildm/nn.hpp"
#include "ildm/scenegen.hpp"

namespace ildm::verify {

// ---------------------------------------------------------------------------
// Discrete graphical model u -> (x, c, i_1, .., i_k). All tables are
// row-stochastic: table[u][value].

using Table = std::vector<std::vector<double>>;

struct DiscretePGM {
  std::vector<double> p_u;
  Table p_x;               // p(x|u)
  Table p_c;               // p(c|u)
  std::vector<Table> p_i;  // p(i_k|u)

  int card_u() const { return static_cast<int>(p_u.size()); }
  int card_x() const { return p_x.empty() ? 0 : static_cast<int>(p_x[0].size()); }
  int card_c() const { return p_c.empty() ? 0 : static_cast<int>(p_c[0].size()); }
  int card_i(int k) const { return static_cast<int>(p_i.at(static_cast<std::size_t>(k))[0].size()); }
};

/// Throws ContractError unless every row is a distribution (sum 1 within 1e-12).
void validate(const DiscretePGM& pgm);

/// Rows drawn from Dirichlet(1); cardinalities uniform in [2, max_card].
DiscretePGM random_pgm(Rng& rng, int max_card, int intrinsics = 1);

/// Partial assignment; unset variables are marginalized.
struct Evidence {
  std::optional<int> x, c;
  std::vector<std::optional<int>> i;
};

/// p(evidence) and p(u | evidence). The posterior is empty when p(evidence) = 0.
struct Posterior {
  double evidence = 0.0;
  std::vector<double> p_u;
};
Posterior posterior(const DiscretePGM& pgm, const Evidence& e);

/// KL(p || q) in nats, 0 log 0 = 0; throws AbsoluteContinuityError when q = 0 < p.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct EventCounts {
  int events = 0;     // (x, c) pairs evaluated
  int skipped = 0;    // zero-probability conditioning events
  int divergent = 0;  // absolute-continuity failures
};

struct EquivalenceReport {
  double max_discrepancy = 0.0;
  EventCounts counts;
};

/// max over (x,c) of |sum_u p(u|c) log p(x|u) - (log p(x|c) - KL(p(u|c) || p(u|x,c)))|
EquivalenceReport verify_equivalence(const DiscretePGM& pgm);

struct InequalityReport {
  double min_slack = 0.0;           // per (x,c): KL(u|c || u|x,c) - E_{p(i|c)} KL(u|i,c || u|x,i,c)
  double min_slack_averaged = 0.0;  // per c, both sides averaged over p(x|c)
  double max_gap_error = 0.0;       // |slack - KL(p(i|c) || p(i|x,c))|
  double max_lhs = 0.0;
  EventCounts counts;
};

/// Uses the first intrinsic of the model.
InequalityReport verify_inequality(const DiscretePGM& pgm);

struct ChainReport {
  double min_slack_first = 0.0;   // KL(u|c||u|x,c) - E KL(.|i1)
  double min_slack_second = 0.0;  // E KL(.|i1) - E KL(.|i1,i2)
  double max_second_gap = 0.0;    // largest E KL(.|i1) - E KL(.|i1,i2)
  EventCounts counts;
};

/// Needs a model with two intrinsics.
ChainReport verify_monotone_chain(const DiscretePGM& pgm);

struct SweepReport {
  int instances = 0;
  double max_equivalence = 0.0;
  double min_inequality_slack = 0.0;
  double min_inequality_slack_averaged = 0.0;
  double min_chain_slack = 0.0;
  int equivalence_violations = 0;
  int inequality_violations = 0;
  int chain_violations = 0;
  EventCounts counts;
  bool passed(double tol = 1e-10) const;
};

SweepReport sweep(int instances, int max_card, std::uint64_t seed, double tol = 1e-10);

// ---------------------------------------------------------------------------
// Consistency metrics

/// sqrt(mean((a - b)^2)) over all entries.
double depth_rmse(const Tensor& a, const Tensor& b);
/// Mean angle in degrees between per-pixel normals of two [3,H,W] fields
/// (both re-normalized; pixels where either is zero are skipped).
double mean_angular_error(const Tensor& a, const Tensor& b);

struct EstimatorConfig {
  std::array<int, 3> widths = {24, 48, 64};
  int groups = 8;
  int resolution = 64;
};

struct EstimatorTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double validation_fraction = 0.125;
};

/// Image -> (normalized depth, unit normals) regressor.
class ConsistencyEstimator {
 public:
  ConsistencyEstimator(const EstimatorConfig& config, std::uint64_t seed);
  ConsistencyEstimator(const ConsistencyEstimator&) = delete;
  ConsistencyEstimator& operator=(const ConsistencyEstimator&) = delete;
  ConsistencyEstimator(ConsistencyEstimator&&) = default;
  ConsistencyEstimator& operator=(ConsistencyEstimator&&) = default;

  /// [B,3,H,W] -> [B,4,H,W]: depth then normal xyz.
  ag::Var forward(const ag::Var& images) const;

  struct Estimate {
    Tensor depth;   // [H,W]
    Tensor normal;  // [3,H,W] unit
  };
  Estimate estimate(const Tensor& image) const;

  bool trained() const noexcept { return validation_depth_rmse_ >= 0.0; }
  double validation_depth_rmse() const noexcept { return validation_depth_rmse_; }
  double validation_angular_error() const noexcept { return validation_angular_error_; }

  nn::ParamStore& params() noexcept { return store_; }

  /// Trains on the dataset (last fraction held out) and records validation errors.
  std::vector<double> train(const scene::Dataset& data, const EstimatorTrainConfig& config);
  /// Mean depth RMSE / angular error against ground truth over a dataset.
  std::pair<double, double> evaluate(const scene::Dataset& data, int begin, int end) const;

  void save(const std::filesystem::path& path) const;
  static ConsistencyEstimator load(const std::filesystem::path& path);

 private:
  EstimatorConfig config_;
  nn::ParamStore store_;
  double validation_depth_rmse_ = -1.0;
  double validation_angular_error_ = -1.0;

  nn::Conv2d in_, down1_, down2_, up2_, up1_, out_;
  nn::ResBlock res0_, res1_, res2_, dec1_, dec0_;
  nn::GroupNorm norm_out_;
};

struct ConsistencyMetrics {
  double depth_rmse = 0.0;
  double angular_error_deg = 0.0;
};

/// Compares the estimator's reading of `image` with the co-generated stack.
/// Depth is compared in normalized space after inverting the colormap.
ConsistencyMetrics consistency_metrics(const Tensor& image, const codec::IntrinsicStack& stack,
                                       const ConsistencyEstimator& estimator);

}  // namespace ildm::verify
