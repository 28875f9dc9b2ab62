#include "ildm/xattn.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

namespace ildm::xattn {

AttnWeightSchedule AttnWeightSchedule::drop(std::set<int> layers, double tau) {
  for (int l : layers) {
    if (l < 1) throw ConfigError("block indices start at 1", "layers");
  }
  AttnWeightSchedule s;
  s.kind_ = ScheduleKind::Drop;
  s.layers_ = std::move(layers);
  s.tau_ = tau;
  return s;
}

AttnWeightSchedule AttnWeightSchedule::gaussian(double alpha, double tau, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian schedule needs sigma > 0", "sigma");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("gaussian schedule needs alpha in (0,1]", "alpha");
  AttnWeightSchedule s;
  s.kind_ = ScheduleKind::Gaussian;
  s.alpha_ = alpha;
  s.tau_ = tau;
  s.sigma_ = sigma;
  return s;
}

AttnWeightSchedule AttnWeightSchedule::full() {
  AttnWeightSchedule s;
  s.kind_ = ScheduleKind::Full;
  return s;
}

AttnWeightSchedule AttnWeightSchedule::off() {
  AttnWeightSchedule s;
  s.kind_ = ScheduleKind::Off;
  return s;
}

double AttnWeightSchedule::eval(int block, double t) const {
  if (block < 1) throw ContractError("block index must be >= 1", "block");
  switch (kind_) {
    case ScheduleKind::Drop:
      return (layers_.count(block) != 0 && t <= tau_) ? 1.0 : 0.0;
    case ScheduleKind::Gaussian: {
      const double d = t - tau_;
      return alpha_ * std::exp(-(d * d) / (sigma_ * sigma_));
    }
    case ScheduleKind::Full:
      return 1.0;
    case ScheduleKind::Off:
      return 0.0;
  }
  return 0.0;
}

std::string AttnWeightSchedule::describe() const {
  std::ostringstream os;
  os << to_string(kind_);
  if (kind_ == ScheduleKind::Drop) {
    os << "(tau=" << tau_ << ",layers=";
    bool first = true;
    for (int l : layers_) {
      os << (first ? "" : ",") << l;
      first = false;
    }
    os << ")";
  } else if (kind_ == ScheduleKind::Gaussian) {
    os << "(alpha=" << alpha_ << ",tau=" << tau_ << ",sigma=" << sigma_ << ")";
  }
  return os.str();
}

double eval_weight(const AttnWeightSchedule& schedule, int block, double t) { return schedule.eval(block, t); }

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "drop") return ScheduleKind::Drop;
  if (name == "gauss" || name == "gaussian") return ScheduleKind::Gaussian;
  if (name == "full") return ScheduleKind::Full;
  if (name == "off") return ScheduleKind::Off;
  throw ConfigError("unknown schedule '" + name + "' (expected drop|gauss|off|full)", "schedule");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Drop: return "drop";
    case ScheduleKind::Gaussian: return "gauss";
    case ScheduleKind::Full: return "full";
    case ScheduleKind::Off: return "off";
  }
  return "unknown";
}

AttnPath parse_attn_path(const std::string& name) {
  if (name == "explicit") return AttnPath::Explicit;
  if (name == "fused") return AttnPath::Fused;
  throw ConfigError("unknown attention path '" + name + "' (expected explicit|fused)", "attn-path");
}

std::vector<double> image_attention_row(const Matrix<float>& q_x, const Matrix<float>& k_x, const Matrix<float>& k_i,
                                        double w, int heads, int query) {
  if (query < 0 || query >= q_x.rows()) throw ContractError("query position out of range", "query_position");
  const Eigen::Index n_own = k_x.rows();
  const Eigen::Index n_cross = k_i.rows();
  std::vector<double> row(static_cast<std::size_t>(n_own + n_cross), 0.0);
  const Matrix<float> q = q_x.row(query);
  const Matrix<float> v_own = Matrix<float>::Zero(n_own, heads);
  const Matrix<float> v_cross = Matrix<float>::Zero(n_cross, heads);
  const AttentionForward<float> fwd = multihead_attention<float>(q, k_x, v_own, &k_i, &v_cross, w, heads);
  for (const auto& h : fwd.heads) {
    for (Eigen::Index c = 0; c < h.probs.cols(); ++c) row[static_cast<std::size_t>(c)] += h.probs(0, c) / heads;
  }
  return row;
}

// ---------------------------------------------------------------------------

namespace {

double gradcheck_loss(const GradCheckInputs& in) {
  const auto r = cross_domain_attention<double>(in.z_x, in.z_i, in.proj, in.w, in.heads);
  double loss = (r.attn_x.array() * in.r_x.array()).sum();
  if (in.r_i.size() > 0) loss += (r.attn_i.array() * in.r_i.array()).sum();
  return loss;
}

Matrix<double> randn_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

GradCheckInputs random_gradcheck_instance(int tokens, int width, int inner, double w, int heads,
                                          unsigned long long seed) {
  std::mt19937_64 rng(seed);
  GradCheckInputs in;
  in.w = w;
  in.heads = heads;
  in.z_x = randn_matrix(tokens, width, 1.0, rng);
  in.z_i = randn_matrix(tokens, width, 1.0, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  for (Matrix<double>* p : {&in.proj.q_x, &in.proj.k_x, &in.proj.v_x, &in.proj.q_i, &in.proj.k_i, &in.proj.v_i}) {
    *p = randn_matrix(width, inner, s, rng);
  }
  in.r_x = randn_matrix(tokens, inner, 1.0, rng);
  in.r_i = randn_matrix(tokens, inner, 1.0, rng);
  return in;
}

GradCheckReport attention_backward_check(const GradCheckInputs& inputs, double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw ConfigError("epsilon must lie in [1e-6, 1e-3]", "epsilon");

  GradCheckReport report;
  const auto fwd = cross_domain_attention<double>(inputs.z_x, inputs.z_i, inputs.proj, inputs.w, inputs.heads);
  const Matrix<double> d_i =
      inputs.r_i.size() > 0 ? inputs.r_i : Matrix<double>::Zero(fwd.attn_i.rows(), fwd.attn_i.cols());
  report.analytic =
      cross_domain_attention_backward<double>(inputs.z_x, inputs.z_i, inputs.proj, fwd, inputs.r_x, d_i);

  GradCheckInputs probe = inputs;
  struct Target {
    const char* name;
    Matrix<double>* param;
    const Matrix<double>* grad;
  };
  const std::vector<Target> targets = {
      {"z_x", &probe.z_x, &report.analytic.z_x},           {"z_i", &probe.z_i, &report.analytic.z_i},
      {"Q_x", &probe.proj.q_x, &report.analytic.proj.q_x}, {"K_x", &probe.proj.k_x, &report.analytic.proj.k_x},
      {"V_x", &probe.proj.v_x, &report.analytic.proj.v_x}, {"Q_i", &probe.proj.q_i, &report.analytic.proj.q_i},
      {"K_i", &probe.proj.k_i, &report.analytic.proj.k_i}, {"V_i", &probe.proj.v_i, &report.analytic.proj.v_i},
  };
  for (const auto& target : targets) {
    double worst = 0.0;
    for (Eigen::Index k = 0; k < target.param->size(); ++k) {
      const double analytic = target.grad->data()[k];
      if (!std::isfinite(analytic)) throw NumericError("non-finite analytic gradient", target.name);
      double& x = target.param->data()[k];
      const double saved = x;
      x = saved + epsilon;
      const double plus = gradcheck_loss(probe);
      x = saved - epsilon;
      const double minus = gradcheck_loss(probe);
      x = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      if (!std::isfinite(numeric)) throw NumericError("non-finite numeric gradient", target.name);
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
      worst = std::max(worst, rel);
    }
    report.per_parameter.emplace_back(target.name, worst);
    if (report.worst_parameter.empty() || worst > report.max_rel_error) {
      report.max_rel_error = worst;
      report.worst_parameter = target.name;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

LatencyStats summarize(std::vector<double> ns, int tokens) {
  std::sort(ns.begin(), ns.end());
  LatencyStats s;
  s.median_ns = ns[ns.size() / 2];
  s.p95_ns = ns[std::min(ns.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(ns.size())))];
  s.tokens_per_sec = s.median_ns > 0.0 ? tokens / (s.median_ns * 1e-9) : 0.0;
  return s;
}

}  // namespace

BenchReport bench_attention(int tokens, int width, double w, int reps, unsigned long long seed) {
  if (tokens < 1 || width < 1 || reps < 1) throw ConfigError("bench_attention needs positive N, d and reps", "bench");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto randm = [&](int r, int c, float s) {
    Matrix<float> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * s;
    return m;
  };
  const Matrix<float> z_x = randm(tokens, width, 1.0f);
  const Matrix<float> z_i = randm(tokens, width, 1.0f);
  AttnProjections<float> proj;
  const float s = 1.0f / std::sqrt(static_cast<float>(width));
  for (Matrix<float>* p : {&proj.q_x, &proj.k_x, &proj.v_x, &proj.q_i, &proj.k_i, &proj.v_i}) *p = randm(width, width, s);

  BenchReport report;
  report.tokens = tokens;
  report.width = width;
  report.w = w;
  report.reps = reps;

  const auto ref_explicit = cross_domain_attention<float>(z_x, z_i, proj, w, 1, AttnPath::Explicit);
  const auto ref_fused = cross_domain_attention<float>(z_x, z_i, proj, w, 1, AttnPath::Fused);
  report.max_abs_diff = std::max((ref_explicit.attn_x - ref_fused.attn_x).cwiseAbs().maxCoeff(),
                                 (ref_explicit.attn_i - ref_fused.attn_i).cwiseAbs().maxCoeff());

  auto time_path = [&](AttnPath path) {
    std::vector<double> ns;
    ns.reserve(static_cast<std::size_t>(reps));
    float sink = 0.0f;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = cross_domain_attention<float>(z_x, z_i, proj, w, 1, path);
      const auto t1 = std::chrono::steady_clock::now();
      sink += out.attn_x(0, 0);
      ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    if (!std::isfinite(sink)) ns.front() = 0.0;
    return summarize(std::move(ns), tokens);
  };
  report.explicit_path = time_path(AttnPath::Explicit);
  report.fused_path = time_path(AttnPath::Fused);
  return report;
}

}  // namespace ildm::xattn
