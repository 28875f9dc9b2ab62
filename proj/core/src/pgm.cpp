#include <algorithm>
#include <cmath>
#include <limits>

#include "ildm/error.hpp"
#include "ildm/verify.hpp"

namespace ildm::verify {

namespace {

void check_table(const Table& t, int rows, const std::string& name) {
  if (static_cast<int>(t.size()) != rows) throw ContractError("table needs one row per u", name);
  const std::size_t width = t.empty() ? 0 : t[0].size();
  if (width == 0) throw ContractError("table has no columns", name);
  for (const auto& row : t) {
    if (row.size() != width) throw ContractError("ragged table", name);
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) throw ContractError("negative or NaN probability", name);
      s += v;
    }
    if (std::fabs(s - 1.0) > 1e-12) throw ContractError("row does not sum to 1", name);
  }
}

std::vector<double> dirichlet_row(Rng& rng, int n) {
  std::exponential_distribution<double> g(1.0);
  std::vector<double> row(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& v : row) {
    v = g(rng);
    s += v;
  }
  for (auto& v : row) v /= s;
  return row;
}

Table dirichlet_table(Rng& rng, int rows, int cols) {
  Table t;
  for (int r = 0; r < rows; ++r) t.push_back(dirichlet_row(rng, cols));
  return t;
}

Evidence make_evidence(const DiscretePGM& pgm, std::optional<int> x, std::optional<int> c) {
  Evidence e;
  e.x = x;
  e.c = c;
  e.i.assign(pgm.p_i.size(), std::nullopt);
  return e;
}

/// Marginal of intrinsic k given the evidence: p(i_k = v | e) for every v.
std::vector<double> intrinsic_marginal(const DiscretePGM& pgm, const Evidence& e, int k) {
  const Posterior post = posterior(pgm, e);
  std::vector<double> out(static_cast<std::size_t>(pgm.card_i(k)), 0.0);
  if (post.p_u.empty()) return out;
  for (int u = 0; u < pgm.card_u(); ++u) {
    for (int v = 0; v < pgm.card_i(k); ++v) {
      out[static_cast<std::size_t>(v)] += post.p_u[static_cast<std::size_t>(u)] *
                                          pgm.p_i[static_cast<std::size_t>(k)][static_cast<std::size_t>(u)][static_cast<std::size_t>(v)];
    }
  }
  return out;
}

/// E_{p(i_sel | c)} KL(p(u | i_sel, c) || p(u | x, i_sel, c)) over the listed intrinsics.
double expected_conditional_kl(const DiscretePGM& pgm, int x, int c, const std::vector<int>& which) {
  const Posterior pc = posterior(pgm, make_evidence(pgm, std::nullopt, c));
  std::vector<int> values(which.size(), 0);
  double total = 0.0;
  while (true) {
    Evidence ec = make_evidence(pgm, std::nullopt, c);
    Evidence exc = make_evidence(pgm, x, c);
    for (std::size_t k = 0; k < which.size(); ++k) {
      ec.i[static_cast<std::size_t>(which[k])] = values[k];
      exc.i[static_cast<std::size_t>(which[k])] = values[k];
    }
    const Posterior a = posterior(pgm, ec);
    if (a.evidence > 0.0) {
      const Posterior b = posterior(pgm, exc);
      if (b.p_u.empty()) throw AbsoluteContinuityError("p(u|x,i,c) undefined where p(i|c) > 0", "pgm");
      total += (a.evidence / pc.evidence) * kl_divergence(a.p_u, b.p_u);
    }
    std::size_t k = 0;
    for (; k < which.size(); ++k) {
      if (++values[k] < pgm.card_i(which[k])) break;
      values[k] = 0;
    }
    if (k == which.size()) break;
  }
  return total;
}

}  // namespace

void validate(const DiscretePGM& pgm) {
  const int u = pgm.card_u();
  if (u < 1) throw ContractError("p(u) is empty", "p_u");
  double s = 0.0;
  for (double v : pgm.p_u) {
    if (!(v >= 0.0)) throw ContractError("negative or NaN probability", "p_u");
    s += v;
  }
  if (std::fabs(s - 1.0) > 1e-12) throw ContractError("p(u) does not sum to 1", "p_u");
  check_table(pgm.p_x, u, "p_x");
  check_table(pgm.p_c, u, "p_c");
  for (const auto& t : pgm.p_i) check_table(t, u, "p_i");
}

DiscretePGM random_pgm(Rng& rng, int max_card, int intrinsics) {
  if (max_card < 2) throw ConfigError("max cardinality must be >= 2", "max-card");
  std::uniform_int_distribution<int> card(2, max_card);
  DiscretePGM p;
  const int u = card(rng);
  p.p_u = dirichlet_row(rng, u);
  p.p_x = dirichlet_table(rng, u, card(rng));
  p.p_c = dirichlet_table(rng, u, card(rng));
  for (int k = 0; k < intrinsics; ++k) p.p_i.push_back(dirichlet_table(rng, u, card(rng)));
  return p;
}

Posterior posterior(const DiscretePGM& pgm, const Evidence& e) {
  if (e.i.size() > pgm.p_i.size()) throw ContractError("evidence names more intrinsics than the model has", "evidence");
  const int cu = pgm.card_u();
  std::vector<double> w(static_cast<std::size_t>(cu));
  double total = 0.0;
  for (int u = 0; u < cu; ++u) {
    const auto uu = static_cast<std::size_t>(u);
    double p = pgm.p_u[uu];
    if (e.x) p *= pgm.p_x[uu].at(static_cast<std::size_t>(*e.x));
    if (e.c) p *= pgm.p_c[uu].at(static_cast<std::size_t>(*e.c));
    for (std::size_t k = 0; k < e.i.size(); ++k) {
      if (e.i[k]) p *= pgm.p_i[k][uu].at(static_cast<std::size_t>(*e.i[k]));
    }
    w[uu] = p;
    total += p;
  }
  Posterior out;
  out.evidence = total;
  if (total > 0.0) {
    for (auto& v : w) v /= total;
    out.p_u = std::move(w);
  }
  return out;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ContractError("KL arguments differ in support size", "kl");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] == 0.0) throw AbsoluteContinuityError("KL(p||q) undefined: q = 0 where p > 0", "kl");
    s += p[k] * std::log(p[k] / q[k]);
  }
  return s;
}

EquivalenceReport verify_equivalence(const DiscretePGM& pgm) {
  validate(pgm);
  EquivalenceReport r;
  for (int c = 0; c < pgm.card_c(); ++c) {
    const Posterior pc = posterior(pgm, make_evidence(pgm, std::nullopt, c));
    for (int x = 0; x < pgm.card_x(); ++x) {
      const Posterior pxc = posterior(pgm, make_evidence(pgm, x, c));
      if (pc.evidence <= 0.0 || pxc.evidence <= 0.0) {
        ++r.counts.skipped;
        continue;
      }
      try {
        double lhs = 0.0;
        for (int u = 0; u < pgm.card_u(); ++u) {
          const double w = pc.p_u[static_cast<std::size_t>(u)];
          if (w == 0.0) continue;
          const double px = pgm.p_x[static_cast<std::size_t>(u)][static_cast<std::size_t>(x)];
          if (px == 0.0) throw AbsoluteContinuityError("log p(x|u) = -inf on the support of p(u|c)", "pgm");
          lhs += w * std::log(px);
        }
        const double rhs = std::log(pxc.evidence / pc.evidence) - kl_divergence(pc.p_u, pxc.p_u);
        r.max_discrepancy = std::max(r.max_discrepancy, std::fabs(lhs - rhs));
        ++r.counts.events;
      } catch (const AbsoluteContinuityError&) {
        ++r.counts.divergent;
      }
    }
  }
  return r;
}

InequalityReport verify_inequality(const DiscretePGM& pgm) {
  validate(pgm);
  if (pgm.p_i.empty()) throw ContractError("model has no intrinsic variable", "p_i");
  InequalityReport r;
  r.min_slack = std::numeric_limits<double>::infinity();
  r.min_slack_averaged = std::numeric_limits<double>::infinity();
  for (int c = 0; c < pgm.card_c(); ++c) {
    const Posterior pc = posterior(pgm, make_evidence(pgm, std::nullopt, c));
    if (pc.evidence <= 0.0) {
      r.counts.skipped += pgm.card_x();
      continue;
    }
    double avg_lhs = 0.0, avg_rhs = 0.0;
    bool any = false;
    for (int x = 0; x < pgm.card_x(); ++x) {
      const Evidence exc = make_evidence(pgm, x, c);
      const Posterior pxc = posterior(pgm, exc);
      if (pxc.evidence <= 0.0) {
        ++r.counts.skipped;
        continue;
      }
      try {
        const double lhs = kl_divergence(pc.p_u, pxc.p_u);
        const double rhs = expected_conditional_kl(pgm, x, c, {0});
        const double gap = kl_divergence(intrinsic_marginal(pgm, make_evidence(pgm, std::nullopt, c), 0),
                                         intrinsic_marginal(pgm, exc, 0));
        const double slack = lhs - rhs;
        r.min_slack = std::min(r.min_slack, slack);
        r.max_gap_error = std::max(r.max_gap_error, std::fabs(slack - gap));
        r.max_lhs = std::max(r.max_lhs, lhs);
        const double pxgc = pxc.evidence / pc.evidence;
        avg_lhs += pxgc * lhs;
        avg_rhs += pxgc * rhs;
        any = true;
        ++r.counts.events;
      } catch (const AbsoluteContinuityError&) {
        ++r.counts.divergent;
      }
    }
    if (any) r.min_slack_averaged = std::min(r.min_slack_averaged, avg_lhs - avg_rhs);
  }
  if (r.counts.events == 0) r.min_slack = r.min_slack_averaged = 0.0;
  return r;
}

ChainReport verify_monotone_chain(const DiscretePGM& pgm) {
  validate(pgm);
  if (pgm.p_i.size() < 2) throw ContractError("monotone chain needs two intrinsics", "p_i");
  ChainReport r;
  r.min_slack_first = r.min_slack_second = std::numeric_limits<double>::infinity();
  for (int c = 0; c < pgm.card_c(); ++c) {
    const Posterior pc = posterior(pgm, make_evidence(pgm, std::nullopt, c));
    for (int x = 0; x < pgm.card_x(); ++x) {
      const Posterior pxc = posterior(pgm, make_evidence(pgm, x, c));
      if (pc.evidence <= 0.0 || pxc.evidence <= 0.0) {
        ++r.counts.skipped;
        continue;
      }
      try {
        const double a = kl_divergence(pc.p_u, pxc.p_u);
        const double b = expected_conditional_kl(pgm, x, c, {0});
        const double d = expected_conditional_kl(pgm, x, c, {0, 1});
        r.min_slack_first = std::min(r.min_slack_first, a - b);
        r.min_slack_second = std::min(r.min_slack_second, b - d);
        r.max_second_gap = std::max(r.max_second_gap, b - d);
        ++r.counts.events;
      } catch (const AbsoluteContinuityError&) {
        ++r.counts.divergent;
      }
    }
  }
  if (r.counts.events == 0) r.min_slack_first = r.min_slack_second = 0.0;
  return r;
}

bool SweepReport::passed(double tol) const {
  (void)tol;
  return equivalence_violations == 0 && inequality_violations == 0 && chain_violations == 0;
}

SweepReport sweep(int instances, int max_card, std::uint64_t seed, double tol) {
  if (instances < 1) throw ConfigError("instances must be >= 1", "instances");
  Rng rng(seed);
  SweepReport r;
  r.min_inequality_slack = r.min_inequality_slack_averaged = r.min_chain_slack = std::numeric_limits<double>::infinity();
  for (int k = 0; k < instances; ++k) {
    const DiscretePGM pgm = random_pgm(rng, max_card, 2);
    const auto eq = verify_equivalence(pgm);
    const auto in = verify_inequality(pgm);
    const auto ch = verify_monotone_chain(pgm);
    r.max_equivalence = std::max(r.max_equivalence, eq.max_discrepancy);
    r.min_inequality_slack = std::min(r.min_inequality_slack, in.min_slack);
    r.min_inequality_slack_averaged = std::min(r.min_inequality_slack_averaged, in.min_slack_averaged);
    r.min_chain_slack = std::min({r.min_chain_slack, ch.min_slack_first, ch.min_slack_second});
    if (eq.max_discrepancy >= tol) ++r.equivalence_violations;
    if (in.min_slack < -tol || in.min_slack_averaged < -tol) ++r.inequality_violations;
    if (ch.min_slack_first < -tol || ch.min_slack_second < -tol) ++r.chain_violations;
    r.counts.events += eq.counts.events;
    r.counts.skipped += eq.counts.skipped;
    r.counts.divergent += eq.counts.divergent + in.counts.divergent + ch.counts.divergent;
    ++r.instances;
  }
  return r;
}

}  // namespace ildm::verify
