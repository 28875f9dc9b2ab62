#include <algorithm>
#include <cmath>

#include "ildm/codec.hpp"
#include "ildm/error.hpp"

namespace ildm::codec {

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("latent vectors differ in length", "latents");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double mean_kernel(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b, double inv) {
  double s = 0.0;
  for (const auto& x : a) {
    for (const auto& y : b) s += std::exp(-squared_distance(x, y) * inv);
  }
  return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

double latent_mmd(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                  double bandwidth) {
  if (!(bandwidth > 0.0)) throw ConfigError("kernel bandwidth must be positive", "bandwidth");
  if (a.empty() || b.empty()) throw ContractError("MMD needs two nonempty sets", "latents");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  // Both cross orders are summed so swapping the arguments gives the same bits.
  const double kab = mean_kernel(a, b, inv);
  const double kba = mean_kernel(b, a, inv);
  const double kaa = mean_kernel(a, a, inv);
  const double kbb = mean_kernel(b, b, inv);
  return (kaa + kbb) - (kab + kba);
}

double median_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  std::vector<const std::vector<double>*> pool;
  for (const auto& x : a) pool.push_back(&x);
  for (const auto& x : b) pool.push_back(&x);
  std::vector<double> d;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(std::sqrt(squared_distance(*pool[i], *pool[j])));
  }
  if (d.empty()) throw ContractError("median distance needs at least two points", "latents");
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

}  // namespace ildm::codec
