#include "mrmm/partition.hpp"

#include <algorithm>
#include <cmath>

#include "mrmm/distributions.hpp"
#include "mrmm/errors.hpp"

namespace mrmm {

PartitionState PartitionState::singletons(int d) {
  PartitionState p;
  p.z.resize(d);
  for (int i = 0; i < d; ++i) p.z[i] = i;
  p.k = d;
  return p;
}

void PartitionState::relabel() {
  z = canonical_labels(z);
  k = z.empty() ? 0 : *std::max_element(z.begin(), z.end()) + 1;
}

std::vector<int> PartitionState::sizes() const {
  std::vector<int> n(k, 0);
  for (int h : z) ++n[h];
  return n;
}

std::vector<int> PartitionState::members(int h) const {
  std::vector<int> out;
  for (int l = 0; l < d(); ++l)
    if (z[l] == h) out.push_back(l);
  return out;
}

std::vector<int> canonical_labels(const std::vector<int>& z) {
  std::vector<int> map;
  std::vector<int> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    int lab = z[i];
    if (lab < 0) throw DomainError("negative partition label");
    if (static_cast<std::size_t>(lab) >= map.size()) map.resize(lab + 1, -1);
    if (map[lab] < 0) map[lab] = static_cast<int>(std::count_if(map.begin(), map.end(), [](int m) { return m >= 0; }));
    out[i] = map[lab];
  }
  return out;
}

double log_label_prior(const std::vector<int>& z, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("partition concentration must be positive");
  const int d = static_cast<int>(z.size());
  std::vector<int> n(d, 0);
  for (int h : z) ++n.at(h);
  // Rising factorials as explicit products: stable for very large alpha.
  double lp = 0.0;
  for (int i = 0; i < d; ++i) lp -= std::log(d * alpha + i);
  for (int c : n)
    for (int i = 0; i < c; ++i) lp += std::log(alpha + i);
  return lp;
}

double log_partition_prior(const PartitionState& p, double alpha) {
  // d! / (d - k)! labelings map to the same partition.
  double lp = log_label_prior(p.z, alpha);
  for (int i = 0; i < p.k; ++i) lp += std::log(static_cast<double>(p.d() - i));
  return lp;
}

double prob_single_cluster(int d, double alpha) {
  if (d < 1 || d > 8) throw DomainError("prob_single_cluster supports 1 <= d <= 8");
  std::vector<int> z(d, 0);
  double total = 0.0;
  while (true) {
    if (std::all_of(z.begin(), z.end(), [&](int h) { return h == z[0]; })) total += std::exp(log_label_prior(z, alpha));
    int i = 0;
    while (i < d && ++z[i] == d) z[i++] = 0;
    if (i == d) break;
  }
  return total;
}

ConcentrationCalibration calibrate_partition_concentration(int d, double target) {
  ConcentrationCalibration c;
  if (d <= 1) return c;
  double lo = std::log(1e-8), hi = std::log(1e8);
  // P(k = 1) decreases in alpha.
  if (prob_single_cluster(d, std::exp(hi)) > target) {
    c.alpha = std::exp(hi);
    c.achieved = prob_single_cluster(d, c.alpha);
    c.attained = false;
    return c;
  }
  if (prob_single_cluster(d, std::exp(lo)) < target) {
    c.alpha = std::exp(lo);
    c.achieved = prob_single_cluster(d, c.alpha);
    c.attained = false;
    return c;
  }
  while (hi - lo > 1e-10) {
    double mid = 0.5 * (lo + hi);
    if (prob_single_cluster(d, std::exp(mid)) > target)
      lo = mid;
    else
      hi = mid;
  }
  c.alpha = std::exp(0.5 * (lo + hi));
  c.achieved = prob_single_cluster(d, c.alpha);
  return c;
}

std::vector<std::vector<int>> enumerate_set_partitions(int d) {
  std::vector<std::vector<int>> out;
  if (d <= 0) return out;
  std::vector<int> z(d, 0);
  // Restricted growth strings: z[i] <= 1 + max(z[0..i-1]).
  auto rec = [&](auto&& self, int i, int maxlab) -> void {
    if (i == d) {
      out.push_back(z);
      return;
    }
    for (int h = 0; h <= maxlab + 1; ++h) {
      z[i] = h;
      self(self, i + 1, std::max(maxlab, h));
    }
  };
  z[0] = 0;
  rec(rec, 1, 0);
  return out;
}

}  // namespace mrmm
