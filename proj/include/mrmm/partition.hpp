#pragma once

#include <vector>

namespace mrmm {

// Clustering of one covariate's levels. Labels are 0-based and contiguous
// in first-appearance order after relabel().
struct PartitionState {
  std::vector<int> z;
  int k = 0;

  static PartitionState singletons(int d);
  int d() const { return static_cast<int>(z.size()); }
  void relabel();
  std::vector<int> sizes() const;
  // Levels carrying label h, in level order.
  std::vector<int> members(int h) const;
  bool operator==(const PartitionState&) const = default;
};

// Labeled-assignment probability of z under labels ~ Cat(mu), mu ~ Dir(alpha, ..., alpha)
// of length d = z.size().
double log_label_prior(const std::vector<int>& z, double alpha);
// Probability of the unlabeled partition induced by z (sums to 1 over all set partitions).
double log_partition_prior(const PartitionState& p, double alpha);

// Prior probability that every level shares one label, by enumerating all d^d assignments.
double prob_single_cluster(int d, double alpha);

struct ConcentrationCalibration {
  double alpha = 1.0;
  double achieved = 1.0;  // prob_single_cluster(d, alpha)
  bool attained = true;
};

// Solves prob_single_cluster(d, alpha) = target by bisection on log alpha in
// [1e-8, 1e8] to relative tolerance 1e-8. For d = 2 the probability stays
// above 1/2 for every finite alpha, so the upper bracket is returned with
// attained = false.
ConcentrationCalibration calibrate_partition_concentration(int d, double target = 0.5);

// All set partitions of d elements as canonical (first-appearance) label vectors.
std::vector<std::vector<int>> enumerate_set_partitions(int d);
// Canonical form of an arbitrary label vector.
std::vector<int> canonical_labels(const std::vector<int>& z);

}  // namespace mrmm
