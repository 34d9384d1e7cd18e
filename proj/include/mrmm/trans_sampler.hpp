#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mrmm/core_data.hpp"
#include "mrmm/distributions.hpp"
#include "mrmm/partition.hpp"

namespace mrmm {

using Row4 = std::array<double, kNumSyllables>;
using Matrix4 = std::array<Row4, kNumSyllables>;  // [from][to]

struct TransHyperParams {
  double alpha00 = 1.0;
  Row4 lambda00{0.25, 0.25, 0.25, 0.25};
  std::array<double, kNumExogenous> alpha_partition{1.0, 1.0};
  BetaPrior beta_pi;
  GammaPrior gamma_alpha_fixed;
  GammaPrior gamma_alpha_rand;

  void validate() const;
};

// lambda00 from the overall syllable frequencies (first syllables included)
// and alpha_partition calibrated so that the prior P(k_j = 1) is 1/2.
TransHyperParams default_trans_hyper(const SequenceDataset& ds, std::vector<std::string>* warnings = nullptr);

struct TransDims {
  std::array<int, kNumExogenous> levels{2, 3};
  int n_mice = 1;
};

struct TransModelState {
  std::array<PartitionState, kNumExogenous> partitions;
  std::array<std::vector<double>, kNumExogenous> mu;
  Matrix4 lambda0{};
  std::vector<Matrix4> lambda_fixed;  // index h1 * k2 + h2
  std::vector<Matrix4> lambda_rand;   // per mouse
  std::vector<Row4> pi0;              // per mouse, per preceding syllable
  std::vector<std::uint8_t> v;        // per record
  double alpha_fixed = 1.0;
  double alpha_rand = 1.0;
  Matrix4 table_counts{};  // last step-7 table totals, feeds the lambda0 update

  const Matrix4& fixed(int h1, int h2) const { return lambda_fixed[h1 * partitions[1].k + h2]; }
  bool operator==(const TransModelState&) const = default;
};

class TransSampler {
 public:
  TransSampler(std::vector<FlatRecord> records, TransDims dims, TransHyperParams hyper);

  const std::vector<FlatRecord>& records() const { return records_; }
  void replace_records(std::vector<FlatRecord> records);
  const TransDims& dims() const { return dims_; }
  const TransHyperParams& hyper() const { return hyper_; }

  TransModelState init(RngStream& rng, std::vector<std::string>* warnings = nullptr) const;

  void step_partition_labels(TransModelState& s, RngStream& rng) const;      // 1
  void step_mu(TransModelState& s, RngStream& rng) const;                    // 2
  void step_v(TransModelState& s, RngStream& rng) const;                     // 3
  void step_pi(TransModelState& s, RngStream& rng) const;                    // 4
  void step_lambda_rand(TransModelState& s, RngStream& rng) const;           // 5
  void step_lambda_fixed(TransModelState& s, RngStream& rng) const;          // 6
  void step_auxiliary_and_concentrations(TransModelState& s, RngStream& rng) const;  // 7-8
  void step_lambda0(TransModelState& s, RngStream& rng) const;               // 9
  void sweep(TransModelState& s, RngStream& rng) const;

  // Collapsed log marginal of the v = 0 records for the given labels
  // (lambda_fixed integrated out), the quantity driving step 1.
  double collapsed_log_marginal(const TransModelState& s, const std::array<std::vector<int>, kNumExogenous>& z) const;
  double log_likelihood(const TransModelState& s) const;
  // Random effects integrated out: pi0 = a / (a + b) mixing lambda_fixed and lambda0.
  // One matrix per (x1, x2), index x1 * d2 + x2.
  std::vector<Matrix4> population_matrices(const TransModelState& s) const;
  double population_pi0() const { return hyper_.beta_pi.a / (hyper_.beta_pi.a + hyper_.beta_pi.b); }

  // Throws DomainError when any invariant is broken.
  void check_invariants(const TransModelState& s, double tol = 1e-10) const;

 private:
  using Counts4 = std::array<std::array<std::int64_t, kNumSyllables>, kNumSyllables>;
  std::vector<Counts4> fixed_counts(const TransModelState& s) const;  // per cluster pair, v = 0
  std::vector<Counts4> random_counts(const TransModelState& s) const;  // per mouse, v = 1

  std::vector<FlatRecord> records_;
  TransDims dims_;
  TransHyperParams hyper_;
};

}  // namespace mrmm
