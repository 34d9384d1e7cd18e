#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mrmm/core_data.hpp"
#include "mrmm/distributions.hpp"
#include "mrmm/partition.hpp"

namespace mrmm {

// Genotype, context, preceding syllable.
inline constexpr int kNumIsiCovariates = 3;

struct IsiHyperParams {
  double alpha00 = 1.0;
  std::vector<double> lambda00;  // empty: set from the k-means proportions by init()
  BetaPrior beta_pi;
  GammaPrior shape_prior;       // alpha_k
  GammaPrior rate_prior;        // beta_k
  GammaPrior conc_fixed_prior;  // alpha_isi,0
  GammaPrior conc_rand_prior;   // alpha_isi^(0)
  // Partition prior concentrations; only the corrected split/merge uses them.
  std::array<double, kNumIsiCovariates> alpha_partition{1.0, 1.0, 1.0};
  double fp_tolerance = 1e-8;
  int fp_max_iters = 50;

  void validate(int K) const;
};

// All-ones defaults with alpha_partition calibrated to prior P(k_r = 1) = 1/2.
IsiHyperParams default_isi_hyper(const std::array<int, kNumIsiCovariates>& levels = {2, 3, kNumSyllables},
                                 std::vector<std::string>* warnings = nullptr);

// Switches between the literal update rules and exact alternatives that
// leave the model posterior invariant.
struct IsiSamplerOptions {
  bool corrected_partition_mh = false;  // Hastings ratio and partition prior in split/merge
  bool exact_concentrations = false;    // auxiliary-table updates instead of the large-n approximation
  bool exact_shape_update = false;      // MH correction on top of the gamma-shape approximation
  bool tied_coefficients = false;       // one pi per mouse shared by all components

  static IsiSamplerOptions exact() { return {true, true, true, true}; }
  bool operator==(const IsiSamplerOptions&) const = default;
};

struct IsiDims {
  std::array<int, kNumIsiCovariates> levels{2, 3, kNumSyllables};
  int n_mice = 1;
};

struct IsiModelState {
  int K = 1;
  std::vector<GammaParams> components;
  std::array<PartitionState, kNumIsiCovariates> partitions;
  std::vector<double> lambda0;
  std::vector<std::vector<double>> lambda_fixed;  // index (g1 * k2 + g2) * k3 + g3
  std::vector<std::vector<double>> lambda_rand;   // per mouse
  std::vector<std::vector<double>> pi0;           // per mouse, per component
  std::vector<int> z;                             // per record
  std::vector<std::uint8_t> v;                    // per record
  double alpha_fixed = 1.0;
  double alpha_rand = 1.0;
  std::vector<double> table_counts;  // tables from the concentration step, feeds lambda0

  int triple_index(int g1, int g2, int g3) const {
    return (g1 * partitions[1].k + g2) * partitions[2].k + g3;
  }
  int n_triples() const { return partitions[0].k * partitions[1].k * partitions[2].k; }
  bool operator==(const IsiModelState&) const = default;
};

struct KMeansResult {
  std::vector<int> labels;       // clusters ordered by increasing center
  std::vector<double> centers;
  int iterations = 0;
  double inertia = 0.0;  // within-cluster sum of squares
};

// One-dimensional k-means with k-means++ seeding; the best of `restarts`
// seedings by inertia is kept.
KMeansResult kmeans_1d(const std::vector<double>& x, int K, RngStream& rng, int max_iters = 100, int restarts = 10);

struct ShapeApproximation {
  double shape = 1.0;  // A
  double rate = 1.0;   // B
  int iterations = 0;
  bool converged = false;
};

// Gamma(A, B) approximation to p(alpha | mu, x) for x_i ~ Ga(alpha, alpha / mu)
// and alpha ~ Ga(prior), from n, S = sum x, R = sum log x.
ShapeApproximation approximate_shape_conditional(double n, double S, double R, double mu, const GammaPrior& prior,
                                                 double tolerance = 1e-8, int max_iters = 50);
// Unnormalized log of that full conditional.
double shape_log_conditional(double alpha, double n, double S, double R, double mu, const GammaPrior& prior);
// Conjugate law of the rate given the shape: Ga(a + alpha n, b + S).
GammaParams rate_conditional(double alpha, double n, double S, const GammaPrior& prior);

class IsiSampler {
 public:
  IsiSampler(std::vector<FlatRecord> records, IsiDims dims, int K, IsiHyperParams hyper,
             IsiSamplerOptions options = {});

  const std::vector<FlatRecord>& records() const { return records_; }
  void replace_records(std::vector<FlatRecord> records);
  const IsiDims& dims() const { return dims_; }
  int K() const { return K_; }
  const IsiHyperParams& hyper() const { return hyper_; }
  const IsiSamplerOptions& options() const { return options_; }

  // Fills hyper().lambda00 from the k-means proportions when it is empty.
  IsiModelState init(RngStream& rng, std::vector<std::string>* warnings = nullptr);

  void step_z(IsiModelState& s, RngStream& rng) const;                 // 1
  void step_v(IsiModelState& s, RngStream& rng) const;                 // 2
  void step_pi(IsiModelState& s, RngStream& rng) const;                // 3
  void step_lambda_rand(IsiModelState& s, RngStream& rng) const;       // 4
  void step_lambda_fixed(IsiModelState& s, RngStream& rng) const;      // 5
  void step_concentrations(IsiModelState& s, RngStream& rng) const;    // 6
  void step_lambda0(IsiModelState& s, RngStream& rng) const;           // 7
  void step_gamma_params(IsiModelState& s, RngStream& rng, std::vector<std::string>* warnings = nullptr) const;  // 8
  // One split or merge proposal for covariate r. Returns true on acceptance.
  // lambda_fixed is left stale; step_partitions refreshes it.
  bool propose_split_merge(IsiModelState& s, int r, RngStream& rng) const;
  void step_partitions(IsiModelState& s, RngStream& rng) const;        // 9
  void sweep(IsiModelState& s, RngStream& rng, std::vector<std::string>* warnings = nullptr) const;

  // Collapsed log marginal of the v = 0 component labels under the given
  // level partitions, lambda_fixed integrated out.
  double collapsed_log_marginal(const IsiModelState& s,
                                const std::array<std::vector<int>, kNumIsiCovariates>& z) const;

  // Mixture weights P(k) for a record (normalized).
  std::vector<double> mixture_weights(const IsiModelState& s, int mouse, int x1, int x2, int prev) const;
  double mixture_log_density(const IsiModelState& s, double tau_tilde, int mouse, int x1, int x2, int prev) const;
  // Random effects integrated out: pi0 = a / (a + b).
  std::vector<double> population_weights(const IsiModelState& s, int x1, int x2, int prev) const;
  double population_log_density(const IsiModelState& s, double tau_tilde, int x1, int x2, int prev) const;
  double population_pi0() const { return hyper_.beta_pi.a / (hyper_.beta_pi.a + hyper_.beta_pi.b); }

  // Per-record mixture log densities, in record order.
  void record_log_densities(const IsiModelState& s, std::vector<double>& out) const;
  double log_likelihood(const IsiModelState& s) const;

  void check_invariants(const IsiModelState& s, double tol = 1e-10) const;

 private:
  int level_of(const FlatRecord& r, int cov) const;
  std::vector<double> fixed_counts(const IsiModelState& s) const;  // [triple * K + k], v = 0
  std::vector<double> random_counts(const IsiModelState& s) const;  // [mouse * K + k], v = 1
  std::vector<double> level_counts(const IsiModelState& s) const;  // [((w1 * d2 + w2) * d3 + w3) * K + k], v = 0
  double pooled_log_marginal(const IsiModelState& s, const std::vector<double>& level,
                             const std::array<std::vector<int>, kNumIsiCovariates>& z) const;
  void sample_gamma_component(IsiModelState& s, int k, double n, double S, double R, RngStream& rng,
                              std::vector<std::string>* warnings) const;

  std::vector<FlatRecord> records_;
  std::vector<double> log_tau_tilde_;  // log of log1p(tau), per record
  IsiDims dims_;
  int K_;
  IsiHyperParams hyper_;
  IsiSamplerOptions options_;
};

}  // namespace mrmm
