#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mrmm {

inline constexpr double kEulerGamma = 0.57721566490153286061;

// Independent, reproducible random stream. One per chain; never shared
// between threads.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on the open interval (0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  // Engine state as text; restore() reproduces the stream exactly.
  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const RngStream& o) const { return engine_ == o.engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

// Rate parameterization: density proportional to x^(shape-1) exp(-rate x).
struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;
  bool operator==(const GammaParams&) const = default;
};

struct BetaPrior {
  double a = 1.0;
  double b = 1.0;
};

struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;
};

double sample_normal(RngStream& rng);
double sample_gamma(RngStream& rng, double shape, double rate);
// log of a Gamma(shape, 1) draw; finite even when the draw underflows.
double sample_log_gamma(RngStream& rng, double shape);
double sample_beta(RngStream& rng, double a, double b);
bool sample_bernoulli(RngStream& rng, double p);
// Index drawn proportionally to non-negative weights (need not be normalized).
std::size_t sample_categorical(RngStream& rng, std::span<const double> weights);
// Same, from unnormalized log weights; stabilized by max subtraction.
std::size_t sample_categorical_log(RngStream& rng, std::span<const double> log_weights);
std::vector<double> sample_dirichlet(RngStream& rng, std::span<const double> concentration);
void sample_dirichlet_into(RngStream& rng, std::span<const double> concentration, std::span<double> out);
// Number of occupied tables after n customers with concentration a
// (sum of Bernoulli(a / (l - 1 + a)), l = 1..n).
std::int64_t sample_crt(RngStream& rng, std::int64_t n, double a);

double log_gamma_fn(double x);
double digamma(double x);
double trigamma(double x);
double log_gamma_density(double x, const GammaParams& p);
double log_beta_density(double x, double a, double b);
// sum_i lgamma(a_i) - lgamma(sum_i a_i)
double log_multivariate_beta(std::span<const double> a);
double log_sum_exp(std::span<const double> v);

}  // namespace mrmm
