#include "mrmm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

constexpr double kTiny = std::numeric_limits<double>::min();

std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t stream_id) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                       0x6d726d6du};
}

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError(std::string(what) + " must be positive and finite");
}

// Marsaglia and Tsang (2000), valid for shape >= 1.
double gamma_mt(RngStream& rng, double shape) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
  auto seq = make_seed_seq(seed, stream_id);
  engine_.seed(seq);
}

double RngStream::uniform() {
  while (true) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_index over an empty range");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  while (true) {
    const std::uint64_t x = engine_();
    if (x < limit) return x % n;
  }
}

std::string RngStream::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void RngStream::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw DomainError("malformed rng state");
}

double sample_normal(RngStream& rng) {
  // Box-Muller, one output per call so the stream carries no hidden cache.
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double sample_log_gamma(RngStream& rng, double shape) {
  require_positive(shape, "gamma shape");
  if (shape >= 1.0) return std::log(gamma_mt(rng, shape));
  // G(shape) = G(shape + 1) * U^(1/shape), kept in log space.
  return std::log(gamma_mt(rng, shape + 1.0)) + std::log(rng.uniform()) / shape;
}

double sample_gamma(RngStream& rng, double shape, double rate) {
  require_positive(shape, "gamma shape");
  require_positive(rate, "gamma rate");
  if (shape >= 1.0) return std::max(gamma_mt(rng, shape) / rate, kTiny);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double x = std::exp(sample_log_gamma(rng, shape)) / rate;
    if (x > 0.0 && std::isfinite(x)) return x;
  }
  return kTiny;
}

double sample_beta(RngStream& rng, double a, double b) {
  require_positive(a, "beta parameter");
  require_positive(b, "beta parameter");
  const double la = sample_log_gamma(rng, a);
  const double lb = sample_log_gamma(rng, b);
  const double x = 1.0 / (1.0 + std::exp(lb - la));
  return std::clamp(x, kTiny, 1.0 - 0x1.0p-53);
}

bool sample_bernoulli(RngStream& rng, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("bernoulli probability outside [0, 1]");
  return rng.uniform() < p;
}

std::size_t sample_categorical(RngStream& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("categorical weight negative or not finite");
    total += w;
  }
  if (!(total > 0.0)) throw DomainError("categorical weights sum to zero");
  const double target = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cum += weights[i];
    last_positive = i;
    if (target < cum) return i;
  }
  return last_positive;
}

std::size_t sample_categorical_log(RngStream& rng, std::span<const double> log_weights) {
  double m = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) m = std::max(m, lw);
  if (!std::isfinite(m)) throw DomainError("categorical log weights are all -inf or not finite");
  // Small fixed buffer for the common case; the samplers use K, d <= 16.
  double buf[16];
  std::vector<double> heap;
  double* w = buf;
  if (log_weights.size() > 16) {
    heap.resize(log_weights.size());
    w = heap.data();
  }
  for (std::size_t i = 0; i < log_weights.size(); ++i) w[i] = std::exp(log_weights[i] - m);
  return sample_categorical(rng, std::span<const double>(w, log_weights.size()));
}

void sample_dirichlet_into(RngStream& rng, std::span<const double> concentration, std::span<double> out) {
  if (concentration.empty() || out.size() != concentration.size()) throw DomainError("dirichlet size mismatch");
  for (double a : concentration)
    if (!(a > 0.0) || !std::isfinite(a)) throw NonPositiveConcentration("dirichlet concentration must be positive");
  if (concentration.size() == 1) {
    out[0] = 1.0;
    return;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < concentration.size(); ++i) {
    out[i] = sample_log_gamma(rng, concentration[i]);
    m = std::max(m, out[i]);
  }
  double total = 0.0;
  for (auto& x : out) {
    x = std::exp(x - m);
    total += x;
  }
  for (auto& x : out) x = std::max(x / total, kTiny);
}

std::vector<double> sample_dirichlet(RngStream& rng, std::span<const double> concentration) {
  std::vector<double> out(concentration.size());
  sample_dirichlet_into(rng, concentration, out);
  return out;
}

std::int64_t sample_crt(RngStream& rng, std::int64_t n, double a) {
  require_positive(a, "table concentration");
  std::int64_t tables = 0;
  for (std::int64_t l = 1; l <= n; ++l)
    if (rng.uniform() * (static_cast<double>(l - 1) + a) < a) ++tables;
  return tables;
}

double log_gamma_fn(double x) {
  require_positive(x, "lgamma argument");
  return boost::math::lgamma(x);
}

double digamma(double x) {
  require_positive(x, "digamma argument");
  return boost::math::digamma(x);
}

double trigamma(double x) {
  require_positive(x, "trigamma argument");
  return boost::math::trigamma(x);
}

double log_gamma_density(double x, const GammaParams& p) {
  require_positive(x, "gamma density argument");
  require_positive(p.shape, "gamma shape");
  require_positive(p.rate, "gamma rate");
  return p.shape * std::log(p.rate) - log_gamma_fn(p.shape) + (p.shape - 1.0) * std::log(x) - p.rate * x;
}

double log_beta_density(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("beta density argument outside (0, 1)");
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_gamma_fn(a) - log_gamma_fn(b) +
         log_gamma_fn(a + b);
}

double log_multivariate_beta(std::span<const double> a) {
  double s = 0.0, total = 0.0;
  for (double x : a) {
    s += log_gamma_fn(x);
    total += x;
  }
  return s - log_gamma_fn(total);
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace mrmm
