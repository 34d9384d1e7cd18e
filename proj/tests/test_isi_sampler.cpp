#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrmm/distributions.hpp"
#include "mrmm/errors.hpp"
#include "mrmm/isi_sampler.hpp"

using namespace mrmm;

namespace {

FlatRecord rec(int mouse, int x1, int x2, int prev, double tau_tilde) {
  FlatRecord r;
  r.mouse = mouse;
  r.covariates = {x1, x2};
  r.prev = static_cast<SyllableCode>(prev);
  r.cur = 0;
  r.isi = std::expm1(tau_tilde);
  r.log_isi = tau_tilde;
  return r;
}

std::vector<FlatRecord> random_records(std::uint64_t seed, int n, const IsiDims& dims) {
  RngStream r(seed, 77);
  std::vector<FlatRecord> out;
  for (int i = 0; i < n; ++i) {
    // Two well separated populations on the tau-tilde scale.
    double t = r.uniform() < 0.5 ? sample_gamma(r, 20.0, 200.0) : sample_gamma(r, 8.0, 10.0);
    out.push_back(rec(static_cast<int>(r.uniform_index(dims.n_mice)), static_cast<int>(r.uniform_index(dims.levels[0])),
                      static_cast<int>(r.uniform_index(dims.levels[1])),
                      static_cast<int>(r.uniform_index(dims.levels[2])), t));
  }
  return out;
}

// Two components, one covariate cell, every weight frozen at 1/2.
IsiModelState frozen_two_component(IsiSampler& sampler, GammaParams c0, GammaParams c1) {
  RngStream rng(5, 0);
  auto s = sampler.init(rng);
  s.components = {c0, c1};
  for (auto& l : s.lambda_fixed) l = {0.5, 0.5};
  for (auto& l : s.lambda_rand) l = {0.5, 0.5};
  return s;
}

int partition_index(const std::vector<int>& z) {
  auto all = enumerate_set_partitions(static_cast<int>(z.size()));
  auto it = std::find(all.begin(), all.end(), canonical_labels(z));
  return static_cast<int>(it - all.begin());
}

// Batch-means standard error of a 0/1 indicator series.
double batch_se(const std::vector<char>& x, int batches) {
  const std::size_t len = x.size() / batches;
  std::vector<double> m(batches, 0.0);
  for (int b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < len; ++i) m[b] += x[b * len + i];
    m[b] /= static_cast<double>(len);
  }
  double mean = std::accumulate(m.begin(), m.end(), 0.0) / batches, v = 0.0;
  for (double y : m) v += (y - mean) * (y - mean);
  return std::sqrt(v / (batches - 1) / batches);
}

}  // namespace

TEST(KMeans, OneDistinctValueGivesOneCluster) {
  std::vector<double> x(20, 0.7);
  RngStream rng(1, 0);
  auto km = kmeans_1d(x, 4, rng);
  for (int l : km.labels) EXPECT_EQ(l, km.labels[0]);
}

TEST(KMeans, SeparatedGroupsSortedByCenter) {
  std::vector<double> x;
  for (int i = 0; i < 30; ++i) x.push_back(5.0 + 0.01 * i);
  for (int i = 0; i < 30; ++i) x.push_back(0.1 + 0.001 * i);
  RngStream rng(2, 0);
  auto km = kmeans_1d(x, 2, rng);
  ASSERT_EQ(km.centers.size(), 2u);
  EXPECT_LT(km.centers[0], km.centers[1]);
  for (int i = 0; i < 30; ++i) {
    EXPECT_EQ(km.labels[i], 1);
    EXPECT_EQ(km.labels[30 + i], 0);
  }
  EXPECT_LE(km.iterations, 100);
}

TEST(KMeans, RestartsNeverIncreaseInertia) {
  // Four groups of unequal spread, where single seedings often merge two.
  RngStream gen(3, 0);
  std::vector<double> x;
  for (auto [m, s] : {std::pair{0.04, 0.012}, {0.15, 0.025}, {0.35, 0.04}, {0.7, 0.07}})
    for (int i = 0; i < 300; ++i) x.push_back(m + s * sample_normal(gen));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream a(seed, 0), b(seed, 0);
    auto one = kmeans_1d(x, 4, a, 100, 1);
    auto many = kmeans_1d(x, 4, b, 100, 10);
    EXPECT_LE(many.inertia, one.inertia);
    EXPECT_NEAR(many.centers[0], 0.04, 0.01);
    EXPECT_NEAR(many.centers[3], 0.7, 0.03);
  }
}

TEST(IsiInit, MomentInitialization) {
  // One cluster with mean 2 and variance 2/3: alpha = m^2/s^2 = 6, beta = m/s^2 = 3.
  std::vector<FlatRecord> recs{rec(0, 0, 0, 0, 1.0), rec(0, 0, 0, 0, 2.0), rec(0, 0, 0, 0, 3.0)};
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 1, IsiHyperParams{});
  RngStream rng(1, 0);
  auto s = sampler.init(rng);
  ASSERT_EQ(s.components.size(), 1u);
  EXPECT_NEAR(s.components[0].shape, 6.0, 1e-12);
  EXPECT_NEAR(s.components[0].rate, 3.0, 1e-12);
  EXPECT_EQ(sampler.hyper().lambda00, (std::vector<double>{1.0}));
}

TEST(IsiInit, ReferenceDefaults) {
  IsiDims dims{{2, 3, 4}, 3};
  IsiSampler sampler(random_records(1, 400, dims), dims, 4, IsiHyperParams{});
  RngStream rng(2, 0);
  std::vector<std::string> warnings;
  auto s = sampler.init(rng, &warnings);
  EXPECT_EQ(s.K, 4);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(s.partitions[r].k, dims.levels[r]);
  EXPECT_EQ(s.lambda_fixed.size(), 24u);
  for (const auto& p : s.pi0)
    for (double x : p) EXPECT_DOUBLE_EQ(x, 0.8);
  EXPECT_EQ(s.lambda0, sampler.hyper().lambda00);
  double sum = std::accumulate(s.lambda0.begin(), s.lambda0.end(), 0.0);
  EXPECT_NEAR(sum, 1.0, 1e-12);
  sampler.check_invariants(s);
}

TEST(IsiInit, DegenerateClusterFallsBack) {
  // Three distinct values, K = 3: every k-means cluster is a singleton.
  std::vector<FlatRecord> recs{rec(0, 0, 0, 0, 0.5), rec(0, 0, 0, 0, 2.0), rec(0, 0, 0, 0, 4.0)};
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 3, IsiHyperParams{});
  RngStream rng(1, 0);
  std::vector<std::string> warnings;
  auto s = sampler.init(rng, &warnings);
  EXPECT_NEAR(s.components[0].shape, 1.0, 1e-15);
  EXPECT_NEAR(s.components[0].rate, 2.0, 1e-12);
  EXPECT_NEAR(s.components[2].rate, 0.25, 1e-12);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings[0].find("DegenerateCluster"), std::string::npos);
}

TEST(IsiStepZ, SingleComponent) {
  IsiDims dims{{2, 3, 4}, 2};
  IsiSampler sampler(random_records(3, 100, dims), dims, 1, IsiHyperParams{});
  RngStream rng(3, 0);
  auto s = sampler.init(rng);
  for (int i = 0; i < 5; ++i) {
    sampler.step_z(s, rng);
    for (int z : s.z) EXPECT_EQ(z, 0);
  }
}

TEST(IsiStepZ, CrossingPointIsAFairCoin) {
  // x e^{-x} = x^2 e^{-x} / 2 at x = 2.
  IsiSampler sampler({rec(0, 0, 0, 0, 2.0)}, IsiDims{{1, 1, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  auto s = frozen_two_component(sampler, {2.0, 1.0}, {3.0, 1.0});
  RngStream rng(4, 0);
  const int n = 100000;
  int ones = 0;
  for (int i = 0; i < n; ++i) {
    sampler.step_z(s, rng);
    ones += s.z[0];
  }
  EXPECT_NEAR(ones / double(n), 0.5, 3 * std::sqrt(0.25 / n));
}

TEST(IsiStepZ, FrozenResponsibilities) {
  std::vector<FlatRecord> recs{rec(0, 0, 0, 0, 0.3), rec(0, 0, 0, 0, 1.1), rec(0, 0, 0, 0, 2.5)};
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  auto s = frozen_two_component(sampler, {2.0, 4.0}, {5.0, 2.0});
  s.lambda_fixed[0] = {0.3, 0.7};
  s.lambda_rand[0] = {0.6, 0.4};
  s.pi0[0] = {0.8, 0.8};
  RngStream rng(6, 0);
  const int n = 100000;
  std::vector<int> ones(3, 0);
  for (int i = 0; i < n; ++i) {
    sampler.step_z(s, rng);
    for (int j = 0; j < 3; ++j) ones[j] += s.z[j];
  }
  const double w0 = 0.8 * 0.3 + 0.2 * 0.6, w1 = 0.8 * 0.7 + 0.2 * 0.4;
  for (int j = 0; j < 3; ++j) {
    double t = recs[j].log_isi;
    double a = w0 * std::exp(log_gamma_density(t, {2.0, 4.0}));
    double b = w1 * std::exp(log_gamma_density(t, {5.0, 2.0}));
    double p = b / (a + b);
    EXPECT_NEAR(ones[j] / double(n), p, 3 * std::sqrt(p * (1 - p) / n)) << j;
  }
}

TEST(IsiStepZ, HugeRateComponentVanishes) {
  IsiSampler sampler({rec(0, 0, 0, 0, 1.0)}, IsiDims{{1, 1, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  auto s = frozen_two_component(sampler, {2.0, 1.0}, {2.0, 1e9});
  RngStream rng(7, 0);
  for (int i = 0; i < 1000; ++i) {
    sampler.step_z(s, rng);
    EXPECT_EQ(s.z[0], 0);
  }
}

TEST(IsiStepZ, AllWeightsUnderflow) {
  IsiSampler sampler({rec(0, 0, 0, 0, 1.0)}, IsiDims{{1, 1, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  auto s = frozen_two_component(sampler, {1.0, 1e6}, {1.0, 2e6});
  RngStream rng(8, 0);
  EXPECT_THROW(sampler.step_z(s, rng), AllWeightsUnderflow);
}

TEST(IsiStepV, EqualVectorsGiveThePrior) {
  std::vector<FlatRecord> recs(200, rec(0, 0, 0, 0, 1.0));
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  auto s = frozen_two_component(sampler, {2.0, 1.0}, {3.0, 1.0});
  s.lambda_fixed[0] = {0.3, 0.7};
  s.lambda_rand[0] = {0.3, 0.7};
  s.pi0[0] = {0.3, 0.9};  // indexed by the record's component
  std::fill(s.z.begin(), s.z.end(), 0);
  RngStream rng(9, 0);
  int ones = 0, n = 0;
  for (int i = 0; i < 500; ++i) {
    sampler.step_v(s, rng);
    for (auto v : s.v) ones += v;
    n += static_cast<int>(s.v.size());
  }
  EXPECT_NEAR(ones / double(n), 0.7, 3 * std::sqrt(0.21 / n));
}

TEST(IsiStepPi, BetaMeansUntiedAndTied) {
  // Mouse 0: component 0 has v = (0, 0, 1), component 1 has v = (1).
  std::vector<FlatRecord> recs(4, rec(0, 0, 0, 0, 1.0));
  IsiHyperParams h{.lambda00 = {0.5, 0.5}};
  h.beta_pi = {2.0, 3.0};
  const int n = 40000;
  for (bool tied : {false, true}) {
    IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 2, h, IsiSamplerOptions{.tied_coefficients = tied});
    RngStream rng(10, 0);
    auto s = sampler.init(rng);
    s.z = {0, 0, 0, 1};
    s.v = {0, 0, 1, 1};
    std::vector<double> m(2, 0.0);
    for (int i = 0; i < n; ++i) {
      sampler.step_pi(s, rng);
      m[0] += s.pi0[0][0];
      m[1] += s.pi0[0][1];
      if (tied) {
        ASSERT_EQ(s.pi0[0][0], s.pi0[0][1]);
      }
    }
    double e0 = tied ? 4.0 / 9.0 : 4.0 / 8.0, e1 = tied ? 4.0 / 9.0 : 2.0 / 6.0;
    EXPECT_NEAR(m[0] / n, e0, 0.005) << tied;
    EXPECT_NEAR(m[1] / n, e1, 0.005) << tied;
  }
}

TEST(IsiStepLambda, DirichletMeansAndPriorFallback) {
  std::vector<FlatRecord> recs(6, rec(0, 0, 0, 0, 1.0));
  recs.push_back(rec(1, 0, 0, 0, 1.0));
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 2}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  RngStream rng(11, 0);
  auto s = sampler.init(rng);
  s.lambda0 = {0.25, 0.75};
  s.alpha_fixed = 2.0;
  s.alpha_rand = 4.0;
  s.z = {0, 0, 0, 1, 1, 1, 0};
  s.v = {0, 0, 1, 0, 1, 1, 0};
  // fixed (v = 0): n = (3, 1), mouse 0 random (v = 1): n = (1, 2), mouse 1 random: none.
  const int n = 40000;
  double f0 = 0, r0 = 0, r1 = 0;
  for (int i = 0; i < n; ++i) {
    sampler.step_lambda_fixed(s, rng);
    sampler.step_lambda_rand(s, rng);
    f0 += s.lambda_fixed[0][0];
    r0 += s.lambda_rand[0][0];
    r1 += s.lambda_rand[1][0];
  }
  EXPECT_NEAR(f0 / n, (0.5 + 3.0) / 6.0, 0.005);
  EXPECT_NEAR(r0 / n, (1.0 + 1.0) / 7.0, 0.005);
  EXPECT_NEAR(r1 / n, 0.25, 0.005);
}

TEST(IsiConcentrations, WestSingleComponentUsesPriorShape) {
  std::vector<FlatRecord> recs(50, rec(0, 0, 0, 0, 1.0));
  IsiHyperParams h;
  h.conc_fixed_prior = {2.5, 1.0};
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 1, h);
  RngStream rng(12, 0);
  auto s = sampler.init(rng);
  const int n = 40000;
  double m = 0;
  for (int i = 0; i < n; ++i) {
    sampler.step_concentrations(s, rng);
    m += s.alpha_fixed;
  }
  const double rate = 1.0 + kEulerGamma + std::log(50.0);
  EXPECT_NEAR(m / n, 2.5 / rate, 3 * std::sqrt(2.5 / (rate * rate) / n));
}

TEST(IsiConcentrations, WestReferenceScale) {
  // a = b = 1, K = 4, n = 70818: Ga(4, 12.74508), mean 0.313846.
  std::vector<FlatRecord> recs(70818, rec(0, 0, 0, 0, 1.0));
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 4, IsiHyperParams{.lambda00 = {0.25, 0.25, 0.25, 0.25}});
  RngStream rng(13, 0);
  auto s = sampler.init(rng);
  const double rate = 1.0 + kEulerGamma + std::log(70818.0);
  EXPECT_NEAR(rate, 12.74508, 1e-5);
  const int n = 40000;
  double m0 = 0, m1 = 0;
  for (int i = 0; i < n; ++i) {
    sampler.step_concentrations(s, rng);
    m0 += s.alpha_fixed;
    m1 += s.alpha_rand;
    ASSERT_GT(s.alpha_fixed, 0.0);
  }
  const double se = 3 * std::sqrt(4.0 / (rate * rate) / n);
  EXPECT_NEAR(m0 / n, 0.313846, se);
  EXPECT_NEAR(m1 / n, 4.0 / rate, se);
}

TEST(IsiLambda0, EmptyCountsGivePriorMean) {
  std::vector<FlatRecord> recs(10, rec(0, 0, 0, 0, 1.0));
  for (bool exact : {false, true}) {
    IsiSamplerOptions o;
    o.exact_concentrations = exact;
    IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 3, IsiHyperParams{.lambda00 = {0.6, 0.3, 0.1}}, o);
    RngStream rng(14, 0);
    auto s = sampler.init(rng);
    std::fill(s.v.begin(), s.v.end(), 1);  // nothing reaches the fixed level
    const int n = 40000;
    std::vector<double> m(3, 0.0);
    for (int i = 0; i < n; ++i) {
      if (exact) {
        s.table_counts.assign(3, 0.0);
      } else {
        sampler.step_concentrations(s, rng);
      }
      sampler.step_lambda0(s, rng);
      for (int k = 0; k < 3; ++k) m[k] += s.lambda0[k];
    }
    // Literal rule: Dir(alpha00 / K, ...); model prior: Dir(alpha00 lambda00).
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(m[k] / n, exact ? sampler.hyper().lambda00[k] : 1.0 / 3.0, 0.01);
  }
}

TEST(IsiShape, RateConjugateArithmetic) {
  auto p = rate_conditional(2.0, 3.0, 6.0, GammaPrior{1.0, 1.0});
  EXPECT_DOUBLE_EQ(p.shape, 7.0);
  EXPECT_DOUBLE_EQ(p.rate, 7.0);
  EXPECT_DOUBLE_EQ(p.shape / p.rate, 1.0);
}

namespace {

struct Moments {
  double mean, var, kl;
};

// Mean and variance of the exact conditional by Simpson quadrature, plus
// KL(exact || Ga(A, B)).
Moments quadrature(double n, double S, double R, double mu, const GammaPrior& prior, const ShapeApproximation& a) {
  const double m = a.shape / a.rate, sd = std::sqrt(a.shape) / a.rate;
  const double lo = std::max(1e-9, m - 15 * sd), hi = m + 15 * sd;
  const int N = 20000;
  const double h = (hi - lo) / N;
  std::vector<double> lf(N + 1);
  for (int i = 0; i <= N; ++i) lf[i] = shape_log_conditional(lo + i * h, n, S, R, mu, prior);
  const double mx = *std::max_element(lf.begin(), lf.end());
  double z = 0, s1 = 0, s2 = 0;
  for (int i = 0; i <= N; ++i) {
    double w = (i == 0 || i == N) ? 1 : (i % 2 ? 4 : 2), x = lo + i * h, f = std::exp(lf[i] - mx);
    z += w * f;
    s1 += w * f * x;
    s2 += w * f * x * x;
  }
  const double logz = std::log(z * h / 3) + mx;
  double kl = 0;
  for (int i = 0; i <= N; ++i) {
    double w = (i == 0 || i == N) ? 1 : (i % 2 ? 4 : 2), x = lo + i * h;
    double lp = lf[i] - logz;
    kl += w * std::exp(lp) * (lp - log_gamma_density(x, {a.shape, a.rate}));
  }
  double mean = s1 / z;
  return {mean, s2 / z - mean * mean, kl * h / 3};
}

}  // namespace

TEST(IsiShape, ApproximationMatchesQuadrature) {
  RngStream rng(15, 0);
  for (int n : {10, 100, 500, 1000}) {
    double S = 0, R = 0;
    for (int i = 0; i < n; ++i) {
      double x = sample_gamma(rng, 3.0, 2.0);
      S += x;
      R += std::log(x);
    }
    const double mu = S / n;
    GammaPrior prior{1.0, 1.0};
    auto a = approximate_shape_conditional(n, S, R, mu, prior);
    ASSERT_TRUE(a.converged);
    if (n >= 50) {
      EXPECT_LE(a.iterations, 10);
    }
    auto q = quadrature(n, S, R, mu, prior, a);
    EXPECT_NEAR(a.shape / a.rate, q.mean, 0.02 * q.mean) << n;
    EXPECT_NEAR(a.shape / (a.rate * a.rate), q.var, 0.02 * q.var) << n;
    EXPECT_LT(q.kl, 1e-3) << n;
  }
}

TEST(IsiShape, EmptyComponentDrawsFromPrior) {
  std::vector<FlatRecord> recs(20, rec(0, 0, 0, 0, 1.0));
  for (int i = 0; i < 10; ++i) recs.push_back(rec(0, 0, 0, 0, 3.0));
  IsiHyperParams h{.lambda00 = {0.5, 0.5}};
  h.shape_prior = {2.0, 1.0};
  h.rate_prior = {3.0, 2.0};
  IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 2, h);
  RngStream rng(16, 0);
  auto s = sampler.init(rng);
  std::fill(s.z.begin(), s.z.end(), 0);
  const int n = 40000;
  double ma = 0, mb = 0;
  for (int i = 0; i < n; ++i) {
    sampler.step_gamma_params(s, rng);
    ma += s.components[1].shape;
    mb += s.components[1].rate;
  }
  EXPECT_NEAR(ma / n, 2.0, 3 * std::sqrt(2.0 / n));
  EXPECT_NEAR(mb / n, 1.5, 3 * std::sqrt(0.75 / n));
}

TEST(IsiShape, LargeComponentRecoversParameters) {
  std::vector<FlatRecord> recs;
  RngStream data(17, 1);
  for (int i = 0; i < 3000; ++i) recs.push_back(rec(0, 0, 0, 0, sample_gamma(data, 3.0, 2.0)));
  for (bool exact : {false, true}) {
    IsiSamplerOptions o;
    o.exact_shape_update = exact;
    IsiSampler sampler(recs, IsiDims{{1, 1, 1}, 1}, 1, IsiHyperParams{}, o);
    RngStream rng(17, 0);
    auto s = sampler.init(rng);
    double a = 0, b = 0;
    for (int i = 0; i < 2000; ++i) {
      sampler.step_gamma_params(s, rng);
      if (i >= 500) {
        a += s.components[0].shape;
        b += s.components[0].rate;
      }
    }
    EXPECT_NEAR(a / 1500, 3.0, 0.3) << exact;
    EXPECT_NEAR(b / 1500, 2.0, 0.2) << exact;
  }
}

namespace {

// Context (d = 3) is the only covariate with more than one level.
std::vector<FlatRecord> split_merge_toy() {
  std::vector<FlatRecord> recs;
  for (int i = 0; i < 6; ++i) recs.push_back(rec(0, 0, 0, 0, 1.0));
  for (int i = 0; i < 6; ++i) recs.push_back(rec(0, 0, 1, 0, 1.0));
  for (int i = 0; i < 6; ++i) recs.push_back(rec(0, 0, 2, 0, 1.0));
  return recs;
}

// Component labels: level 0 all k=0, level 1 five k=0 one k=1, level 2 one k=0 five k=1.
void set_toy_labels(IsiModelState& s) {
  s.z.assign(18, 0);
  s.z[11] = 1;
  for (int i = 13; i < 18; ++i) s.z[i] = 1;
  std::fill(s.v.begin(), s.v.end(), 0);
  s.lambda0 = {0.5, 0.5};
  s.alpha_fixed = 1.0;
}

std::vector<double> exact_partition_posterior(const IsiSampler& sampler, const IsiModelState& s, bool with_prior) {
  auto parts = enumerate_set_partitions(3);
  std::vector<double> lp;
  for (const auto& z : parts) {
    double l = sampler.collapsed_log_marginal(s, {std::vector<int>{0}, z, std::vector<int>{0}});
    if (with_prior) {
      PartitionState p{z, *std::max_element(z.begin(), z.end()) + 1};
      l += log_partition_prior(p, sampler.hyper().alpha_partition[1]);
    }
    lp.push_back(l);
  }
  double m = log_sum_exp(lp);
  for (auto& x : lp) x = std::exp(x - m);
  return lp;
}

std::vector<double> run_split_merge(IsiSampler& sampler, IsiModelState s, int moves, std::vector<std::vector<char>>& ind) {
  RngStream rng(21, 0);
  std::vector<double> freq(5, 0.0);
  ind.assign(5, std::vector<char>(moves, 0));
  for (int i = 0; i < moves; ++i) {
    sampler.propose_split_merge(s, 1, rng);
    int j = partition_index(s.partitions[1].z);
    freq[j] += 1.0;
    ind[j][i] = 1;
  }
  for (auto& f : freq) f /= moves;
  return freq;
}

}  // namespace

TEST(IsiSplitMerge, SingleLevelNeverMoves) {
  IsiSampler sampler(split_merge_toy(), IsiDims{{1, 3, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  RngStream rng(18, 0);
  auto s = sampler.init(rng);
  for (int i = 0; i < 100; ++i) {
    EXPECT_FALSE(sampler.propose_split_merge(s, 0, rng));
    EXPECT_FALSE(sampler.propose_split_merge(s, 2, rng));
  }
}

TEST(IsiSplitMerge, BoundaryMovesAreForced) {
  IsiSampler sampler(split_merge_toy(), IsiDims{{1, 3, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  RngStream rng(19, 0);
  auto s = sampler.init(rng);
  set_toy_labels(s);
  for (int i = 0; i < 200; ++i) {
    auto t = s;
    t.partitions[1] = PartitionState::singletons(3);
    sampler.propose_split_merge(t, 1, rng);
    EXPECT_LE(t.partitions[1].k, 3);  // from k = d only merges
    EXPECT_GE(t.partitions[1].k, 2);
    t.partitions[1] = PartitionState{{0, 0, 0}, 1};
    sampler.propose_split_merge(t, 1, rng);
    EXPECT_LE(t.partitions[1].k, 2);  // from k = 1 only splits
  }
}

TEST(IsiSplitMerge, IdenticalLevelsFavourMerging) {
  // Two context levels with identical component counts (10 records in all).
  std::vector<FlatRecord> recs;
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < 5; ++i) recs.push_back(rec(0, 0, l, 0, 1.0));
  IsiSampler sampler(recs, IsiDims{{1, 2, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  RngStream rng(20, 0);
  auto s = sampler.init(rng);
  s.z = {0, 0, 0, 1, 1, 0, 0, 0, 1, 1};
  std::fill(s.v.begin(), s.v.end(), 0);
  s.lambda0 = {0.5, 0.5};
  double merged = sampler.collapsed_log_marginal(s, {std::vector<int>{0}, {0, 0}, std::vector<int>{0}});
  double split = sampler.collapsed_log_marginal(s, {std::vector<int>{0}, {0, 1}, std::vector<int>{0}});
  // Hand value: B(0.5+6, 0.5+4) / B(0.5, 0.5) vs (B(0.5+3, 0.5+2) / B(0.5, 0.5))^2.
  std::vector<double> a0{0.5, 0.5}, a6{6.5, 4.5}, a3{3.5, 2.5};
  EXPECT_NEAR(merged, log_multivariate_beta(a6) - log_multivariate_beta(a0), 1e-12);
  EXPECT_NEAR(split, 2 * (log_multivariate_beta(a3) - log_multivariate_beta(a0)), 1e-12);
  EXPECT_GT(merged, split);
  // Merge proposals from k = 2 are accepted with probability 1, splits from k = 1 with L'/L < 1.
  s.partitions[1] = PartitionState{{0, 1}, 2};
  EXPECT_TRUE(sampler.propose_split_merge(s, 1, rng));
  EXPECT_EQ(s.partitions[1].k, 1);
}

TEST(IsiSplitMerge, CorrectedKernelMatchesExactPosterior) {
  IsiHyperParams h = default_isi_hyper({1, 3, 1});
  h.lambda00 = {0.5, 0.5};
  IsiSampler sampler(split_merge_toy(), IsiDims{{1, 3, 1}, 1}, 2, h, IsiSamplerOptions::exact());
  RngStream rng(22, 0);
  auto s = sampler.init(rng);
  set_toy_labels(s);
  auto exact = exact_partition_posterior(sampler, s, true);
  std::vector<std::vector<char>> ind;
  auto freq = run_split_merge(sampler, s, 200000, ind);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(freq[j], exact[j], 3 * batch_se(ind[j], 200) + 1e-4) << j;
}

TEST(IsiSplitMerge, LiteralKernelMatchesItsOwnStationaryLaw) {
  // The literal rule is a Metropolis step on L alone with asymmetric
  // proposals; compute its 5-state transition matrix and stationary law.
  IsiSampler sampler(split_merge_toy(), IsiDims{{1, 3, 1}, 1}, 2, IsiHyperParams{.lambda00 = {0.5, 0.5}});
  RngStream rng(23, 0);
  auto s = sampler.init(rng);
  set_toy_labels(s);
  auto parts = enumerate_set_partitions(3);  // [abc], [ab|c], [a|bc]... in canonical order
  std::vector<double> L;
  for (const auto& z : parts) L.push_back(sampler.collapsed_log_marginal(s, {std::vector<int>{0}, z, std::vector<int>{0}}));
  std::vector<std::vector<double>> P(5, std::vector<double>(5, 0.0));
  auto k_of = [&](int j) { return *std::max_element(parts[j].begin(), parts[j].end()) + 1; };
  auto acc = [&](int from, int to) { return std::min(1.0, std::exp(L[to] - L[from])); };
  for (int j = 0; j < 5; ++j) {
    for (int t = 0; t < 5; ++t) {
      if (t == j) continue;
      int kj = k_of(j), kt = k_of(t);
      double q = 0.0;
      if (kj == 1 && kt == 2) q = 1.0 / 3.0;             // 3 bipartitions of the full cluster
      if (kj == 2 && kt == 1) q = 0.5;                   // one pair to merge
      if (kj == 2 && kt == 3) q = 0.5;                   // one splittable cluster, one bipartition
      if (kj == 3 && kt == 2) q = 1.0 / 3.0;             // three pairs
      P[j][t] = q * acc(j, t);
    }
    P[j][j] = 1.0 - std::accumulate(P[j].begin(), P[j].end(), 0.0);
  }
  std::vector<double> pi(5, 0.2);
  for (int it = 0; it < 5000; ++it) {
    std::vector<double> nx(5, 0.0);
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) nx[b] += pi[a] * P[a][b];
    pi = nx;
  }
  std::vector<std::vector<char>> ind;
  auto freq = run_split_merge(sampler, s, 200000, ind);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(freq[j], pi[j], 3 * batch_se(ind[j], 200) + 1e-4) << j;
  // The literal law differs from the likelihood-proportional posterior.
  auto flat = exact_partition_posterior(sampler, s, false);
  double tv = 0;
  for (int j = 0; j < 5; ++j) tv += 0.5 * std::abs(pi[j] - flat[j]);
  EXPECT_GT(tv, 1e-3);
}

TEST(IsiSweep, DeterministicAndInvariant) {
  IsiDims dims{{2, 3, 4}, 3};
  auto recs = random_records(30, 600, dims);
  for (auto opts : {IsiSamplerOptions{}, IsiSamplerOptions::exact()}) {
    IsiSampler a(recs, dims, 3, default_isi_hyper(), opts), b(recs, dims, 3, default_isi_hyper(), opts);
    RngStream ra(31, 0), rb(31, 0);
    auto sa = a.init(ra), sb = b.init(rb);
    for (int i = 0; i < 100; ++i) {
      a.sweep(sa, ra);
      b.sweep(sb, rb);
      a.check_invariants(sa, 1e-10);
    }
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(ra, rb);
  }
}

TEST(IsiDensity, SingleComponentIsTheGammaDensity) {
  IsiDims dims{{2, 3, 4}, 2};
  IsiSampler sampler(random_records(40, 100, dims), dims, 1, IsiHyperParams{});
  RngStream rng(40, 0);
  auto s = sampler.init(rng);
  for (double t : {0.01, 0.3, 2.0})
    EXPECT_NEAR(sampler.mixture_log_density(s, t, 1, 0, 2, 3), log_gamma_density(t, s.components[0]), 1e-12);
}

TEST(IsiDensity, PopulationWeightsUseTheClosedForm) {
  IsiDims dims{{2, 3, 4}, 2};
  IsiSampler sampler(random_records(41, 200, dims), dims, 3, IsiHyperParams{});
  EXPECT_DOUBLE_EQ(sampler.population_pi0(), 0.5);
  RngStream rng(41, 0);
  auto s = sampler.init(rng);
  auto w = sampler.population_weights(s, 1, 2, 3);
  const auto& f = s.lambda_fixed[s.triple_index(1, 2, 3)];
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(w[k], 0.5 * f[k] + 0.5 * s.lambda0[k]);
}

TEST(IsiDensity, IntegratesToOneAndIsLabelInvariant) {
  IsiDims dims{{2, 3, 4}, 2};
  IsiSampler sampler(random_records(42, 400, dims), dims, 3, default_isi_hyper());
  RngStream rng(42, 0);
  auto s = sampler.init(rng);
  for (int i = 0; i < 20; ++i) sampler.sweep(s, rng);
  // Simpson on [0, 40] in the variable u = sqrt(t) to tame shape < 1 spikes.
  const int n = 400000;
  const double hi = std::sqrt(40.0), h = hi / n;
  double sum = 0.0;
  for (int i = 1; i < n; ++i) {
    double u = i * h;
    sum += (i % 2 ? 4.0 : 2.0) * 2 * u * std::exp(sampler.mixture_log_density(s, u * u, 1, 1, 2, 0));
  }
  sum += 2 * hi * std::exp(sampler.mixture_log_density(s, 40.0, 1, 1, 2, 0));
  bool small_shape = std::any_of(s.components.begin(), s.components.end(), [](auto c) { return c.shape < 0.5; });
  if (!small_shape) {
    EXPECT_NEAR(sum * h / 3, 1.0, 1e-5);
  }
  // Reverse component labels everywhere.
  auto t = s;
  auto rev = [](std::vector<double>& v) { std::reverse(v.begin(), v.end()); };
  std::reverse(t.components.begin(), t.components.end());
  rev(t.lambda0);
  for (auto& l : t.lambda_fixed) rev(l);
  for (auto& l : t.lambda_rand) rev(l);
  for (auto& p : t.pi0) rev(p);
  for (double x : {0.05, 0.4, 1.7})
    EXPECT_NEAR(sampler.mixture_log_density(s, x, 0, 1, 2, 3), sampler.mixture_log_density(t, x, 0, 1, 2, 3), 1e-12);
}
