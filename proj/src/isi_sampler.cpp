#include "mrmm/isi_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

constexpr double kFloor = 1e-300;
constexpr double kUnderflowLogWeight = -700.0;

inline double conc(double x) { return std::max(x, kFloor); }

void check_simplex(const std::vector<double>& p, std::size_t K, double tol, const std::string& what) {
  if (p.size() != K) throw DomainError(what + " has the wrong length");
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw DomainError(what + " has an invalid entry");
    s += x;
  }
  if (std::abs(s - 1.0) > tol) throw DomainError(what + " does not sum to 1");
}

double log_choose2(int k) { return std::log(0.5 * k * (k - 1)); }

}  // namespace

void IsiHyperParams::validate(int K) const {
  auto pos = [](double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) throw InvalidSpec(std::string(what) + " must be positive");
  };
  pos(alpha00, "isi alpha00");
  pos(beta_pi.a, "isi beta_pi.a");
  pos(beta_pi.b, "isi beta_pi.b");
  pos(shape_prior.shape, "isi shape_prior.shape");
  pos(shape_prior.rate, "isi shape_prior.rate");
  pos(rate_prior.shape, "isi rate_prior.shape");
  pos(rate_prior.rate, "isi rate_prior.rate");
  pos(conc_fixed_prior.shape, "isi conc_fixed_prior.shape");
  pos(conc_fixed_prior.rate, "isi conc_fixed_prior.rate");
  pos(conc_rand_prior.shape, "isi conc_rand_prior.shape");
  pos(conc_rand_prior.rate, "isi conc_rand_prior.rate");
  for (double a : alpha_partition) pos(a, "isi alpha_partition");
  pos(fp_tolerance, "isi fp_tolerance");
  if (fp_max_iters < 1) throw InvalidSpec("isi fp_max_iters must be at least 1");
  if (K < 1) throw InvalidSpec("component count K must be at least 1");
  if (!lambda00.empty()) {
    if (static_cast<int>(lambda00.size()) != K) throw InvalidSpec("isi lambda00 must have K entries");
    double s = 0.0;
    for (double x : lambda00) {
      pos(x, "isi lambda00 entry");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidSpec("isi lambda00 must sum to 1");
  }
}

IsiHyperParams default_isi_hyper(const std::array<int, kNumIsiCovariates>& levels, std::vector<std::string>* warnings) {
  static const char* names[kNumIsiCovariates] = {"genotype", "context", "preceding syllable"};
  IsiHyperParams h;
  for (int r = 0; r < kNumIsiCovariates; ++r) {
    auto c = calibrate_partition_concentration(levels[r]);
    h.alpha_partition[r] = c.alpha;
    if (!c.attained && warnings)
      warnings->push_back(std::string("prior P(k=1)=1/2 is unattainable for ") + names[r] + " (d=" +
                          std::to_string(levels[r]) + "); using alpha=" + format_double(c.alpha));
  }
  return h;
}

namespace {

KMeansResult kmeans_1d_once(const std::vector<double>& x, int K, RngStream& rng, int max_iters) {
  const std::size_t n = x.size();
  // k-means++ seeding.
  std::vector<double> centers{x[rng.uniform_index(n)]};
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    centers.push_back(total > 0.0 ? x[sample_categorical(rng, d2)] : centers.back());
  }

  KMeansResult res;
  res.labels.assign(n, -1);
  std::vector<double> sum(K);
  std::vector<std::size_t> cnt(K);
  for (res.iterations = 1; res.iterations <= max_iters; ++res.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (std::abs(x[i] - centers[k]) < std::abs(x[i] - centers[best])) best = k;
      if (best != res.labels[i]) {
        res.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[res.labels[i]] += x[i];
      ++cnt[res.labels[i]];
    }
    for (int k = 0; k < K; ++k)
      if (cnt[k] > 0) centers[k] = sum[k] / static_cast<double>(cnt[k]);
  }
  res.iterations = std::min(res.iterations, max_iters);

  std::vector<int> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return centers[a] < centers[b]; });
  std::vector<int> rank(K);
  for (int k = 0; k < K; ++k) rank[order[k]] = k;
  for (auto& l : res.labels) l = rank[l];
  res.centers.resize(K);
  for (int k = 0; k < K; ++k) res.centers[k] = centers[order[k]];
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - res.centers[res.labels[i]];
    res.inertia += d * d;
  }
  return res;
}

}  // namespace

KMeansResult kmeans_1d(const std::vector<double>& x, int K, RngStream& rng, int max_iters, int restarts) {
  if (x.empty()) throw InvalidSpec("k-means needs at least one point");
  if (K < 1) throw InvalidSpec("k-means needs K >= 1");
  if (restarts < 1) throw InvalidSpec("k-means needs at least one start");
  KMeansResult best = kmeans_1d_once(x, K, rng, max_iters);
  for (int r = 1; r < restarts; ++r) {
    auto next = kmeans_1d_once(x, K, rng, max_iters);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  return best;
}

ShapeApproximation approximate_shape_conditional(double n, double S, double R, double mu, const GammaPrior& prior,
                                                 double tolerance, int max_iters) {
  const double a0 = prior.shape, b0 = prior.rate;
  const double T = S / mu - R + n * std::log(mu) - n;
  ShapeApproximation out;
  double A = a0 + n / 2.0, B = b0 + T;
  for (int it = 1; it <= max_iters; ++it) {
    const double a = std::clamp(A / B, 1e-6, 1e6);
    A = a0 - n * a + n * a * a * trigamma(a);
    B = b0 + (A - a0) / a - n * std::log(a) + n * digamma(a) + T;
    out.shape = A;
    out.rate = B;
    out.iterations = it;
    if (!(A > 0.0) || !(B > 0.0) || !std::isfinite(A) || !std::isfinite(B)) return out;
    if (std::abs(a / (A / B) - 1.0) < tolerance) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

double shape_log_conditional(double alpha, double n, double S, double R, double mu, const GammaPrior& prior) {
  if (!(alpha > 0.0)) return -std::numeric_limits<double>::infinity();
  const double beta = alpha / mu;
  return (prior.shape - 1.0) * std::log(alpha) - prior.rate * alpha + n * (alpha * std::log(beta) - log_gamma_fn(alpha)) +
         (alpha - 1.0) * R - beta * S;
}

GammaParams rate_conditional(double alpha, double n, double S, const GammaPrior& prior) {
  return {prior.shape + alpha * n, prior.rate + S};
}

IsiSampler::IsiSampler(std::vector<FlatRecord> records, IsiDims dims, int K, IsiHyperParams hyper,
                       IsiSamplerOptions options)
    : dims_(dims), K_(K), hyper_(std::move(hyper)), options_(options) {
  hyper_.validate(K_);
  for (int r = 0; r < kNumIsiCovariates; ++r)
    if (dims_.levels[r] < 1) throw InvalidSpec("covariate level count must be positive");
  if (dims_.n_mice < 1) throw InvalidSpec("need at least one mouse");
  replace_records(std::move(records));
}

void IsiSampler::replace_records(std::vector<FlatRecord> records) {
  log_tau_tilde_.resize(records.size());
  for (std::size_t n = 0; n < records.size(); ++n) {
    const auto& r = records[n];
    if (r.mouse < 0 || r.mouse >= dims_.n_mice) throw InvalidSpec("record mouse id out of range");
    for (int c = 0; c < kNumIsiCovariates; ++c) {
      int w = level_of(r, c);
      if (w < 0 || w >= dims_.levels[c]) throw InvalidSpec("record covariate out of range");
    }
    if (!(r.log_isi > 0.0) || !std::isfinite(r.log_isi)) throw DomainError("transformed ISI must be positive");
    log_tau_tilde_[n] = std::log(r.log_isi);
  }
  records_ = std::move(records);
}

int IsiSampler::level_of(const FlatRecord& r, int cov) const {
  return cov < kNumExogenous ? r.covariates[cov] : static_cast<int>(r.prev);
}

IsiModelState IsiSampler::init(RngStream& rng, std::vector<std::string>* warnings) {
  if (records_.empty()) throw InvalidSpec("ISI sampler needs at least one record");
  std::vector<double> x(records_.size());
  for (std::size_t n = 0; n < records_.size(); ++n) x[n] = records_[n].log_isi;
  auto km = kmeans_1d(x, K_, rng);

  std::vector<double> cnt(K_, 0.0), sum(K_, 0.0), sq(K_, 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    cnt[km.labels[n]] += 1.0;
    sum[km.labels[n]] += x[n];
  }
  for (std::size_t n = 0; n < x.size(); ++n) {
    double dlt = x[n] - sum[km.labels[n]] / cnt[km.labels[n]];
    sq[km.labels[n]] += dlt * dlt;
  }

  if (hyper_.lambda00.empty()) {
    const double floor = 1e-6;
    double norm = 0.0;
    hyper_.lambda00.resize(K_);
    for (int k = 0; k < K_; ++k) {
      hyper_.lambda00[k] = cnt[k] > 0.0 ? cnt[k] / static_cast<double>(x.size()) : floor;
      norm += hyper_.lambda00[k];
    }
    for (auto& l : hyper_.lambda00) l /= norm;
  }

  IsiModelState s;
  s.K = K_;
  s.components.resize(K_);
  for (int k = 0; k < K_; ++k) {
    const double m = cnt[k] > 0.0 ? sum[k] / cnt[k] : 0.0, var = cnt[k] > 0.0 ? sq[k] / cnt[k] : 0.0;
    if (cnt[k] >= 2.0 && var > 0.0) {
      s.components[k] = {m * m / var, m / var};
      continue;
    }
    if (cnt[k] > 0.0) {
      s.components[k] = {1.0, 1.0 / m};
    } else {
      s.components[k] = {sample_gamma(rng, hyper_.shape_prior.shape, hyper_.shape_prior.rate),
                         sample_gamma(rng, hyper_.rate_prior.shape, hyper_.rate_prior.rate)};
    }
    if (warnings)
      warnings->push_back("DegenerateCluster(" + std::to_string(k) + "): " + std::to_string(static_cast<long>(cnt[k])) +
                          " point(s); shape/rate set to " + format_double(s.components[k].shape) + "/" +
                          format_double(s.components[k].rate));
  }

  for (int r = 0; r < kNumIsiCovariates; ++r) s.partitions[r] = PartitionState::singletons(dims_.levels[r]);
  s.z = km.labels;
  s.v.assign(records_.size(), 0);
  s.lambda0 = hyper_.lambda00;

  const int T = s.n_triples();
  std::vector<double> fixed(static_cast<std::size_t>(T) * K_, 0.0), rand(static_cast<std::size_t>(dims_.n_mice) * K_, 0.0);
  for (std::size_t n = 0; n < records_.size(); ++n) {
    const auto& r = records_[n];
    fixed[s.triple_index(level_of(r, 0), level_of(r, 1), level_of(r, 2)) * K_ + s.z[n]] += 1.0;
    rand[r.mouse * K_ + s.z[n]] += 1.0;
  }
  auto empirical = [&](const std::vector<double>& c, int g, const std::string& group) {
    std::vector<double> p(c.begin() + g * K_, c.begin() + (g + 1) * K_);
    double tot = std::accumulate(p.begin(), p.end(), 0.0);
    if (tot == 0.0) {
      if (warnings) warnings->push_back("EmptyConditional(" + group + "): initialized to lambda00");
      return hyper_.lambda00;
    }
    for (auto& q : p) q /= tot;
    return p;
  };
  for (int g = 0; g < T; ++g) s.lambda_fixed.push_back(empirical(fixed, g, "cell " + std::to_string(g)));
  for (int i = 0; i < dims_.n_mice; ++i) s.lambda_rand.push_back(empirical(rand, i, "mouse " + std::to_string(i)));

  s.pi0.assign(dims_.n_mice, std::vector<double>(K_, 0.8));
  s.alpha_fixed = hyper_.conc_fixed_prior.shape / hyper_.conc_fixed_prior.rate;
  s.alpha_rand = hyper_.conc_rand_prior.shape / hyper_.conc_rand_prior.rate;
  s.table_counts.assign(K_, 0.0);
  return s;
}

std::vector<double> IsiSampler::fixed_counts(const IsiModelState& s) const {
  std::vector<double> c(static_cast<std::size_t>(s.n_triples()) * K_, 0.0);
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (s.v[n]) continue;
    const auto& r = records_[n];
    int t = s.triple_index(s.partitions[0].z[level_of(r, 0)], s.partitions[1].z[level_of(r, 1)],
                           s.partitions[2].z[level_of(r, 2)]);
    c[t * K_ + s.z[n]] += 1.0;
  }
  return c;
}

std::vector<double> IsiSampler::random_counts(const IsiModelState& s) const {
  std::vector<double> c(static_cast<std::size_t>(dims_.n_mice) * K_, 0.0);
  for (std::size_t n = 0; n < records_.size(); ++n)
    if (s.v[n]) c[records_[n].mouse * K_ + s.z[n]] += 1.0;
  return c;
}

std::vector<double> IsiSampler::level_counts(const IsiModelState& s) const {
  const auto& L = dims_.levels;
  std::vector<double> c(static_cast<std::size_t>(L[0]) * L[1] * L[2] * K_, 0.0);
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (s.v[n]) continue;
    const auto& r = records_[n];
    c[((level_of(r, 0) * L[1] + level_of(r, 1)) * L[2] + level_of(r, 2)) * K_ + s.z[n]] += 1.0;
  }
  return c;
}

double IsiSampler::pooled_log_marginal(const IsiModelState& s, const std::vector<double>& level,
                                       const std::array<std::vector<int>, kNumIsiCovariates>& z) const {
  const auto& L = dims_.levels;
  std::array<int, kNumIsiCovariates> k{};
  for (int r = 0; r < kNumIsiCovariates; ++r) k[r] = *std::max_element(z[r].begin(), z[r].end()) + 1;
  std::vector<double> pooled(static_cast<std::size_t>(k[0]) * k[1] * k[2] * K_, 0.0);
  for (int w1 = 0; w1 < L[0]; ++w1)
    for (int w2 = 0; w2 < L[1]; ++w2)
      for (int w3 = 0; w3 < L[2]; ++w3) {
        const double* src = &level[((w1 * L[1] + w2) * L[2] + w3) * K_];
        double* dst = &pooled[((z[0][w1] * k[1] + z[1][w2]) * k[2] + z[2][w3]) * K_];
        for (int q = 0; q < K_; ++q) dst[q] += src[q];
      }
  std::vector<double> base(K_), post(K_);
  for (int q = 0; q < K_; ++q) base[q] = conc(s.alpha_fixed * s.lambda0[q]);
  const double lb0 = log_multivariate_beta(base);
  double lp = 0.0;
  for (std::size_t g = 0; g < pooled.size(); g += K_) {
    double tot = 0.0;
    for (int q = 0; q < K_; ++q) {
      post[q] = base[q] + pooled[g + q];
      tot += pooled[g + q];
    }
    if (tot > 0.0) lp += log_multivariate_beta(post) - lb0;
  }
  return lp;
}

double IsiSampler::collapsed_log_marginal(const IsiModelState& s,
                                          const std::array<std::vector<int>, kNumIsiCovariates>& z) const {
  return pooled_log_marginal(s, level_counts(s), z);
}

void IsiSampler::step_z(IsiModelState& s, RngStream& rng) const {
  const int T = s.n_triples();
  // log P^(i)_g(k) for every mouse and occupied triple.
  std::vector<double> logp(static_cast<std::size_t>(dims_.n_mice) * T * K_);
  for (int i = 0; i < dims_.n_mice; ++i)
    for (int g = 0; g < T; ++g)
      for (int k = 0; k < K_; ++k) {
        const double p0 = s.pi0[i][k];
        logp[(i * T + g) * K_ + k] = std::log(p0 * s.lambda_fixed[g][k] + (1.0 - p0) * s.lambda_rand[i][k]);
      }
  std::vector<double> lognorm(K_);
  for (int k = 0; k < K_; ++k)
    lognorm[k] = s.components[k].shape * std::log(s.components[k].rate) - log_gamma_fn(s.components[k].shape);
  std::vector<double> lw(K_);
  for (std::size_t n = 0; n < records_.size(); ++n) {
    const auto& r = records_[n];
    const int g = s.triple_index(s.partitions[0].z[level_of(r, 0)], s.partitions[1].z[level_of(r, 1)],
                                 s.partitions[2].z[level_of(r, 2)]);
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K_; ++k) {
      const auto& c = s.components[k];
      lw[k] = logp[(r.mouse * T + g) * K_ + k] + lognorm[k] + (c.shape - 1.0) * log_tau_tilde_[n] - c.rate * r.log_isi;
      mx = std::max(mx, lw[k]);
    }
    if (!(mx >= kUnderflowLogWeight))
      throw AllWeightsUnderflow("all component weights underflow for record " + std::to_string(n));
    s.z[n] = static_cast<int>(sample_categorical_log(rng, lw));
  }
}

void IsiSampler::step_v(IsiModelState& s, RngStream& rng) const {
  for (std::size_t n = 0; n < records_.size(); ++n) {
    const auto& r = records_[n];
    const int k = s.z[n];
    const int g = s.triple_index(s.partitions[0].z[level_of(r, 0)], s.partitions[1].z[level_of(r, 1)],
                                 s.partitions[2].z[level_of(r, 2)]);
    const double pi0 = s.pi0[r.mouse][k];
    const double p0 = pi0 * s.lambda_fixed[g][k], p1 = (1.0 - pi0) * s.lambda_rand[r.mouse][k];
    const double tot = p0 + p1;
    const double q = tot > 0.0 ? p1 / tot : 1.0 - pi0;
    s.v[n] = sample_bernoulli(rng, std::clamp(q, 0.0, 1.0)) ? 1 : 0;
  }
}

void IsiSampler::step_pi(IsiModelState& s, RngStream& rng) const {
  std::vector<std::array<double, 2>> n(static_cast<std::size_t>(dims_.n_mice) * K_, {0.0, 0.0});
  for (std::size_t t = 0; t < records_.size(); ++t) n[records_[t].mouse * K_ + s.z[t]][s.v[t]] += 1.0;
  s.pi0.resize(dims_.n_mice);
  for (int i = 0; i < dims_.n_mice; ++i) {
    s.pi0[i].resize(K_);
    if (options_.tied_coefficients) {
      double n0 = 0.0, n1 = 0.0;
      for (int k = 0; k < K_; ++k) {
        n0 += n[i * K_ + k][0];
        n1 += n[i * K_ + k][1];
      }
      std::fill(s.pi0[i].begin(), s.pi0[i].end(), sample_beta(rng, hyper_.beta_pi.a + n0, hyper_.beta_pi.b + n1));
    } else {
      for (int k = 0; k < K_; ++k)
        s.pi0[i][k] = sample_beta(rng, hyper_.beta_pi.a + n[i * K_ + k][0], hyper_.beta_pi.b + n[i * K_ + k][1]);
    }
  }
}

void IsiSampler::step_lambda_rand(IsiModelState& s, RngStream& rng) const {
  auto c = random_counts(s);
  s.lambda_rand.resize(dims_.n_mice);
  std::vector<double> a(K_);
  for (int i = 0; i < dims_.n_mice; ++i) {
    for (int k = 0; k < K_; ++k) a[k] = conc(s.alpha_rand * s.lambda0[k]) + c[i * K_ + k];
    s.lambda_rand[i].resize(K_);
    sample_dirichlet_into(rng, a, s.lambda_rand[i]);
  }
}

void IsiSampler::step_lambda_fixed(IsiModelState& s, RngStream& rng) const {
  auto c = fixed_counts(s);
  const int T = s.n_triples();
  s.lambda_fixed.resize(T);
  std::vector<double> a(K_);
  for (int g = 0; g < T; ++g) {
    for (int k = 0; k < K_; ++k) a[k] = conc(s.alpha_fixed * s.lambda0[k]) + c[g * K_ + k];
    s.lambda_fixed[g].resize(K_);
    sample_dirichlet_into(rng, a, s.lambda_fixed[g]);
  }
}

void IsiSampler::step_concentrations(IsiModelState& s, RngStream& rng) const {
  if (!options_.exact_concentrations) {
    const double n = static_cast<double>(records_.size());
    const double shift = n > 0.0 ? kEulerGamma + std::log(n) : 0.0;
    s.alpha_fixed = sample_gamma(rng, hyper_.conc_fixed_prior.shape + K_ - 1, hyper_.conc_fixed_prior.rate + shift);
    s.alpha_rand = sample_gamma(rng, hyper_.conc_rand_prior.shape + K_ - 1, hyper_.conc_rand_prior.rate + shift);
    return;
  }
  // Auxiliary tables, log r and s per group, as in the transition model.
  s.table_counts.assign(K_, 0.0);
  auto level = [&](const std::vector<double>& counts, double alpha, double& m_total, double& log_r, double& s_total) {
    for (std::size_t g = 0; g < counts.size(); g += K_) {
      double row = 0.0;
      for (int k = 0; k < K_; ++k) {
        const auto nk = static_cast<std::int64_t>(counts[g + k]);
        if (nk == 0) continue;
        const double m = static_cast<double>(sample_crt(rng, nk, conc(alpha * s.lambda0[k])));
        s.table_counts[k] += m;
        m_total += m;
        row += counts[g + k];
      }
      if (row == 0.0) continue;
      log_r += std::log(sample_beta(rng, alpha + 1.0, row));
      s_total += sample_bernoulli(rng, row / (row + alpha)) ? 1.0 : 0.0;
    }
  };
  double m0 = 0, lr0 = 0, s0 = 0, m1 = 0, lr1 = 0, s1 = 0;
  level(fixed_counts(s), s.alpha_fixed, m0, lr0, s0);
  level(random_counts(s), s.alpha_rand, m1, lr1, s1);
  s.alpha_fixed = sample_gamma(rng, hyper_.conc_fixed_prior.shape + m0 - s0, hyper_.conc_fixed_prior.rate - lr0);
  s.alpha_rand = sample_gamma(rng, hyper_.conc_rand_prior.shape + m1 - s1, hyper_.conc_rand_prior.rate - lr1);
}

void IsiSampler::step_lambda0(IsiModelState& s, RngStream& rng) const {
  std::vector<double> a(K_);
  if (options_.exact_concentrations) {
    for (int k = 0; k < K_; ++k) a[k] = hyper_.alpha00 * hyper_.lambda00[k] + s.table_counts[k];
  } else {
    // Literal rule: tables over the fixed-effect cells only, flat alpha00 / K base.
    auto c = fixed_counts(s);
    std::vector<double> m(K_, 0.0);
    for (std::size_t g = 0; g < c.size(); g += K_)
      for (int k = 0; k < K_; ++k)
        m[k] += static_cast<double>(sample_crt(rng, static_cast<std::int64_t>(c[g + k]), conc(s.alpha_fixed * s.lambda0[k])));
    for (int k = 0; k < K_; ++k) a[k] = hyper_.alpha00 / K_ + m[k];
    s.table_counts = m;
  }
  s.lambda0.resize(K_);
  sample_dirichlet_into(rng, a, s.lambda0);
}

void IsiSampler::sample_gamma_component(IsiModelState& s, int k, double n, double S, double R, RngStream& rng,
                                        std::vector<std::string>* warnings) const {
  auto& c = s.components[k];
  if (n == 0.0) {
    c.shape = sample_gamma(rng, hyper_.shape_prior.shape, hyper_.shape_prior.rate);
    c.rate = sample_gamma(rng, hyper_.rate_prior.shape, hyper_.rate_prior.rate);
    return;
  }
  const double mu = c.shape / c.rate;
  GammaPrior prior = hyper_.shape_prior;
  if (options_.exact_shape_update) {
    // The rate prior, moved to the (shape, mean) parameterization.
    prior.shape += hyper_.rate_prior.shape;
    prior.rate += hyper_.rate_prior.rate / mu;
  }
  auto ap = approximate_shape_conditional(n, S, R, mu, prior, hyper_.fp_tolerance, hyper_.fp_max_iters);
  if (!ap.converged) {
    if (warnings)
      warnings->push_back("FixedPointDiverged(" + std::to_string(k) + "): kept shape " + format_double(c.shape));
  } else if (options_.exact_shape_update) {
    const double prop = sample_gamma(rng, ap.shape, ap.rate);
    const GammaParams q{ap.shape, ap.rate};
    const double log_ratio = shape_log_conditional(prop, n, S, R, mu, prior) - log_gamma_density(prop, q) -
                             shape_log_conditional(c.shape, n, S, R, mu, prior) + log_gamma_density(c.shape, q);
    if (std::log(rng.uniform()) < log_ratio) c.shape = prop;
  } else {
    c.shape = sample_gamma(rng, ap.shape, ap.rate);
  }
  auto rp = rate_conditional(c.shape, n, S, hyper_.rate_prior);
  c.rate = sample_gamma(rng, rp.shape, rp.rate);
}

void IsiSampler::step_gamma_params(IsiModelState& s, RngStream& rng, std::vector<std::string>* warnings) const {
  std::vector<double> n(K_, 0.0), S(K_, 0.0), R(K_, 0.0);
  for (std::size_t t = 0; t < records_.size(); ++t) {
    const int k = s.z[t];
    n[k] += 1.0;
    S[k] += records_[t].log_isi;
    R[k] += log_tau_tilde_[t];
  }
  for (int k = 0; k < K_; ++k) sample_gamma_component(s, k, n[k], S[k], R[k], rng, warnings);
}

bool IsiSampler::propose_split_merge(IsiModelState& s, int r, RngStream& rng) const {
  const int d = dims_.levels[r];
  if (d == 1) return false;
  const auto level = level_counts(s);
  const int k = s.partitions[r].k;
  auto p_split = [d](int kk) { return kk == 1 ? 1.0 : (kk == d ? 0.0 : 0.5); };
  auto p_merge = [d](int kk) { return kk == d ? 1.0 : (kk == 1 ? 0.0 : 0.5); };
  auto splittable = [](const PartitionState& p) {
    std::vector<int> out;
    auto sz = p.sizes();
    for (int h = 0; h < p.k; ++h)
      if (sz[h] >= 2) out.push_back(h);
    return out;
  };
  auto log_bipartitions = [](int m) { return std::log(std::ldexp(1.0, m - 1) - 1.0); };

  const bool split = k == 1 || (k < d && rng.uniform() < 0.5);
  PartitionState prop = s.partitions[r];
  double log_q_fwd, log_q_rev;
  if (split) {
    auto cand = splittable(prop);
    const int h = cand[rng.uniform_index(cand.size())];
    auto mem = prop.members(h);
    const int m = static_cast<int>(mem.size());
    // Bits of u place members 1..m-1; member 0 keeps label h.
    const std::uint64_t u = rng.uniform_index((std::uint64_t{1} << (m - 1)) - 1) + 1;
    for (int j = 1; j < m; ++j)
      if ((u >> (j - 1)) & 1u) prop.z[mem[j]] = k;
    prop.relabel();
    log_q_fwd = std::log(p_split(k)) - std::log(static_cast<double>(cand.size())) - log_bipartitions(m);
    log_q_rev = std::log(p_merge(k + 1)) - log_choose2(k + 1);
  } else {
    const auto pairs = static_cast<std::uint64_t>(k) * (k - 1) / 2;
    auto idx = rng.uniform_index(pairs);
    int a = 0, b = 1;
    for (std::uint64_t t = 0; t < idx; ++t)
      if (++b == k) b = ++a + 1;
    for (auto& l : prop.z)
      if (l == b) l = a;
    prop.relabel();
    const int m = prop.sizes()[prop.z[s.partitions[r].members(a)[0]]];
    log_q_fwd = std::log(p_merge(k)) - log_choose2(k);
    log_q_rev = std::log(p_split(k - 1)) - std::log(static_cast<double>(splittable(prop).size())) - log_bipartitions(m);
  }

  std::array<std::vector<int>, kNumIsiCovariates> zc{s.partitions[0].z, s.partitions[1].z, s.partitions[2].z};
  const double cur = pooled_log_marginal(s, level, zc);
  zc[r] = prop.z;
  double log_ratio = pooled_log_marginal(s, level, zc) - cur;
  if (options_.corrected_partition_mh)
    log_ratio += log_partition_prior(prop, hyper_.alpha_partition[r]) -
                 log_partition_prior(s.partitions[r], hyper_.alpha_partition[r]) + log_q_rev - log_q_fwd;
  if (log_ratio > std::log(rng.uniform())) {
    s.partitions[r] = std::move(prop);
    return true;
  }
  return false;
}

void IsiSampler::step_partitions(IsiModelState& s, RngStream& rng) const {
  for (int r = 0; r < kNumIsiCovariates; ++r) propose_split_merge(s, r, rng);
  // lambda_fixed was integrated out; redraw it on the (possibly new) triples.
  step_lambda_fixed(s, rng);
}

void IsiSampler::sweep(IsiModelState& s, RngStream& rng, std::vector<std::string>* warnings) const {
  step_z(s, rng);
  step_v(s, rng);
  step_pi(s, rng);
  step_lambda_rand(s, rng);
  step_lambda_fixed(s, rng);
  step_concentrations(s, rng);
  step_lambda0(s, rng);
  step_lambda_fixed(s, rng);
  step_lambda_rand(s, rng);
  step_gamma_params(s, rng, warnings);
  step_partitions(s, rng);
}

std::vector<double> IsiSampler::mixture_weights(const IsiModelState& s, int mouse, int x1, int x2, int prev) const {
  const int g = s.triple_index(s.partitions[0].z[x1], s.partitions[1].z[x2], s.partitions[2].z[prev]);
  std::vector<double> w(K_);
  double tot = 0.0;
  for (int k = 0; k < K_; ++k) {
    const double p0 = s.pi0[mouse][k];
    w[k] = p0 * s.lambda_fixed[g][k] + (1.0 - p0) * s.lambda_rand[mouse][k];
    tot += w[k];
  }
  for (auto& x : w) x /= tot;
  return w;
}

std::vector<double> IsiSampler::population_weights(const IsiModelState& s, int x1, int x2, int prev) const {
  const int g = s.triple_index(s.partitions[0].z[x1], s.partitions[1].z[x2], s.partitions[2].z[prev]);
  const double p0 = population_pi0();
  std::vector<double> w(K_);
  for (int k = 0; k < K_; ++k) w[k] = p0 * s.lambda_fixed[g][k] + (1.0 - p0) * s.lambda0[k];
  return w;
}

namespace {

double mix(const std::vector<double>& w, const std::vector<GammaParams>& comps, double t) {
  if (!(t > 0.0)) throw DomainError("mixture density needs a positive transformed ISI");
  std::vector<double> terms(w.size());
  for (std::size_t k = 0; k < w.size(); ++k)
    terms[k] = w[k] > 0.0 ? std::log(w[k]) + log_gamma_density(t, comps[k]) : -std::numeric_limits<double>::infinity();
  return log_sum_exp(terms);
}

}  // namespace

double IsiSampler::mixture_log_density(const IsiModelState& s, double tau_tilde, int mouse, int x1, int x2,
                                       int prev) const {
  return mix(mixture_weights(s, mouse, x1, x2, prev), s.components, tau_tilde);
}

double IsiSampler::population_log_density(const IsiModelState& s, double tau_tilde, int x1, int x2, int prev) const {
  return mix(population_weights(s, x1, x2, prev), s.components, tau_tilde);
}

void IsiSampler::record_log_densities(const IsiModelState& s, std::vector<double>& out) const {
  const int T = s.n_triples();
  std::vector<double> logw(static_cast<std::size_t>(dims_.n_mice) * T * K_);
  for (int i = 0; i < dims_.n_mice; ++i)
    for (int g = 0; g < T; ++g) {
      double tot = 0.0;
      double* w = &logw[(i * T + g) * K_];
      for (int k = 0; k < K_; ++k) {
        const double p0 = s.pi0[i][k];
        w[k] = p0 * s.lambda_fixed[g][k] + (1.0 - p0) * s.lambda_rand[i][k];
        tot += w[k];
      }
      for (int k = 0; k < K_; ++k) w[k] = std::log(w[k] / tot);
    }
  std::vector<double> lognorm(K_);
  for (int k = 0; k < K_; ++k)
    lognorm[k] = s.components[k].shape * std::log(s.components[k].rate) - log_gamma_fn(s.components[k].shape);
  out.resize(records_.size());
  std::vector<double> terms(K_);
  for (std::size_t n = 0; n < records_.size(); ++n) {
    const auto& r = records_[n];
    const int g = s.triple_index(s.partitions[0].z[level_of(r, 0)], s.partitions[1].z[level_of(r, 1)],
                                 s.partitions[2].z[level_of(r, 2)]);
    const double* w = &logw[(r.mouse * T + g) * K_];
    for (int k = 0; k < K_; ++k) {
      const auto& c = s.components[k];
      terms[k] = w[k] + lognorm[k] + (c.shape - 1.0) * log_tau_tilde_[n] - c.rate * r.log_isi;
    }
    out[n] = log_sum_exp(terms);
  }
}

double IsiSampler::log_likelihood(const IsiModelState& s) const {
  std::vector<double> d;
  record_log_densities(s, d);
  return std::accumulate(d.begin(), d.end(), 0.0);
}

void IsiSampler::check_invariants(const IsiModelState& s, double tol) const {
  if (s.K != K_ || static_cast<int>(s.components.size()) != K_) throw DomainError("component count mismatch");
  for (const auto& c : s.components)
    if (!(c.shape > 0.0) || !(c.rate > 0.0) || !std::isfinite(c.shape) || !std::isfinite(c.rate))
      throw DomainError("gamma component parameters must be positive");
  for (int r = 0; r < kNumIsiCovariates; ++r) {
    const auto& p = s.partitions[r];
    if (p.d() != dims_.levels[r]) throw DomainError("partition size mismatch");
    if (canonical_labels(p.z) != p.z) throw DomainError("partition labels are not contiguous");
    if (*std::max_element(p.z.begin(), p.z.end()) + 1 != p.k) throw DomainError("partition k mismatch");
  }
  check_simplex(s.lambda0, K_, tol, "lambda0");
  if (static_cast<int>(s.lambda_fixed.size()) != s.n_triples())
    throw DomainError("lambda_fixed is not indexed by the occupied cluster triples");
  for (const auto& l : s.lambda_fixed) check_simplex(l, K_, tol, "lambda_fixed");
  if (static_cast<int>(s.lambda_rand.size()) != dims_.n_mice) throw DomainError("lambda_rand size mismatch");
  for (const auto& l : s.lambda_rand) check_simplex(l, K_, tol, "lambda_rand");
  if (static_cast<int>(s.pi0.size()) != dims_.n_mice) throw DomainError("pi0 size mismatch");
  for (const auto& p : s.pi0) {
    if (static_cast<int>(p.size()) != K_) throw DomainError("pi0 size mismatch");
    for (double x : p)
      if (!(x > 0.0 && x < 1.0)) throw DomainError("pi0 outside (0, 1)");
  }
  if (s.z.size() != records_.size() || s.v.size() != records_.size()) throw DomainError("latent size mismatch");
  for (int z : s.z)
    if (z < 0 || z >= K_) throw DomainError("component label out of range");
  if (!(s.alpha_fixed > 0.0) || !(s.alpha_rand > 0.0)) throw DomainError("concentration not positive");
}

}  // namespace mrmm
