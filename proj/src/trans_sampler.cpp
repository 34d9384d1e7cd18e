#include "mrmm/trans_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

constexpr double kFloor = 1e-300;

inline double conc(double x) { return std::max(x, kFloor); }

std::string mouse_group(int i) { return "mouse " + std::to_string(i); }

void check_row(const Row4& row, double tol, const std::string& what) {
  double s = 0.0;
  for (double x : row) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw DomainError(what + " has an invalid entry");
    s += x;
  }
  if (std::abs(s - 1.0) > tol) throw DomainError(what + " does not sum to 1");
}

}  // namespace

void TransHyperParams::validate() const {
  auto pos = [](double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) throw InvalidSpec(std::string(what) + " must be positive");
  };
  pos(alpha00, "trans alpha00");
  for (double a : alpha_partition) pos(a, "trans alpha_partition");
  pos(beta_pi.a, "trans beta_pi.a");
  pos(beta_pi.b, "trans beta_pi.b");
  pos(gamma_alpha_fixed.shape, "trans gamma_alpha_fixed.shape");
  pos(gamma_alpha_fixed.rate, "trans gamma_alpha_fixed.rate");
  pos(gamma_alpha_rand.shape, "trans gamma_alpha_rand.shape");
  pos(gamma_alpha_rand.rate, "trans gamma_alpha_rand.rate");
  double s = 0.0;
  for (double x : lambda00) {
    pos(x, "trans lambda00 entry");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw InvalidSpec("trans lambda00 must sum to 1");
}

TransHyperParams default_trans_hyper(const SequenceDataset& ds, std::vector<std::string>* warnings) {
  TransHyperParams h;
  Row4 counts{};
  double total = 0.0;
  for (const auto& s : ds.sequences)
    for (auto y : s.syllables) {
      counts[y] += 1.0;
      total += 1.0;
    }
  if (total > 0.0) {
    // Unseen syllables get a small positive share so the prior stays proper.
    const double floor = 1e-6;
    double norm = 0.0;
    for (int y = 0; y < kNumSyllables; ++y) {
      h.lambda00[y] = counts[y] > 0.0 ? counts[y] / total : floor;
      if (counts[y] == 0.0 && warnings)
        warnings->push_back(std::string("syllable '") + syllable_label(static_cast<SyllableCode>(y)) +
                            "' never occurs; lambda00 entry floored");
      norm += h.lambda00[y];
    }
    for (auto& x : h.lambda00) x /= norm;
  }
  for (int j = 0; j < kNumExogenous; ++j) {
    auto c = calibrate_partition_concentration(ds.schema.covariates[j].d());
    h.alpha_partition[j] = c.alpha;
    if (!c.attained && warnings)
      warnings->push_back("prior P(k=1)=1/2 is unattainable for " + ds.schema.covariates[j].name + " (d=" +
                          std::to_string(ds.schema.covariates[j].d()) + "); using alpha=" + format_double(c.alpha) +
                          " with P(k=1)=" + format_double(c.achieved));
  }
  return h;
}

TransSampler::TransSampler(std::vector<FlatRecord> records, TransDims dims, TransHyperParams hyper)
    : records_(std::move(records)), dims_(dims), hyper_(hyper) {
  hyper_.validate();
  for (int j = 0; j < kNumExogenous; ++j)
    if (dims_.levels[j] < 1) throw InvalidSpec("covariate level count must be positive");
  if (dims_.n_mice < 1) throw InvalidSpec("need at least one mouse");
  replace_records(std::move(records_));
}

void TransSampler::replace_records(std::vector<FlatRecord> records) {
  for (const auto& r : records) {
    if (r.mouse < 0 || r.mouse >= dims_.n_mice) throw InvalidSpec("record mouse id out of range");
    for (int j = 0; j < kNumExogenous; ++j)
      if (r.covariates[j] < 0 || r.covariates[j] >= dims_.levels[j]) throw InvalidSpec("record covariate out of range");
    if (r.prev >= kNumSyllables || r.cur >= kNumSyllables) throw InvalidSpec("record syllable out of range");
  }
  records_ = std::move(records);
}

TransModelState TransSampler::init(RngStream& rng, std::vector<std::string>* warnings) const {
  (void)rng;  // initialization is deterministic
  TransModelState s;
  for (int j = 0; j < kNumExogenous; ++j) {
    s.partitions[j] = PartitionState::singletons(dims_.levels[j]);
    s.mu[j].assign(dims_.levels[j], 1.0 / dims_.levels[j]);
  }
  for (auto& row : s.lambda0) row = hyper_.lambda00;

  const int d2 = dims_.levels[1];
  std::vector<Counts4> fixed(dims_.levels[0] * d2, Counts4{});
  std::vector<Counts4> rand(dims_.n_mice, Counts4{});
  for (const auto& r : records_) {
    ++fixed[r.covariates[0] * d2 + r.covariates[1]][r.prev][r.cur];
    ++rand[r.mouse][r.prev][r.cur];
  }
  auto empirical = [&](const Counts4& c, const std::string& group) {
    Matrix4 m{};
    for (int a = 0; a < kNumSyllables; ++a) {
      std::int64_t tot = 0;
      for (auto x : c[a]) tot += x;
      if (tot == 0) {
        m[a] = hyper_.lambda00;
        if (warnings)
          warnings->push_back(std::string("EmptyConditional(") + syllable_label(static_cast<SyllableCode>(a)) + ", " +
                              group + "): row initialized to lambda00");
      } else {
        for (int b = 0; b < kNumSyllables; ++b) m[a][b] = static_cast<double>(c[a][b]) / static_cast<double>(tot);
      }
    }
    return m;
  };
  for (int x1 = 0; x1 < dims_.levels[0]; ++x1)
    for (int x2 = 0; x2 < d2; ++x2)
      s.lambda_fixed.push_back(
          empirical(fixed[x1 * d2 + x2], "covariates (" + std::to_string(x1) + "," + std::to_string(x2) + ")"));
  for (int i = 0; i < dims_.n_mice; ++i) s.lambda_rand.push_back(empirical(rand[i], mouse_group(i)));

  Row4 p;
  p.fill(0.8);
  s.pi0.assign(dims_.n_mice, p);
  s.v.assign(records_.size(), 0);
  s.alpha_fixed = hyper_.gamma_alpha_fixed.shape / hyper_.gamma_alpha_fixed.rate;
  s.alpha_rand = hyper_.gamma_alpha_rand.shape / hyper_.gamma_alpha_rand.rate;
  return s;
}

std::vector<TransSampler::Counts4> TransSampler::fixed_counts(const TransModelState& s) const {
  const int k2 = s.partitions[1].k;
  std::vector<Counts4> c(s.partitions[0].k * k2, Counts4{});
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (s.v[n]) continue;
    const auto& r = records_[n];
    ++c[s.partitions[0].z[r.covariates[0]] * k2 + s.partitions[1].z[r.covariates[1]]][r.prev][r.cur];
  }
  return c;
}

std::vector<TransSampler::Counts4> TransSampler::random_counts(const TransModelState& s) const {
  std::vector<Counts4> c(dims_.n_mice, Counts4{});
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (!s.v[n]) continue;
    const auto& r = records_[n];
    ++c[r.mouse][r.prev][r.cur];
  }
  return c;
}

double TransSampler::collapsed_log_marginal(const TransModelState& s,
                                            const std::array<std::vector<int>, kNumExogenous>& z) const {
  const int d1 = dims_.levels[0], d2 = dims_.levels[1];
  std::vector<Counts4> pooled(d1 * d2, Counts4{});
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (s.v[n]) continue;
    const auto& r = records_[n];
    ++pooled[z[0][r.covariates[0]] * d2 + z[1][r.covariates[1]]][r.prev][r.cur];
  }
  double lp = 0.0;
  for (int a = 0; a < kNumSyllables; ++a) {
    Row4 base;
    for (int b = 0; b < kNumSyllables; ++b) base[b] = conc(s.alpha_fixed * s.lambda0[a][b]);
    const double lb0 = log_multivariate_beta(base);
    for (const auto& cell : pooled) {
      std::int64_t tot = 0;
      for (auto x : cell[a]) tot += x;
      if (tot == 0) continue;
      Row4 post;
      for (int b = 0; b < kNumSyllables; ++b) post[b] = base[b] + static_cast<double>(cell[a][b]);
      lp += log_multivariate_beta(post) - lb0;
    }
  }
  return lp;
}

void TransSampler::step_partition_labels(TransModelState& s, RngStream& rng) const {
  const int d1 = dims_.levels[0], d2 = dims_.levels[1];
  // Per-level-pair counts, pooled under each candidate labeling below.
  std::vector<Counts4> level(d1 * d2, Counts4{});
  for (std::size_t n = 0; n < records_.size(); ++n) {
    if (s.v[n]) continue;
    const auto& r = records_[n];
    ++level[r.covariates[0] * d2 + r.covariates[1]][r.prev][r.cur];
  }
  Matrix4 base;
  Row4 lb0;
  for (int a = 0; a < kNumSyllables; ++a) {
    for (int b = 0; b < kNumSyllables; ++b) base[a][b] = conc(s.alpha_fixed * s.lambda0[a][b]);
    lb0[a] = log_multivariate_beta(base[a]);
  }
  std::vector<Counts4> pooled(d1 * d2);
  auto marginal = [&]() {
    std::fill(pooled.begin(), pooled.end(), Counts4{});
    const auto& z1 = s.partitions[0].z;
    const auto& z2 = s.partitions[1].z;
    for (int x1 = 0; x1 < d1; ++x1)
      for (int x2 = 0; x2 < d2; ++x2) {
        auto& dst = pooled[z1[x1] * d2 + z2[x2]];
        const auto& src = level[x1 * d2 + x2];
        for (int a = 0; a < kNumSyllables; ++a)
          for (int b = 0; b < kNumSyllables; ++b) dst[a][b] += src[a][b];
      }
    double lp = 0.0;
    for (const auto& cell : pooled)
      for (int a = 0; a < kNumSyllables; ++a) {
        if (cell[a][0] + cell[a][1] + cell[a][2] + cell[a][3] == 0) continue;
        Row4 post;
        for (int b = 0; b < kNumSyllables; ++b) post[b] = base[a][b] + static_cast<double>(cell[a][b]);
        lp += log_multivariate_beta(post) - lb0[a];
      }
    return lp;
  };

  std::vector<double> logw;
  for (int j = 0; j < kNumExogenous; ++j) {
    auto& part = s.partitions[j];
    const int d = dims_.levels[j];
    if (d == 1) continue;
    logw.assign(d, 0.0);
    for (int l = 0; l < d; ++l) {
      for (int h = 0; h < d; ++h) {
        if (!(s.mu[j][h] > 0.0)) {
          logw[h] = -std::numeric_limits<double>::infinity();
          continue;
        }
        part.z[l] = h;
        logw[h] = std::log(s.mu[j][h]) + marginal();
      }
      part.z[l] = static_cast<int>(sample_categorical_log(rng, logw));
    }
    part.relabel();
  }
  // lambda_fixed was integrated out above; redraw it for the new cluster pairs.
  step_lambda_fixed(s, rng);
}

void TransSampler::step_mu(TransModelState& s, RngStream& rng) const {
  for (int j = 0; j < kNumExogenous; ++j) {
    const int d = dims_.levels[j];
    std::vector<double> a(d, hyper_.alpha_partition[j]);
    for (int h : s.partitions[j].z) a[h] += 1.0;
    s.mu[j] = sample_dirichlet(rng, a);
  }
}

void TransSampler::step_v(TransModelState& s, RngStream& rng) const {
  for (std::size_t n = 0; n < records_.size(); ++n) {
    const auto& r = records_[n];
    const double pi0 = s.pi0[r.mouse][r.prev];
    const double p0 = pi0 * s.fixed(s.partitions[0].z[r.covariates[0]], s.partitions[1].z[r.covariates[1]])[r.prev][r.cur];
    const double p1 = (1.0 - pi0) * s.lambda_rand[r.mouse][r.prev][r.cur];
    const double tot = p0 + p1;
    const double q = tot > 0.0 ? p1 / tot : 1.0 - pi0;
    s.v[n] = sample_bernoulli(rng, std::clamp(q, 0.0, 1.0)) ? 1 : 0;
  }
}

void TransSampler::step_pi(TransModelState& s, RngStream& rng) const {
  std::vector<std::array<std::array<double, 2>, kNumSyllables>> n(dims_.n_mice);
  for (std::size_t k = 0; k < records_.size(); ++k) n[records_[k].mouse][records_[k].prev][s.v[k]] += 1.0;
  for (int i = 0; i < dims_.n_mice; ++i)
    for (int a = 0; a < kNumSyllables; ++a)
      s.pi0[i][a] = sample_beta(rng, hyper_.beta_pi.a + n[i][a][0], hyper_.beta_pi.b + n[i][a][1]);
}

void TransSampler::step_lambda_rand(TransModelState& s, RngStream& rng) const {
  auto c = random_counts(s);
  s.lambda_rand.resize(dims_.n_mice);
  Row4 a;
  for (int i = 0; i < dims_.n_mice; ++i)
    for (int y = 0; y < kNumSyllables; ++y) {
      for (int b = 0; b < kNumSyllables; ++b) a[b] = conc(s.alpha_rand * s.lambda0[y][b]) + static_cast<double>(c[i][y][b]);
      sample_dirichlet_into(rng, a, s.lambda_rand[i][y]);
    }
}

void TransSampler::step_lambda_fixed(TransModelState& s, RngStream& rng) const {
  auto c = fixed_counts(s);
  s.lambda_fixed.resize(c.size());
  Row4 a;
  for (std::size_t g = 0; g < c.size(); ++g)
    for (int y = 0; y < kNumSyllables; ++y) {
      for (int b = 0; b < kNumSyllables; ++b)
        a[b] = conc(s.alpha_fixed * s.lambda0[y][b]) + static_cast<double>(c[g][y][b]);
      sample_dirichlet_into(rng, a, s.lambda_fixed[g][y]);
    }
}

void TransSampler::step_auxiliary_and_concentrations(TransModelState& s, RngStream& rng) const {
  Matrix4 tables{};
  // Tables, log r and s for one level of the hierarchy (fixed pairs or mice).
  auto level = [&](const std::vector<Counts4>& counts, double alpha, double& m_total, double& log_r, double& s_total) {
    for (const auto& g : counts)
      for (int a = 0; a < kNumSyllables; ++a) {
        std::int64_t row = 0;
        for (int b = 0; b < kNumSyllables; ++b) {
          if (g[a][b] == 0) continue;
          const auto m = sample_crt(rng, g[a][b], conc(alpha * s.lambda0[a][b]));
          tables[a][b] += static_cast<double>(m);
          m_total += static_cast<double>(m);
          row += g[a][b];
        }
        if (row == 0) continue;
        log_r += std::log(sample_beta(rng, alpha + 1.0, static_cast<double>(row)));
        s_total += sample_bernoulli(rng, static_cast<double>(row) / (static_cast<double>(row) + alpha)) ? 1.0 : 0.0;
      }
  };
  double v0 = 0, log_r0 = 0, s0 = 0, v_rand = 0, log_r_rand = 0, s_rand = 0;
  level(fixed_counts(s), s.alpha_fixed, v0, log_r0, s0);
  level(random_counts(s), s.alpha_rand, v_rand, log_r_rand, s_rand);
  s.alpha_fixed = sample_gamma(rng, hyper_.gamma_alpha_fixed.shape + v0 - s0, hyper_.gamma_alpha_fixed.rate - log_r0);
  s.alpha_rand = sample_gamma(rng, hyper_.gamma_alpha_rand.shape + v_rand - s_rand, hyper_.gamma_alpha_rand.rate - log_r_rand);
  s.table_counts = tables;
}

void TransSampler::step_lambda0(TransModelState& s, RngStream& rng) const {
  Row4 a;
  for (int y = 0; y < kNumSyllables; ++y) {
    for (int b = 0; b < kNumSyllables; ++b) a[b] = hyper_.alpha00 * hyper_.lambda00[b] + s.table_counts[y][b];
    sample_dirichlet_into(rng, a, s.lambda0[y]);
  }
}

void TransSampler::sweep(TransModelState& s, RngStream& rng) const {
  step_partition_labels(s, rng);
  step_mu(s, rng);
  step_v(s, rng);
  step_pi(s, rng);
  step_lambda_rand(s, rng);
  step_lambda_fixed(s, rng);
  step_auxiliary_and_concentrations(s, rng);
  step_lambda0(s, rng);
  // Steps 7-9 integrate out both lambda levels; close the block.
  step_lambda_fixed(s, rng);
  step_lambda_rand(s, rng);
}

double TransSampler::log_likelihood(const TransModelState& s) const {
  double ll = 0.0;
  for (const auto& r : records_) {
    const double pi0 = s.pi0[r.mouse][r.prev];
    const double p = pi0 * s.fixed(s.partitions[0].z[r.covariates[0]], s.partitions[1].z[r.covariates[1]])[r.prev][r.cur] +
                     (1.0 - pi0) * s.lambda_rand[r.mouse][r.prev][r.cur];
    ll += std::log(p);
  }
  return ll;
}

std::vector<Matrix4> TransSampler::population_matrices(const TransModelState& s) const {
  const double p0 = population_pi0();
  std::vector<Matrix4> out;
  for (int x1 = 0; x1 < dims_.levels[0]; ++x1)
    for (int x2 = 0; x2 < dims_.levels[1]; ++x2) {
      const auto& f = s.fixed(s.partitions[0].z[x1], s.partitions[1].z[x2]);
      Matrix4 m;
      for (int a = 0; a < kNumSyllables; ++a)
        for (int b = 0; b < kNumSyllables; ++b) m[a][b] = p0 * f[a][b] + (1.0 - p0) * s.lambda0[a][b];
      out.push_back(m);
    }
  return out;
}

void TransSampler::check_invariants(const TransModelState& s, double tol) const {
  for (int j = 0; j < kNumExogenous; ++j) {
    const auto& p = s.partitions[j];
    if (p.d() != dims_.levels[j]) throw DomainError("partition size mismatch");
    if (canonical_labels(p.z) != p.z) throw DomainError("partition labels are not contiguous");
    int k = *std::max_element(p.z.begin(), p.z.end()) + 1;
    if (k != p.k || k < 1 || k > p.d()) throw DomainError("partition k mismatch");
    double sum = std::accumulate(s.mu[j].begin(), s.mu[j].end(), 0.0);
    if (static_cast<int>(s.mu[j].size()) != dims_.levels[j] || std::abs(sum - 1.0) > tol)
      throw DomainError("mu is not a probability vector");
  }
  for (int a = 0; a < kNumSyllables; ++a) check_row(s.lambda0[a], tol, "lambda0");
  if (s.lambda_fixed.size() != static_cast<std::size_t>(s.partitions[0].k * s.partitions[1].k))
    throw DomainError("lambda_fixed is not indexed by the occupied cluster pairs");
  for (const auto& m : s.lambda_fixed)
    for (const auto& row : m) check_row(row, tol, "lambda_fixed");
  if (s.lambda_rand.size() != static_cast<std::size_t>(dims_.n_mice)) throw DomainError("lambda_rand size mismatch");
  for (const auto& m : s.lambda_rand)
    for (const auto& row : m) check_row(row, tol, "lambda_rand");
  for (const auto& row : s.pi0)
    for (double p : row)
      if (!(p > 0.0 && p < 1.0)) throw DomainError("pi0 outside (0, 1)");
  if (!(s.alpha_fixed > 0.0) || !(s.alpha_rand > 0.0)) throw DomainError("concentration not positive");
  if (s.v.size() != records_.size()) throw DomainError("v size mismatch");
}

}  // namespace mrmm
