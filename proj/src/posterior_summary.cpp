#include "mrmm/posterior_summary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

template <class T>
void require_draws(const std::vector<T>& draws) {
  if (draws.empty()) throw EmptyTrace("trace has no kept draws");
}

double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double var_of(std::span<const double> x, double m) {
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

// Running element-wise sums for a table, turned into mean and population sd.
struct TableAccumulator {
  Table sum, sum_sq;
  void add(const Table& t) {
    if (sum.empty()) {
      sum.assign(t.size(), std::vector<double>(t.empty() ? 0 : t[0].size(), 0.0));
      sum_sq = sum;
    }
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t k = 0; k < t[i].size(); ++k) {
        sum[i][k] += t[i][k];
        sum_sq[i][k] += t[i][k] * t[i][k];
      }
  }
  void finish(double n, Table& mean, Table& sd) const {
    mean = sum;
    sd = sum;
    for (std::size_t i = 0; i < sum.size(); ++i)
      for (std::size_t k = 0; k < sum[i].size(); ++k) {
        mean[i][k] = sum[i][k] / n;
        sd[i][k] = std::sqrt(std::max(0.0, sum_sq[i][k] / n - mean[i][k] * mean[i][k]));
      }
  }
};

std::vector<std::string> level_labels(const DataSchema& schema, int r) {
  if (r < kNumExogenous) return schema.covariates[r].levels;
  std::vector<std::string> out;
  for (int a = 0; a < kNumSyllables; ++a) out.emplace_back(1, syllable_label(static_cast<SyllableCode>(a)));
  return out;
}

}  // namespace

TransDraw make_trans_draw(const TransSampler& sampler, const TransModelState& s, int iteration) {
  TransDraw d;
  d.iteration = iteration;
  for (int j = 0; j < kNumExogenous; ++j) d.k[j] = s.partitions[j].k;
  d.population = sampler.population_matrices(s);
  d.pi0 = s.pi0;
  d.alpha_fixed = s.alpha_fixed;
  d.alpha_rand = s.alpha_rand;
  d.log_likelihood = sampler.log_likelihood(s);
  return d;
}

IsiDraw make_isi_draw(const IsiSampler& sampler, const IsiModelState& s, int iteration) {
  IsiDraw d;
  d.iteration = iteration;
  for (int r = 0; r < kNumIsiCovariates; ++r) d.k[r] = s.partitions[r].k;
  d.components = s.components;
  d.assigned.assign(s.K, 0.0);
  for (int z : s.z) d.assigned[z] += 1.0;
  const auto& L = sampler.dims().levels;
  for (int x1 = 0; x1 < L[0]; ++x1)
    for (int x2 = 0; x2 < L[1]; ++x2)
      for (int p = 0; p < L[2]; ++p)
        d.cell_weights.push_back(
            s.lambda_fixed[s.triple_index(s.partitions[0].z[x1], s.partitions[1].z[x2], s.partitions[2].z[p])]);
  d.lambda0 = s.lambda0;
  d.pi0 = s.pi0;
  d.alpha_fixed = s.alpha_fixed;
  d.alpha_rand = s.alpha_rand;
  d.log_likelihood = sampler.log_likelihood(s);
  return d;
}

std::vector<int> canonical_order(const std::vector<GammaParams>& components) {
  std::vector<int> order(components.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return components[a].shape / components[a].rate < components[b].shape / components[b].rate;
  });
  return order;
}

IsiDraw canonicalize(const IsiDraw& d) {
  const auto order = canonical_order(d.components);
  auto permute = [&](const std::vector<double>& v) {
    if (v.size() != order.size()) return v;
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < order.size(); ++k) out[k] = v[order[k]];
    return out;
  };
  IsiDraw out = d;
  for (std::size_t k = 0; k < order.size(); ++k) out.components[k] = d.components[order[k]];
  out.assigned = permute(d.assigned);
  out.lambda0 = permute(d.lambda0);
  for (auto& row : out.cell_weights) row = permute(row);
  for (auto& row : out.pi0) row = permute(row);
  return out;
}

ClusterCountPosterior cluster_count_posterior(std::span<const int> ks, int d) {
  if (ks.empty()) throw EmptyTrace("trace has no kept draws");
  ClusterCountPosterior p;
  std::vector<std::size_t> counts(d, 0);
  for (int k : ks) {
    if (k < 1 || k > d) throw InvalidSpec("cluster count " + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
    ++counts[k - 1];
  }
  const double n = static_cast<double>(ks.size());
  for (auto c : counts) p.prob.push_back(static_cast<double>(c) / n);
  p.p_gt1 = static_cast<double>(ks.size() - counts[0]) / n;
  return p;
}

std::vector<int> trans_k_column(const std::vector<TransDraw>& draws, int j) {
  std::vector<int> out;
  for (const auto& d : draws) out.push_back(d.k[j]);
  return out;
}

std::vector<int> isi_k_column(const std::vector<IsiDraw>& draws, int r) {
  std::vector<int> out;
  for (const auto& d : draws) out.push_back(d.k[r]);
  return out;
}

MatrixSummary population_transition_means(const std::vector<TransDraw>& draws) {
  require_draws(draws);
  TableAccumulator acc;
  auto flatten = [](const std::vector<Matrix4>& ms) {
    Table t;
    for (const auto& m : ms)
      for (const auto& row : m) t.emplace_back(row.begin(), row.end());
    return t;
  };
  for (const auto& d : draws) acc.add(flatten(d.population));
  Table mean, sd;
  acc.finish(static_cast<double>(draws.size()), mean, sd);
  MatrixSummary out;
  const std::size_t n = draws.front().population.size();
  out.mean.resize(n);
  out.sd.resize(n);
  for (std::size_t c = 0; c < n; ++c)
    for (int a = 0; a < kNumSyllables; ++a)
      for (int b = 0; b < kNumSyllables; ++b) {
        out.mean[c][a][b] = mean[c * kNumSyllables + a][b];
        out.sd[c][a][b] = sd[c * kNumSyllables + a][b];
      }
  // A single draw is returned verbatim rather than through sum / 1.
  if (draws.size() == 1) out.mean = draws.front().population;
  return out;
}

std::array<Table, kNumIsiCovariates> level_marginals(const Table& cells,
                                                      const std::array<int, kNumIsiCovariates>& levels) {
  const int n_cells = levels[0] * levels[1] * levels[2];
  if (static_cast<int>(cells.size()) != n_cells) throw InvalidSpec("cell table does not match the covariate levels");
  const std::size_t K = cells.empty() ? 0 : cells[0].size();
  std::array<Table, kNumIsiCovariates> out;
  for (int r = 0; r < kNumIsiCovariates; ++r) out[r].assign(levels[r], std::vector<double>(K, 0.0));
  for (int x1 = 0; x1 < levels[0]; ++x1)
    for (int x2 = 0; x2 < levels[1]; ++x2)
      for (int p = 0; p < levels[2]; ++p) {
        const auto& w = cells[(x1 * levels[1] + x2) * levels[2] + p];
        const std::array<int, kNumIsiCovariates> at{x1, x2, p};
        for (int r = 0; r < kNumIsiCovariates; ++r)
          for (std::size_t k = 0; k < K; ++k) out[r][at[r]][k] += w[k];
      }
  for (int r = 0; r < kNumIsiCovariates; ++r) {
    const double share = static_cast<double>(n_cells / levels[r]);
    for (auto& row : out[r])
      for (auto& x : row) x /= share;
  }
  return out;
}

MixtureTables mixture_probability_tables(const std::vector<IsiDraw>& draws,
                                         const std::array<int, kNumIsiCovariates>& levels) {
  require_draws(draws);
  MixtureTables t;
  t.K = static_cast<int>(draws.front().components.size());
  TableAccumulator cells;
  std::array<TableAccumulator, kNumIsiCovariates> lv;
  for (const auto& raw : draws) {
    const auto d = canonicalize(raw);
    cells.add(d.cell_weights);
    const auto m = level_marginals(d.cell_weights, levels);
    for (int r = 0; r < kNumIsiCovariates; ++r) lv[r].add(m[r]);
  }
  const double n = static_cast<double>(draws.size());
  cells.finish(n, t.cell_mean, t.cell_sd);
  for (int r = 0; r < kNumIsiCovariates; ++r) lv[r].finish(n, t.level_mean[r], t.level_sd[r]);
  t.cell_last = draws.back().cell_weights;
  t.level_last = level_marginals(t.cell_last, levels);
  return t;
}

CoefStats coefficient_stats(std::span<const double> values) {
  if (values.empty()) throw EmptyTrace("no coefficients to summarize");
  CoefStats s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  if (s.min == s.max) {
    s.mean = s.min;  // exact, no rounding from the sum
    return s;
  }
  s.mean = mean_of(values);
  s.sd = std::sqrt(var_of(values, s.mean));
  return s;
}

namespace {

// rows(d)[i][row] is mouse i's coefficient for that row in draw d.
template <class Draw, class Rows>
CoefficientSummary summarize_coefficients(const std::vector<Draw>& draws, std::size_t n_rows, Rows rows) {
  require_draws(draws);
  CoefficientSummary c;
  const Table last = rows(draws.back());
  TableAccumulator acc;
  for (const auto& d : draws) acc.add(rows(d));
  Table mean, sd;
  acc.finish(static_cast<double>(draws.size()), mean, sd);
  for (std::size_t row = 0; row < n_rows; ++row) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < last.size(); ++i) {
      a.push_back(last[i][row]);
      b.push_back(mean[i][row]);
    }
    c.last.push_back(coefficient_stats(a));
    c.averaged.push_back(coefficient_stats(b));
  }
  return c;
}

}  // namespace

CoefficientSummary trans_coefficient_summary(const std::vector<TransDraw>& draws) {
  return summarize_coefficients(draws, kNumSyllables, [](const TransDraw& d) {
    Table t;
    for (const auto& row : d.pi0) t.emplace_back(row.begin(), row.end());
    return t;
  });
}

CoefficientSummary isi_coefficient_summary(const std::vector<IsiDraw>& draws) {
  require_draws(draws);
  return summarize_coefficients(draws, draws.front().components.size(),
                                [](const IsiDraw& d) { return canonicalize(d).pi0; });
}

ComponentSummary component_summary(const std::vector<IsiDraw>& draws) {
  require_draws(draws);
  const std::size_t K = draws.front().components.size();
  ComponentSummary c;
  c.shape_mean.assign(K, 0.0);
  c.rate_mean.assign(K, 0.0);
  c.mean_mean.assign(K, 0.0);
  c.assigned_mean.assign(K, 0.0);
  for (const auto& raw : draws) {
    const auto d = canonicalize(raw);
    for (std::size_t k = 0; k < K; ++k) {
      c.shape_mean[k] += d.components[k].shape;
      c.rate_mean[k] += d.components[k].rate;
      c.mean_mean[k] += d.components[k].shape / d.components[k].rate;
      c.assigned_mean[k] += d.assigned.empty() ? 0.0 : d.assigned[k];
    }
  }
  const double n = static_cast<double>(draws.size());
  for (auto* v : {&c.shape_mean, &c.rate_mean, &c.mean_mean, &c.assigned_mean})
    for (auto& x : *v) x /= n;
  return c;
}

double effective_sample_size(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return static_cast<double>(n);
  const double m = mean_of(x);
  const double v = var_of(x, m);
  if (v == 0.0) return static_cast<double>(n);
  auto rho = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
    return s / (static_cast<double>(n) * v);
  };
  // Sum autocorrelation pairs while they stay positive.
  double tau = -1.0;
  for (std::size_t t = 0; 2 * t + 1 < n; ++t) {
    const double pair = rho(2 * t) + rho(2 * t + 1);
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return static_cast<double>(n) / std::max(tau, 1e-12);
}

double geweke_z(std::span<const double> x, double first, double last) {
  const std::size_t na = static_cast<std::size_t>(first * static_cast<double>(x.size()));
  const std::size_t nb = static_cast<std::size_t>(last * static_cast<double>(x.size()));
  if (na < 2 || nb < 2) throw InsufficientDraws("trace too short for a Geweke test");
  auto a = x.subspan(0, na), b = x.subspan(x.size() - nb);
  const double ma = mean_of(a), mb = mean_of(b);
  const double se2 = var_of(a, ma) / effective_sample_size(a) + var_of(b, mb) / effective_sample_size(b);
  if (se2 == 0.0) return ma == mb ? 0.0 : std::copysign(INFINITY, ma - mb);
  return (ma - mb) / std::sqrt(se2);
}

double r_hat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw InsufficientDraws("R-hat needs at least two chains");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 2) throw InsufficientDraws("R-hat needs at least two draws per chain");
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    std::span<const double> s(c.data(), n);
    const double m = mean_of(s);
    means.push_back(m);
    vars.push_back(var_of(s, m) * static_cast<double>(n) / static_cast<double>(n - 1));
  }
  const double m = static_cast<double>(chains.size());
  const double W = mean_of(vars);
  const double grand = mean_of(means);
  double B = 0.0;
  for (double x : means) B += (x - grand) * (x - grand);
  B *= static_cast<double>(n) / (m - 1.0);
  if (W == 0.0) return 1.0;
  const double nn = static_cast<double>(n);
  return std::sqrt(((nn - 1.0) / nn * W + B / nn) / W);
}

std::string k_posterior_csv(const std::vector<std::pair<std::string, ClusterCountPosterior>>& rows) {
  std::ostringstream os;
  os << "covariate,k,prob\n";
  for (const auto& [name, p] : rows)
    for (std::size_t k = 0; k < p.prob.size(); ++k) os << name << ',' << k + 1 << ',' << format_double(p.prob[k]) << '\n';
  return os.str();
}

std::string transition_means_csv(const MatrixSummary& m, const DataSchema& schema) {
  const auto& g = schema.covariates[0].levels;
  const auto& c = schema.covariates[1].levels;
  if (m.mean.size() != g.size() * c.size()) throw InvalidSpec("transition summary does not match the schema");
  std::ostringstream os;
  os << "genotype,context,from,to,mean,sd\n";
  for (std::size_t x1 = 0; x1 < g.size(); ++x1)
    for (std::size_t x2 = 0; x2 < c.size(); ++x2) {
      const std::size_t cell = x1 * c.size() + x2;
      for (int a = 0; a < kNumSyllables; ++a)
        for (int b = 0; b < kNumSyllables; ++b)
          os << g[x1] << ',' << c[x2] << ',' << syllable_label(static_cast<SyllableCode>(a)) << ','
             << syllable_label(static_cast<SyllableCode>(b)) << ',' << format_double(m.mean[cell][a][b]) << ','
             << format_double(m.sd[cell][a][b]) << '\n';
    }
  return os.str();
}

std::string mixture_probs_csv(const MixtureTables& t, const DataSchema& schema) {
  std::ostringstream os;
  os << "covariate,level,component,mean,sd,last\n";
  auto emit = [&](const std::string& cov, const std::string& level, std::size_t row, const Table& mean,
                  const Table& sd, const Table& last) {
    for (int k = 0; k < t.K; ++k)
      os << cov << ',' << level << ',' << k + 1 << ',' << format_double(mean[row][k]) << ','
         << format_double(sd[row][k]) << ',' << format_double(last[row][k]) << '\n';
  };
  std::array<std::vector<std::string>, kNumIsiCovariates> labels;
  for (int r = 0; r < kNumIsiCovariates; ++r) labels[r] = level_labels(schema, r);
  const std::array<std::string, kNumIsiCovariates> names{schema.covariates[0].name, schema.covariates[1].name,
                                                         "prev_syllable"};
  for (int r = 0; r < kNumIsiCovariates; ++r) {
    if (t.level_mean[r].size() != labels[r].size()) throw InvalidSpec("mixture tables do not match the schema");
    for (std::size_t l = 0; l < labels[r].size(); ++l)
      emit(names[r], labels[r][l], l, t.level_mean[r], t.level_sd[r], t.level_last[r]);
  }
  std::size_t row = 0;
  for (const auto& a : labels[0])
    for (const auto& b : labels[1])
      for (const auto& c : labels[2]) emit("cell", a + '.' + b + '.' + c, row++, t.cell_mean, t.cell_sd, t.cell_last);
  return os.str();
}

std::string coefficients_csv(const CoefficientSummary& c, const std::string& row_label) {
  std::ostringstream os;
  os << row_label << ",source,min,max,mean,sd\n";
  auto emit = [&](const std::vector<CoefStats>& v, const char* source) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string label = row_label == "prev_syllable"
                                    ? std::string(1, syllable_label(static_cast<SyllableCode>(i)))
                                    : std::to_string(i + 1);
      os << label << ',' << source << ',' << format_double(v[i].min) << ',' << format_double(v[i].max) << ','
         << format_double(v[i].mean) << ',' << format_double(v[i].sd) << '\n';
    }
  };
  emit(c.last, "last");
  emit(c.averaged, "averaged");
  return os.str();
}

std::string components_csv(const ComponentSummary& c) {
  std::ostringstream os;
  os << "component,shape,rate,mean,assigned\n";
  for (std::size_t k = 0; k < c.shape_mean.size(); ++k)
    os << k + 1 << ',' << format_double(c.shape_mean[k]) << ',' << format_double(c.rate_mean[k]) << ','
       << format_double(c.mean_mean[k]) << ',' << format_double(c.assigned_mean[k]) << '\n';
  return os.str();
}

}  // namespace mrmm
