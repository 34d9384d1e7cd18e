#include "mrmm/model_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

// Sum of a vector in sorted order, so the result ignores input order.
double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void lse_push(double x, double& mx, double& sum) {
  if (x > mx) {
    sum = sum * std::exp(mx - x) + 1.0;
    mx = x;
  } else {
    sum += std::exp(x - mx);
  }
}

}  // namespace

void Schedule::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be positive");
  if (burn_in < 0 || burn_in >= iterations) throw ConfigError("burn_in must be in [0, iterations)");
  if (thin < 1) throw ConfigError("thin must be at least 1");
}

LogDensityTrace::LogDensityTrace(std::size_t n_records, std::size_t memory_budget_bytes)
    : n_records_(n_records), budget_(memory_budget_bytes) {}

void LogDensityTrace::to_streaming() {
  stream_.assign(n_records_, Stream{});
  const std::size_t draws = n_draws_;
  for (std::size_t d = 0; d < draws; ++d)
    for (std::size_t n = 0; n < n_records_; ++n) {
      const double x = dense_[d * n_records_ + n];
      auto& s = stream_[n];
      lse_push(-x, s.max_neg, s.sum_neg);
      lse_push(x, s.max_pos, s.sum_pos);
      s.mean += (x - s.mean) / static_cast<double>(d + 1);
    }
  dense_.clear();
  dense_.shrink_to_fit();
  streaming_ = true;
}

void LogDensityTrace::add_draw(std::span<const double> log_f) {
  if (log_f.size() != n_records_) throw InvalidSpec("log density row has the wrong record count");
  if (!streaming_ && (n_draws_ + 1) * n_records_ * sizeof(double) > budget_) to_streaming();
  if (streaming_) {
    const double d = static_cast<double>(n_draws_ + 1);
    for (std::size_t n = 0; n < n_records_; ++n) {
      auto& s = stream_[n];
      lse_push(-log_f[n], s.max_neg, s.sum_neg);
      lse_push(log_f[n], s.max_pos, s.sum_pos);
      s.mean += (log_f[n] - s.mean) / d;
    }
  } else {
    dense_.insert(dense_.end(), log_f.begin(), log_f.end());
  }
  ++n_draws_;
}

void LogDensityTrace::merge(const LogDensityTrace& other) {
  if (other.n_records_ != n_records_) throw InvalidSpec("cannot merge traces over different records");
  if (!streaming_ && !other.streaming_ && (n_draws_ + other.n_draws_) * n_records_ * sizeof(double) <= budget_) {
    dense_.insert(dense_.end(), other.dense_.begin(), other.dense_.end());
    n_draws_ += other.n_draws_;
    return;
  }
  if (!streaming_) to_streaming();
  LogDensityTrace o = other;
  if (!o.streaming_) o.to_streaming();
  const double wa = static_cast<double>(n_draws_), wb = static_cast<double>(o.n_draws_);
  auto combine = [](double& mx, double& sum, double omx, double osum) {
    if (osum == 0.0) return;
    const double m = std::max(mx, omx);
    sum = sum * std::exp(mx - m) + osum * std::exp(omx - m);
    mx = m;
  };
  for (std::size_t n = 0; n < n_records_; ++n) {
    auto& s = stream_[n];
    const auto& t = o.stream_[n];
    combine(s.max_neg, s.sum_neg, t.max_neg, t.sum_neg);
    combine(s.max_pos, s.sum_pos, t.max_pos, t.sum_pos);
    s.mean = (wa * s.mean + wb * t.mean) / (wa + wb);
  }
  n_draws_ += o.n_draws_;
}

void LogDensityTrace::check(std::size_t min_draws) const {
  if (n_draws_ == 0 || n_draws_ < min_draws)
    throw InsufficientDraws("need at least " + std::to_string(std::max<std::size_t>(min_draws, 1)) +
                            " kept draws, have " + std::to_string(n_draws_));
}

double LogDensityTrace::lpml(std::size_t min_draws) const {
  check(min_draws);
  const double log_s = std::log(static_cast<double>(n_draws_));
  std::vector<double> terms(n_records_), col(n_draws_);
  for (std::size_t n = 0; n < n_records_; ++n) {
    double lse;
    if (streaming_) {
      lse = stream_[n].max_neg + std::log(stream_[n].sum_neg);
    } else {
      for (std::size_t d = 0; d < n_draws_; ++d) col[d] = -dense_[d * n_records_ + n];
      std::sort(col.begin(), col.end());
      const double mx = col.back();
      double s = 0.0;
      for (double x : col) s += std::exp(x - mx);
      lse = mx + std::log(s);
    }
    // -log of the mean of 1/f.
    terms[n] = log_s - lse;
  }
  return sorted_sum(terms);
}

LogDensityTrace::Waic LogDensityTrace::waic(std::size_t min_draws) const {
  check(min_draws);
  const double S = static_cast<double>(n_draws_), log_s = std::log(S);
  std::vector<double> lppd(n_records_), pen(n_records_), col(n_draws_);
  for (std::size_t n = 0; n < n_records_; ++n) {
    double log_mean_f, gap;
    if (streaming_) {
      const auto& s = stream_[n];
      log_mean_f = s.max_pos + std::log(s.sum_pos) - log_s;
      gap = log_mean_f - s.mean;
    } else {
      for (std::size_t d = 0; d < n_draws_; ++d) col[d] = dense_[d * n_records_ + n];
      std::sort(col.begin(), col.end());
      // Both expectations relative to the max: exactly zero gap for a constant column.
      const double mx = col.back();
      double se = 0.0, sm = 0.0;
      for (double x : col) {
        se += std::exp(x - mx);
        sm += x - mx;
      }
      log_mean_f = mx + std::log(se / S);
      gap = std::log(se / S) - sm / S;
    }
    lppd[n] = log_mean_f;
    pen[n] = std::max(0.0, gap);  // Jensen: negative only through rounding
  }
  Waic w;
  const double total_lppd = sorted_sum(lppd);
  w.p_waic = 2.0 * sorted_sum(pen);
  w.waic = -2.0 * (total_lppd - w.p_waic);
  return w;
}

SelectionScore score_isi_fit(const std::vector<FlatRecord>& records, const IsiDims& dims, int K,
                             const SelectKConfig& config, std::vector<std::string>* warnings) {
  config.schedule.validate();
  IsiSampler sampler(records, dims, K, config.hyper, config.options);
  RngStream rng(config.seed, static_cast<std::uint64_t>(K));
  auto state = sampler.init(rng, warnings);
  LogDensityTrace trace(records.size(), config.memory_budget_bytes);
  std::vector<double> row;
  for (int it = 1; it <= config.schedule.iterations; ++it) {
    sampler.sweep(state, rng, warnings);
    if (!config.schedule.keep(it)) continue;
    sampler.record_log_densities(state, row);
    trace.add_draw(row);
  }
  SelectionScore s;
  s.K = K;
  s.lpml = trace.lpml(config.min_draws);
  auto w = trace.waic(config.min_draws);
  s.waic = w.waic;
  s.p_waic = w.p_waic;
  s.n_draws_used = trace.n_draws();
  return s;
}

int recommend_k(const std::vector<SelectionScore>& scores, double plateau_tolerance) {
  if (scores.empty()) throw InvalidSpec("K grid is empty");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : scores) best = std::max(best, s.lpml);
  const double cut = best - plateau_tolerance * std::abs(best);
  int k = std::numeric_limits<int>::max();
  for (const auto& s : scores)
    if (s.lpml >= cut) k = std::min(k, s.K);
  return k;
}

SelectionResult select_k(const std::vector<FlatRecord>& records, const IsiDims& dims, const std::vector<int>& grid,
                         const SelectKConfig& config) {
  if (grid.empty()) throw InvalidSpec("K grid is empty");
  SelectionResult res;
  res.scores.resize(grid.size());
  std::vector<std::string> errors(grid.size());
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(config.threads, 1)), 1, grid.size());
  auto run = [&](std::size_t first) {
    for (std::size_t g = first; g < grid.size(); g += workers) {
      try {
        res.scores[g] = score_isi_fit(records, dims, grid[g], config);
      } catch (const std::exception& e) {
        errors[g] = e.what();
      }
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (std::size_t g = 0; g < grid.size(); ++g)
    if (!errors[g].empty()) throw InvalidSpec("fit for K=" + std::to_string(grid[g]) + " failed: " + errors[g]);
  res.recommended_K = recommend_k(res.scores, config.plateau_tolerance);
  return res;
}

std::string scores_csv(const std::vector<SelectionScore>& scores) {
  std::ostringstream os;
  os << "K,lpml,waic,p_waic\n";
  for (const auto& s : scores)
    os << s.K << ',' << format_double(s.lpml) << ',' << format_double(s.waic) << ',' << format_double(s.p_waic) << '\n';
  return os.str();
}

}  // namespace mrmm
