#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrmm/isi_sampler.hpp"

namespace mrmm {

// Iteration schedule shared by every fit. Iterations are numbered from 1;
// draw t is kept when t > burn_in and (t - burn_in) % thin == 0.
struct Schedule {
  int iterations = 10000;
  int burn_in = 2000;
  int thin = 5;

  void validate() const;
  bool keep(int iteration) const { return iteration > burn_in && (iteration - burn_in) % thin == 0; }
  int kept() const { return (iterations - burn_in) / thin; }
};

// Per-record log densities over kept draws. Stores the full draws x records
// matrix while it fits in the memory budget and otherwise falls back to
// per-record streaming accumulators.
class LogDensityTrace {
 public:
  explicit LogDensityTrace(std::size_t n_records, std::size_t memory_budget_bytes = std::size_t{1} << 30);

  void add_draw(std::span<const double> log_f);
  // Appends the draws of another trace over the same records.
  void merge(const LogDensityTrace& other);

  std::size_t n_records() const { return n_records_; }
  std::size_t n_draws() const { return n_draws_; }
  bool streaming() const { return streaming_; }

  double lpml(std::size_t min_draws = 100) const;
  struct Waic {
    double waic = 0.0;
    double p_waic = 0.0;
  };
  Waic waic(std::size_t min_draws = 100) const;

 private:
  // Running sums for one record, each log-sum-exp kept as (max, scaled sum).
  struct Stream {
    double max_neg = -1e308, sum_neg = 0.0;  // over -log f
    double max_pos = -1e308, sum_pos = 0.0;  // over log f
    double mean = 0.0;                       // Welford mean of log f
  };
  void to_streaming();
  void check(std::size_t min_draws) const;

  std::size_t n_records_;
  std::size_t budget_;
  std::size_t n_draws_ = 0;
  bool streaming_ = false;
  std::vector<double> dense_;  // draw-major
  std::vector<Stream> stream_;
};

struct SelectionScore {
  int K = 0;
  double lpml = 0.0;
  double waic = 0.0;
  double p_waic = 0.0;
  std::size_t n_draws_used = 0;
};

struct SelectKConfig {
  Schedule schedule;
  std::uint64_t seed = 1;
  IsiHyperParams hyper;  // lambda00 is re-derived per K when empty
  IsiSamplerOptions options;
  double plateau_tolerance = 1e-3;  // relative to |max LPML|
  std::size_t min_draws = 100;
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
  int threads = 1;
};

struct SelectionResult {
  std::vector<SelectionScore> scores;  // grid order
  int recommended_K = 0;
};

// Fits one ISI model and scores it.
SelectionScore score_isi_fit(const std::vector<FlatRecord>& records, const IsiDims& dims, int K,
                             const SelectKConfig& config, std::vector<std::string>* warnings = nullptr);

// Smallest K whose LPML lies within tolerance * |max LPML| of the maximum.
int recommend_k(const std::vector<SelectionScore>& scores, double plateau_tolerance);

// Fits the grid concurrently (one stream per K) and recommends K.
SelectionResult select_k(const std::vector<FlatRecord>& records, const IsiDims& dims, const std::vector<int>& grid,
                         const SelectKConfig& config);

// Header K,lpml,waic,p_waic.
std::string scores_csv(const std::vector<SelectionScore>& scores);

}  // namespace mrmm
