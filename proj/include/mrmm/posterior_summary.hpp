#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mrmm/isi_sampler.hpp"
#include "mrmm/trans_sampler.hpp"

namespace mrmm {

// One kept draw of the transition model, reduced to what summaries need.
struct TransDraw {
  int iteration = 0;
  std::array<int, kNumExogenous> k{1, 1};
  std::vector<Matrix4> population;  // index x1 * d2 + x2
  std::vector<Row4> pi0;            // per mouse, per preceding syllable
  double alpha_fixed = 1.0;
  double alpha_rand = 1.0;
  double log_likelihood = 0.0;
};

// One kept draw of the ISI model. Cell c = (x1 * d2 + x2) * d3 + prev.
struct IsiDraw {
  int iteration = 0;
  std::array<int, kNumIsiCovariates> k{1, 1, 1};
  std::vector<GammaParams> components;
  std::vector<double> assigned;                   // records per component
  std::vector<std::vector<double>> cell_weights;  // fixed-effect weights per cell
  std::vector<double> lambda0;
  std::vector<std::vector<double>> pi0;  // per mouse, per component
  double alpha_fixed = 1.0;
  double alpha_rand = 1.0;
  double log_likelihood = 0.0;
};

TransDraw make_trans_draw(const TransSampler& sampler, const TransModelState& s, int iteration);
IsiDraw make_isi_draw(const IsiSampler& sampler, const IsiModelState& s, int iteration);

// Component order by increasing mean shape / rate (ties keep index order).
std::vector<int> canonical_order(const std::vector<GammaParams>& components);
// Applies canonical_order to every per-component field.
IsiDraw canonicalize(const IsiDraw& d);

struct ClusterCountPosterior {
  std::vector<double> prob;  // prob[k - 1], k = 1..d
  double p_gt1 = 0.0;
};
ClusterCountPosterior cluster_count_posterior(std::span<const int> ks, int d);
std::vector<int> trans_k_column(const std::vector<TransDraw>& draws, int j);
std::vector<int> isi_k_column(const std::vector<IsiDraw>& draws, int r);

struct MatrixSummary {
  std::vector<Matrix4> mean;
  std::vector<Matrix4> sd;
};
MatrixSummary population_transition_means(const std::vector<TransDraw>& draws);

using Table = std::vector<std::vector<double>>;  // rows x K

struct MixtureTables {
  int K = 0;
  Table cell_mean, cell_sd, cell_last;  // per cell
  // Per covariate level, averaging cells equally over the other covariates.
  std::array<Table, kNumIsiCovariates> level_mean, level_sd, level_last;
};
// Trace averages use canonically ordered draws; the last-draw tables keep
// the sampler's own labels.
MixtureTables mixture_probability_tables(const std::vector<IsiDraw>& draws,
                                         const std::array<int, kNumIsiCovariates>& levels);
// Equal-weight level marginals of one cell table.
std::array<Table, kNumIsiCovariates> level_marginals(const Table& cells,
                                                      const std::array<int, kNumIsiCovariates>& levels);

struct CoefStats {
  double min = 0.0, max = 0.0, mean = 0.0, sd = 0.0;  // sd with denominator n
};
CoefStats coefficient_stats(std::span<const double> values);

struct CoefficientSummary {
  std::vector<CoefStats> last;      // per row, across mice, last draw
  std::vector<CoefStats> averaged;  // per row, across mice, of per-mouse trace means
};
// Rows are preceding syllables.
CoefficientSummary trans_coefficient_summary(const std::vector<TransDraw>& draws);
// Rows are canonically ordered components.
CoefficientSummary isi_coefficient_summary(const std::vector<IsiDraw>& draws);

struct ComponentSummary {
  std::vector<double> shape_mean, rate_mean, mean_mean, assigned_mean;
};
ComponentSummary component_summary(const std::vector<IsiDraw>& draws);

// Basic trace diagnostics.
double effective_sample_size(std::span<const double> x);  // initial positive sequence
double geweke_z(std::span<const double> x, double first = 0.1, double last = 0.5);
double r_hat(const std::vector<std::vector<double>>& chains);

std::string k_posterior_csv(const std::vector<std::pair<std::string, ClusterCountPosterior>>& rows);
// Long format with level and syllable labels from the schema.
std::string transition_means_csv(const MatrixSummary& m, const DataSchema& schema = DataSchema::standard());
// Long format: covariate,level,component,mean,sd,last; covariate "cell" labels
// the level as genotype.context.prev.
std::string mixture_probs_csv(const MixtureTables& t, const DataSchema& schema = DataSchema::standard());
std::string coefficients_csv(const CoefficientSummary& c, const std::string& row_label);
std::string components_csv(const ComponentSummary& c);

}  // namespace mrmm
