#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mrmm/core_data.hpp"
#include "mrmm/isi_sampler.hpp"
#include "mrmm/reference_params.hpp"

namespace mrmm {

struct GenerativeSpec {
  DataSchema schema = DataSchema::standard();
  std::vector<std::string> mouse_labels;
  std::vector<int> genotype;         // per mouse
  std::vector<int> contexts{0, 1, 2};  // cycled over each mouse's sequences
  int sequences_per_mouse = 40;
  double mean_length = 120.0;        // syllables per sequence, at least 2
  double length_dispersion = 5.0;    // negative-binomial size of (length - 2)
  ReferenceParams params;
  // Per-mouse perturbations drawn from the model's random-effects prior.
  bool random_effects = false;
  double random_effect_concentration = 50.0;
  std::uint64_t seed = 1;

  void validate() const;
  int n_cells() const { return schema.covariates[0].d() * schema.covariates[1].d(); }
};

// 18 mice (10 of genotype level 0, 8 of level 1) over the given parameters.
GenerativeSpec default_design(const ReferenceParams& params);

// Reference mixture collapsed per scenario: A uses the first cell's row
// everywhere, B drops the preceding-syllable effect, C keeps everything.
GenerativeSpec scenario(const std::string& label, const ReferenceParams& params);

// Deterministic under spec.seed; one random stream per sequence.
SequenceDataset generate(const GenerativeSpec& spec);

// Cluster counts implied by which covariate levels share parameters.
std::array<int, kNumIsiCovariates> true_isi_k(const GenerativeSpec& spec);
std::array<int, kNumExogenous> true_trans_k(const GenerativeSpec& spec);

// Sidecar with every generating parameter and the true cluster counts.
std::string truth_json(const GenerativeSpec& spec, const std::string& scenario_label = "");

}  // namespace mrmm
