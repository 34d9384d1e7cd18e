#pragma once

#include <string>
#include <vector>

#include "mrmm/distributions.hpp"
#include "mrmm/trans_sampler.hpp"

namespace mrmm {

// Population-level generating parameters for the simulator.
struct ReferenceParams {
  Row4 lambda00{0.25, 0.25, 0.25, 0.25};     // first-syllable law
  std::vector<Matrix4> transitions;           // index x1 * d2 + x2
  std::vector<GammaParams> components;        // on log(1 + tau)
  std::vector<std::vector<double>> mixture;   // index (x1 * d2 + x2) * 4 + prev

  void validate(int d1 = 2, int d2 = 3) const;
};

// Synthetic stand-in for a fitted reference: K = 4 well separated
// components, all genotype, context and preceding-syllable levels distinct
// in the mixture weights, and transition cells close to one another.
ReferenceParams bundled_reference();

std::string reference_to_json(const ReferenceParams& p);
ReferenceParams reference_from_json(const std::string& text);
ReferenceParams load_reference(const std::string& path);

}  // namespace mrmm
