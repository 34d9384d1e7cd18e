#include "mrmm/sim_gen.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

constexpr std::uint64_t kMouseStreamBase = std::uint64_t{1} << 40;

// Poisson by sequential inversion, in chunks so exp(-mean) never underflows.
std::int64_t sample_poisson(RngStream& rng, double mean) {
  std::int64_t total = 0;
  while (mean > 0.0) {
    const double m = std::min(mean, 500.0);
    mean -= m;
    double p = std::exp(-m), cdf = p;
    const double u = rng.uniform();
    std::int64_t k = 0;
    while (u > cdf && p > 0.0) {
      ++k;
      p *= m / static_cast<double>(k);
      cdf += p;
    }
    total += k;
  }
  return total;
}

int sample_length(RngStream& rng, const GenerativeSpec& spec) {
  const double extra = spec.mean_length - 2.0;
  if (extra <= 0.0) return 2;
  const double r = spec.length_dispersion;
  return 2 + static_cast<int>(sample_poisson(rng, sample_gamma(rng, r, r / extra)));
}

// Number of classes of levels of one axis whose slices agree exactly.
// slice(l) returns everything that depends on level l.
template <class Slice>
int count_classes(int d, Slice slice) {
  std::vector<decltype(slice(0))> reps;
  for (int l = 0; l < d; ++l) {
    auto s = slice(l);
    if (std::find(reps.begin(), reps.end(), s) == reps.end()) reps.push_back(std::move(s));
  }
  return static_cast<int>(reps.size());
}

// Per-mouse population parameters, perturbed when random effects are on.
struct MouseParams {
  std::vector<Matrix4> transitions;
  std::vector<std::vector<double>> mixture;
};

MouseParams mouse_params(const GenerativeSpec& spec, int mouse) {
  MouseParams mp{spec.params.transitions, spec.params.mixture};
  if (!spec.random_effects) return mp;
  RngStream rng(spec.seed, kMouseStreamBase + static_cast<std::uint64_t>(mouse));
  const double c = spec.random_effect_concentration;
  // Centre of the random effects: the average over cells.
  Matrix4 centre{};
  for (const auto& m : mp.transitions)
    for (int a = 0; a < kNumSyllables; ++a)
      for (int b = 0; b < kNumSyllables; ++b) centre[a][b] += m[a][b] / static_cast<double>(mp.transitions.size());
  for (int a = 0; a < kNumSyllables; ++a) {
    std::vector<double> conc(kNumSyllables);
    for (int b = 0; b < kNumSyllables; ++b) conc[b] = c * centre[a][b];
    const double pi = sample_beta(rng, 1.0, 1.0);
    const auto rand = sample_dirichlet(rng, conc);
    for (auto& m : mp.transitions)
      for (int b = 0; b < kNumSyllables; ++b) m[a][b] = pi * m[a][b] + (1.0 - pi) * rand[b];
  }
  const std::size_t K = spec.params.components.size();
  std::vector<double> conc(K, 0.0);
  for (const auto& row : mp.mixture)
    for (std::size_t k = 0; k < K; ++k) conc[k] += c * row[k] / static_cast<double>(mp.mixture.size());
  const double pi = sample_beta(rng, 1.0, 1.0);
  const auto rand = sample_dirichlet(rng, conc);
  for (auto& row : mp.mixture)
    for (std::size_t k = 0; k < K; ++k) row[k] = pi * row[k] + (1.0 - pi) * rand[k];
  return mp;
}

}  // namespace

void GenerativeSpec::validate() const {
  schema.validate();
  if (mouse_labels.empty() || mouse_labels.size() != genotype.size())
    throw InvalidSpec("need one genotype per mouse and at least one mouse");
  for (int g : genotype)
    if (g < 0 || g >= schema.covariates[0].d()) throw InvalidSpec("genotype level out of range");
  if (contexts.empty()) throw InvalidSpec("each mouse needs at least one context");
  for (int c : contexts)
    if (c < 0 || c >= schema.covariates[1].d()) throw InvalidSpec("context level out of range");
  if (sequences_per_mouse < 1) throw InvalidSpec("sequences_per_mouse must be positive");
  if (!(mean_length >= 2.0)) throw InvalidSpec("mean sequence length must be at least 2");
  if (!(length_dispersion > 0.0)) throw InvalidSpec("length dispersion must be positive");
  if (random_effects && !(random_effect_concentration > 0.0)) throw InvalidSpec("random-effect concentration must be positive");
  params.validate(schema.covariates[0].d(), schema.covariates[1].d());
}

GenerativeSpec default_design(const ReferenceParams& params) {
  GenerativeSpec spec;
  spec.params = params;
  for (int i = 0; i < 18; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "M%02d", i + 1);
    spec.mouse_labels.emplace_back(buf);
    spec.genotype.push_back(i < 10 ? 0 : 1);
  }
  return spec;
}

GenerativeSpec scenario(const std::string& label, const ReferenceParams& params) {
  GenerativeSpec spec = default_design(params);
  auto& mix = spec.params.mixture;
  if (label == "A") {
    for (auto& row : mix) row = mix[0];
  } else if (label == "B") {
    for (std::size_t c = 0; c < mix.size(); ++c) mix[c] = mix[c - c % kNumSyllables];
  } else if (label != "C") {
    throw UnknownScenario("unknown scenario '" + label + "' (expected A, B or C)");
  }
  return spec;
}

SequenceDataset generate(const GenerativeSpec& spec) {
  spec.validate();
  SequenceDataset ds;
  ds.schema = spec.schema;
  ds.mouse_labels = spec.mouse_labels;
  const int d2 = spec.schema.covariates[1].d();
  const auto& comps = spec.params.components;
  for (int i = 0; i < static_cast<int>(spec.mouse_labels.size()); ++i) {
    const MouseParams mp = mouse_params(spec, i);
    for (int j = 0; j < spec.sequences_per_mouse; ++j) {
      const auto idx = static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(spec.sequences_per_mouse) +
                       static_cast<std::uint64_t>(j);
      RngStream rng(spec.seed, idx);
      Sequence s;
      s.mouse = i;
      s.covariates = {spec.genotype[i], spec.contexts[static_cast<std::size_t>(j) % spec.contexts.size()]};
      const int cell = s.covariates[0] * d2 + s.covariates[1];
      const int len = sample_length(rng, spec);
      auto y = static_cast<SyllableCode>(sample_categorical(rng, spec.params.lambda00));
      s.syllables.push_back(y);
      for (int t = 1; t < len; ++t) {
        const auto& w = mp.mixture[cell * kNumSyllables + y];
        const auto& c = comps[sample_categorical(rng, w)];
        s.isis.push_back(std::expm1(sample_gamma(rng, c.shape, c.rate)));
        y = static_cast<SyllableCode>(sample_categorical(rng, mp.transitions[cell][y]));
        s.syllables.push_back(y);
      }
      ds.sequences.push_back(std::move(s));
    }
  }
  return ds;
}

std::array<int, kNumIsiCovariates> true_isi_k(const GenerativeSpec& spec) {
  const std::array<int, kNumIsiCovariates> L{spec.schema.covariates[0].d(), spec.schema.covariates[1].d(), kNumSyllables};
  const auto& mix = spec.params.mixture;
  std::array<int, kNumIsiCovariates> k{};
  for (int r = 0; r < kNumIsiCovariates; ++r)
    k[r] = count_classes(L[r], [&](int l) {
      std::vector<std::vector<double>> rows;
      for (int x1 = 0; x1 < L[0]; ++x1)
        for (int x2 = 0; x2 < L[1]; ++x2)
          for (int y = 0; y < L[2]; ++y) {
            const std::array<int, kNumIsiCovariates> at{x1, x2, y};
            if (at[r] == l) rows.push_back(mix[(x1 * L[1] + x2) * L[2] + y]);
          }
      return rows;
    });
  return k;
}

std::array<int, kNumExogenous> true_trans_k(const GenerativeSpec& spec) {
  const std::array<int, kNumExogenous> L{spec.schema.covariates[0].d(), spec.schema.covariates[1].d()};
  std::array<int, kNumExogenous> k{};
  for (int r = 0; r < kNumExogenous; ++r)
    k[r] = count_classes(L[r], [&](int l) {
      std::vector<Matrix4> ms;
      for (int x1 = 0; x1 < L[0]; ++x1)
        for (int x2 = 0; x2 < L[1]; ++x2)
          if ((r == 0 ? x1 : x2) == l) ms.push_back(spec.params.transitions[x1 * L[1] + x2]);
      return ms;
    });
  return k;
}

std::string truth_json(const GenerativeSpec& spec, const std::string& scenario_label) {
  nlohmann::json j;
  j["scenario"] = scenario_label;
  j["seed"] = spec.seed;
  j["true_k"] = {{"isi", true_isi_k(spec)}, {"trans", true_trans_k(spec)}};
  j["parameters"] = nlohmann::json::parse(reference_to_json(spec.params));
  nlohmann::json mice = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.mouse_labels.size(); ++i)
    mice.push_back({{"mouse_id", spec.mouse_labels[i]}, {"genotype", spec.schema.covariates[0].levels[spec.genotype[i]]}});
  j["mice"] = mice;
  std::vector<std::string> ctx;
  for (int c : spec.contexts) ctx.push_back(spec.schema.covariates[1].levels[c]);
  j["design"] = {{"contexts", ctx},
                 {"sequences_per_mouse", spec.sequences_per_mouse},
                 {"mean_length", spec.mean_length},
                 {"length_dispersion", spec.length_dispersion},
                 {"random_effects", spec.random_effects},
                 {"random_effect_concentration", spec.random_effect_concentration}};
  return j.dump(2);
}

}  // namespace mrmm
