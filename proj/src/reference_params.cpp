#include "mrmm/reference_params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

void check_simplex(std::span<const double> p, const char* what) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw InvalidSpec(std::string(what) + " has a negative or NaN entry");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw InvalidSpec(std::string(what) + " does not sum to 1");
}

}  // namespace

void ReferenceParams::validate(int d1, int d2) const {
  check_simplex(lambda00, "lambda00");
  if (static_cast<int>(transitions.size()) != d1 * d2) throw InvalidSpec("need one transition matrix per covariate cell");
  for (const auto& m : transitions)
    for (const auto& row : m) check_simplex(row, "transition row");
  if (components.empty()) throw InvalidSpec("need at least one gamma component");
  for (const auto& c : components)
    if (!(c.shape > 0.0) || !(c.rate > 0.0)) throw InvalidSpec("gamma components need positive shape and rate");
  if (static_cast<int>(mixture.size()) != d1 * d2 * kNumSyllables) throw InvalidSpec("need one mixture row per cell");
  for (const auto& row : mixture) {
    if (row.size() != components.size()) throw InvalidSpec("mixture row length differs from the component count");
    check_simplex(row, "mixture row");
  }
}

ReferenceParams bundled_reference() {
  ReferenceParams p;
  p.lambda00 = {0.3, 0.2, 0.3, 0.2};

  const Matrix4 base{{{0.40, 0.15, 0.30, 0.15},
                      {0.20, 0.35, 0.30, 0.15},
                      {0.25, 0.10, 0.45, 0.20},
                      {0.20, 0.10, 0.30, 0.40}}};
  // Each covariate level mixes every row toward one target syllable:
  // genotype W toward the row's own syllable, contexts L and A toward s and u.
  const double g_eff = 0.03, c_eff = 0.03;
  for (int g = 0; g < 2; ++g)
    for (int c = 0; c < 3; ++c) {
      Matrix4 m = base;
      for (int a = 0; a < kNumSyllables; ++a) {
        auto pull = [&](int target, double w) {
          for (int b = 0; b < kNumSyllables; ++b) m[a][b] = (1.0 - w) * m[a][b] + (b == target ? w : 0.0);
        };
        if (g == 1) pull(a, g_eff);
        if (c == 1) pull(2, c_eff);
        if (c == 2) pull(3, c_eff);
      }
      p.transitions.push_back(m);
    }

  // Means 0.04, 0.15, 0.35, 0.7 with comparable spreads on the log(1 + tau) scale.
  p.components = {{11.0, 275.0}, {36.0, 240.0}, {77.0, 220.0}, {100.0, 100.0 / 0.7}};

  // Log-linear weights: preceding syllable, context and genotype effects.
  const double prev_eff[4][4] = {{1.0, 0.5, 0.0, -0.5}, {-0.5, 1.0, 0.5, 0.0}, {0.0, -0.5, 1.0, 0.5}, {0.5, 0.0, -0.5, 1.0}};
  const double ctx_eff[3][4] = {{0.0, 0.0, 0.0, 0.0}, {0.6, 0.0, -0.6, 0.0}, {0.0, 0.6, 0.0, -0.6}};
  const double geno_eff[2][4] = {{0.0, 0.0, 0.0, 0.0}, {-0.5, 0.5, 0.5, -0.5}};
  for (int g = 0; g < 2; ++g)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < kNumSyllables; ++y) {
        std::vector<double> w(4);
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += w[k] = std::exp(prev_eff[y][k] + ctx_eff[c][k] + geno_eff[g][k]);
        for (auto& x : w) x /= s;
        p.mixture.push_back(w);
      }
  return p;
}

std::string reference_to_json(const ReferenceParams& p) {
  nlohmann::json j;
  j["lambda00"] = p.lambda00;
  j["transitions"] = p.transitions;
  j["components"] = nlohmann::json::array();
  for (const auto& c : p.components) j["components"].push_back({{"shape", c.shape}, {"rate", c.rate}});
  j["mixture"] = p.mixture;
  return j.dump(2);
}

ReferenceParams reference_from_json(const std::string& text) {
  ReferenceParams p;
  try {
    const auto j = nlohmann::json::parse(text);
    p.lambda00 = j.at("lambda00").get<Row4>();
    p.transitions = j.at("transitions").get<std::vector<Matrix4>>();
    for (const auto& c : j.at("components")) p.components.push_back({c.at("shape").get<double>(), c.at("rate").get<double>()});
    p.mixture = j.at("mixture").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("reference parameters: ") + e.what());
  }
  p.validate();
  return p;
}

ReferenceParams load_reference(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return reference_from_json(ss.str());
}

}  // namespace mrmm
