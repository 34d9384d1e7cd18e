#include "mrmm/run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <fstream>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "mrmm/errors.hpp"

namespace mrmm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void take_beta(const json& j, const char* key, BetaPrior& p) {
  if (!j.contains(key)) return;
  const auto& o = j.at(key);
  reject_unknown(o, {"a", "b"}, key);
  take(o, "a", p.a);
  take(o, "b", p.b);
}

void take_gamma(const json& j, const char* key, GammaPrior& p) {
  if (!j.contains(key)) return;
  const auto& o = j.at(key);
  reject_unknown(o, {"shape", "rate"}, key);
  take(o, "shape", p.shape);
  take(o, "rate", p.rate);
}

json beta_json(const BetaPrior& p) { return {{"a", p.a}, {"b", p.b}}; }
json gamma_json(const GammaPrior& p) { return {{"shape", p.shape}, {"rate", p.rate}}; }

template <class F>
void guarded(const std::string& where, F&& f) {
  try {
    f();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  schedule.validate();
  if (n_chains < 1) throw ConfigError("chains must be at least 1");
  if (K < 1) throw ConfigError("k must be at least 1");
  if (k_grid.empty()) throw ConfigError("k-grid must not be empty");
  for (int k : k_grid)
    if (k < 1) throw ConfigError("k-grid entries must be at least 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (stop_after < 0) throw ConfigError("stop_after must be non-negative");
  if (sequences_per_mouse < 1) throw ConfigError("sequences_per_mouse must be at least 1");
  if (!(mean_length >= 2.0)) throw ConfigError("mean_length must be at least 2");
  if (!(plateau_tolerance >= 0.0)) throw ConfigError("plateau_tolerance must be non-negative");
  if (min_draws < 1) throw ConfigError("min_draws must be at least 1");
}

void apply_json(RunConfig& cfg, const json& j_in) {
  const json& j = j_in.contains("config") && j_in.at("config").is_object() ? j_in.at("config") : j_in;
  reject_unknown(j,
                 {"subcommand", "input", "output_dir", "reference", "iterations", "burn_in", "thin", "chains", "seed",
                  "k", "k_grid", "scenario", "checkpoint_every", "resume", "stop_after", "isi_options", "trans_hyper",
                  "isi_hyper", "sequences_per_mouse", "mean_length", "random_effects", "plateau_tolerance",
                  "min_draws"},
                 "config");
  guarded("config", [&] {
    take(j, "subcommand", cfg.subcommand);
    take(j, "input", cfg.input);
    take(j, "output_dir", cfg.output_dir);
    take(j, "reference", cfg.reference);
    take(j, "iterations", cfg.schedule.iterations);
    take(j, "burn_in", cfg.schedule.burn_in);
    take(j, "thin", cfg.schedule.thin);
    take(j, "chains", cfg.n_chains);
    take(j, "seed", cfg.seed);
    take(j, "k", cfg.K);
    take(j, "k_grid", cfg.k_grid);
    take(j, "scenario", cfg.scenario);
    take(j, "checkpoint_every", cfg.checkpoint_every);
    take(j, "resume", cfg.resume);
    take(j, "stop_after", cfg.stop_after);
    take(j, "sequences_per_mouse", cfg.sequences_per_mouse);
    take(j, "mean_length", cfg.mean_length);
    take(j, "random_effects", cfg.random_effects);
    take(j, "plateau_tolerance", cfg.plateau_tolerance);
    take(j, "min_draws", cfg.min_draws);
    if (j.contains("isi_options")) {
      const auto& o = j.at("isi_options");
      if (o.is_string()) {
        const auto mode = o.get<std::string>();
        if (mode == "exact") cfg.isi_options = IsiSamplerOptions::exact();
        else if (mode == "verbatim") cfg.isi_options = {};
        else throw ConfigError("isi_options must be \"exact\", \"verbatim\" or an object");
      } else {
        reject_unknown(o, {"corrected_partition_mh", "exact_concentrations", "exact_shape_update", "tied_coefficients"},
                       "isi_options");
        take(o, "corrected_partition_mh", cfg.isi_options.corrected_partition_mh);
        take(o, "exact_concentrations", cfg.isi_options.exact_concentrations);
        take(o, "exact_shape_update", cfg.isi_options.exact_shape_update);
        take(o, "tied_coefficients", cfg.isi_options.tied_coefficients);
      }
    }
    if (j.contains("trans_hyper")) {
      TransHyperParams probe;
      apply_trans_hyper(probe, j.at("trans_hyper"));  // key check only
      cfg.trans_hyper.merge_patch(j.at("trans_hyper"));
    }
    if (j.contains("isi_hyper")) {
      IsiHyperParams probe;
      apply_isi_hyper(probe, j.at("isi_hyper"));
      cfg.isi_hyper.merge_patch(j.at("isi_hyper"));
    }
  });
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  apply_json(base, j);
  return base;
}

json to_json(const RunConfig& c) {
  return {{"subcommand", c.subcommand},
          {"input", c.input},
          {"output_dir", c.output_dir},
          {"reference", c.reference},
          {"iterations", c.schedule.iterations},
          {"burn_in", c.schedule.burn_in},
          {"thin", c.schedule.thin},
          {"chains", c.n_chains},
          {"seed", c.seed},
          {"k", c.K},
          {"k_grid", c.k_grid},
          {"scenario", c.scenario},
          {"checkpoint_every", c.checkpoint_every},
          {"isi_options",
           {{"corrected_partition_mh", c.isi_options.corrected_partition_mh},
            {"exact_concentrations", c.isi_options.exact_concentrations},
            {"exact_shape_update", c.isi_options.exact_shape_update},
            {"tied_coefficients", c.isi_options.tied_coefficients}}},
          {"trans_hyper", c.trans_hyper},
          {"isi_hyper", c.isi_hyper},
          {"sequences_per_mouse", c.sequences_per_mouse},
          {"mean_length", c.mean_length},
          {"random_effects", c.random_effects},
          {"plateau_tolerance", c.plateau_tolerance},
          {"min_draws", c.min_draws}};
}

void apply_trans_hyper(TransHyperParams& h, const json& j) {
  reject_unknown(j, {"alpha00", "lambda00", "alpha_partition", "beta_pi", "gamma_alpha_fixed", "gamma_alpha_rand"},
                 "trans_hyper");
  guarded("trans_hyper", [&] {
    take(j, "alpha00", h.alpha00);
    take(j, "lambda00", h.lambda00);
    take(j, "alpha_partition", h.alpha_partition);
    take_beta(j, "beta_pi", h.beta_pi);
    take_gamma(j, "gamma_alpha_fixed", h.gamma_alpha_fixed);
    take_gamma(j, "gamma_alpha_rand", h.gamma_alpha_rand);
  });
}

void apply_isi_hyper(IsiHyperParams& h, const json& j) {
  reject_unknown(j,
                 {"alpha00", "lambda00", "beta_pi", "shape_prior", "rate_prior", "conc_fixed_prior", "conc_rand_prior",
                  "alpha_partition", "fp_tolerance", "fp_max_iters"},
                 "isi_hyper");
  guarded("isi_hyper", [&] {
    take(j, "alpha00", h.alpha00);
    take(j, "lambda00", h.lambda00);
    take_beta(j, "beta_pi", h.beta_pi);
    take_gamma(j, "shape_prior", h.shape_prior);
    take_gamma(j, "rate_prior", h.rate_prior);
    take_gamma(j, "conc_fixed_prior", h.conc_fixed_prior);
    take_gamma(j, "conc_rand_prior", h.conc_rand_prior);
    take(j, "alpha_partition", h.alpha_partition);
    take(j, "fp_tolerance", h.fp_tolerance);
    take(j, "fp_max_iters", h.fp_max_iters);
  });
}

json to_json(const TransHyperParams& h) {
  return {{"alpha00", h.alpha00},
          {"lambda00", h.lambda00},
          {"alpha_partition", h.alpha_partition},
          {"beta_pi", beta_json(h.beta_pi)},
          {"gamma_alpha_fixed", gamma_json(h.gamma_alpha_fixed)},
          {"gamma_alpha_rand", gamma_json(h.gamma_alpha_rand)}};
}

json to_json(const IsiHyperParams& h) {
  return {{"alpha00", h.alpha00},
          {"lambda00", h.lambda00},
          {"beta_pi", beta_json(h.beta_pi)},
          {"shape_prior", gamma_json(h.shape_prior)},
          {"rate_prior", gamma_json(h.rate_prior)},
          {"conc_fixed_prior", gamma_json(h.conc_fixed_prior)},
          {"conc_rand_prior", gamma_json(h.conc_rand_prior)},
          {"alpha_partition", h.alpha_partition},
          {"fp_tolerance", h.fp_tolerance},
          {"fp_max_iters", h.fp_max_iters}};
}

int worker_count(int jobs) {
  int n = std::max(1, jobs);
  if (const char* env = std::getenv("MRMM_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw ConfigError("MRMM_THREADS must be a positive integer");
    n = std::min<long>(n, cap);
  }
  return n;
}

}  // namespace mrmm

namespace mrmm {

std::optional<RunConfig> parse_args(int argc, const char* const* argv, std::ostream& out) {
  CLI::App app{"Bayesian Markov renewal mixed models for syllable sequences", "mrmm"};
  app.require_subcommand(1, 1);
  const std::pair<const char*, const char*> commands[] = {
      {"fit-trans", "fit the transition model"},
      {"fit-isi", "fit the inter-syllable interval mixture"},
      {"select-k", "score a grid of component counts by LPML and WAIC"},
      {"simulate", "generate a synthetic dataset and its truth sidecar"},
      {"summarize", "rebuild summary tables from a fit's output directory"}};
  for (const auto& [name, desc] : commands) app.add_subcommand(name, desc)->fallthrough();

  std::string input, output_dir, config, scenario, reference;
  std::uint64_t seed = 0;
  int iters = 0, burn_in = 0, thin = 0, chains = 0, k = 0, stop_after = 0, checkpoint_every = 0, spm = 0;
  double mean_length = 0.0;
  std::vector<int> grid;
  app.add_option("--input", input, "dataset CSV (summarize: a fit's output directory)");
  app.add_option("--output-dir", output_dir, "directory for every artifact");
  app.add_option("--config", config, "JSON config or a run manifest to replay");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--iters", iters, "iterations per chain");
  app.add_option("--burn-in", burn_in, "burn-in iterations");
  app.add_option("--thin", thin, "keep every thin-th iteration after burn-in");
  app.add_option("--chains", chains, "number of chains");
  app.add_option("--k", k, "number of gamma components");
  app.add_option("--k-grid", grid, "comma-separated component counts")->delimiter(',');
  app.add_option("--scenario", scenario, "simulation scenario A, B or C");
  app.add_option("--reference", reference, "simulation parameter JSON");
  app.add_option("--sequences-per-mouse", spm, "simulate: sequences per mouse");
  app.add_option("--mean-length", mean_length, "simulate: mean syllables per sequence");
  app.add_flag("--random-effects", "simulate: perturb parameters per mouse");
  app.add_option("--checkpoint-every", checkpoint_every, "sweeps between checkpoints");
  app.add_option("--stop-after", stop_after, "checkpoint and stop after this iteration");
  app.add_flag("--resume", "continue every chain from its checkpoint");
  app.add_flag("--exact", "ISI sampler with the exact update rules");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, out);
    return std::nullopt;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, out);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  RunConfig cfg;
  if (app.count("--config")) cfg = load_config_file(config, cfg);
  cfg.subcommand = app.get_subcommands().front()->get_name();
  auto given = [&](const char* flag) { return app.count(flag) > 0; };
  if (given("--input")) cfg.input = input;
  if (given("--output-dir")) cfg.output_dir = output_dir;
  if (given("--seed")) cfg.seed = seed;
  if (given("--iters")) cfg.schedule.iterations = iters;
  if (given("--burn-in")) cfg.schedule.burn_in = burn_in;
  if (given("--thin")) cfg.schedule.thin = thin;
  if (given("--chains")) cfg.n_chains = chains;
  if (given("--k")) cfg.K = k;
  if (given("--k-grid")) cfg.k_grid = grid;
  if (given("--scenario")) cfg.scenario = scenario;
  if (given("--reference")) cfg.reference = reference;
  if (given("--sequences-per-mouse")) cfg.sequences_per_mouse = spm;
  if (given("--mean-length")) cfg.mean_length = mean_length;
  if (given("--random-effects")) cfg.random_effects = true;
  if (given("--checkpoint-every")) cfg.checkpoint_every = checkpoint_every;
  if (given("--stop-after")) cfg.stop_after = stop_after;
  if (given("--resume")) cfg.resume = true;
  if (given("--exact")) cfg.isi_options = IsiSamplerOptions::exact();
  cfg.validate();
  return cfg;
}

}  // namespace mrmm
