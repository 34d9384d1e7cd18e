#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrmm/isi_sampler.hpp"
#include "mrmm/model_select.hpp"
#include "mrmm/trans_sampler.hpp"

namespace mrmm {

// Everything a run needs. Precedence: defaults < JSON config < flags.
struct RunConfig {
  std::string subcommand;
  std::string input;
  std::string output_dir = "mrmm_out";
  std::string reference;  // simulate: parameter JSON, empty for the bundled set

  Schedule schedule;  // 10000 / 2000 / 5
  int n_chains = 4;
  std::uint64_t seed = 1;
  int K = 4;
  std::vector<int> k_grid{2, 3, 4, 5, 6, 8, 10};
  std::string scenario = "C";

  int checkpoint_every = 500;
  bool resume = false;
  int stop_after = 0;  // > 0: checkpoint and stop once this iteration is done

  IsiSamplerOptions isi_options;
  // Partial hyperparameter objects applied on top of the data-driven defaults.
  nlohmann::json trans_hyper = nlohmann::json::object();
  nlohmann::json isi_hyper = nlohmann::json::object();

  // simulate
  int sequences_per_mouse = 40;
  double mean_length = 120.0;
  bool random_effects = false;

  double plateau_tolerance = 1e-3;
  int min_draws = 100;

  void validate() const;
};

// Fields present in j override cfg. Unknown keys raise ConfigError. A run
// manifest is accepted too: its "config" object is used.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_config_file(const std::string& path, RunConfig base = {});
nlohmann::json to_json(const RunConfig& cfg);

void apply_trans_hyper(TransHyperParams& h, const nlohmann::json& j);
void apply_isi_hyper(IsiHyperParams& h, const nlohmann::json& j);
nlohmann::json to_json(const TransHyperParams& h);
nlohmann::json to_json(const IsiHyperParams& h);

// Command line: `mrmm <subcommand> [flags]`. Returns nullopt after printing
// help to out; parse errors raise ConfigError.
std::optional<RunConfig> parse_args(int argc, const char* const* argv, std::ostream& out);

// Worker count for `jobs` independent tasks: MRMM_THREADS caps it when set.
int worker_count(int jobs);

}  // namespace mrmm
