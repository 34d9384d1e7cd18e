#include "mrmm/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/version.hpp>
#include <json.hpp>

#include "mrmm/errors.hpp"
#include "mrmm/posterior_summary.hpp"
#include "mrmm/reference_params.hpp"
#include "mrmm/sim_gen.hpp"

namespace mrmm {

// Serialization of sampler states and draws for checkpoints and draw files.
// Doubles are written with 17 significant digits, so every value reloads
// bit-identically.
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PartitionState, z, k)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GammaParams, shape, rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TransModelState, partitions, mu, lambda0, lambda_fixed, lambda_rand, pi0, v,
                                   alpha_fixed, alpha_rand, table_counts)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IsiModelState, K, components, partitions, lambda0, lambda_fixed, lambda_rand, pi0,
                                   z, v, alpha_fixed, alpha_rand, table_counts)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TransDraw, iteration, k, population, pi0, alpha_fixed, alpha_rand, log_likelihood)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IsiDraw, iteration, k, components, assigned, cell_weights, lambda0, pi0,
                                   alpha_fixed, alpha_rand, log_likelihood)

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "1.0.0";
constexpr const char* kCheckpointFormat = "mrmm-checkpoint-1";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingFile("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file so a crash never leaves a torn artifact.
void write_file(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

// Ordered, de-duplicated warning list.
class Warnings {
 public:
  void add(const std::string& w) {
    if (seen_.insert(w).second) list_.push_back(w);
  }
  void add_all(const std::vector<std::string>& ws) {
    for (const auto& w : ws) add(w);
  }
  const std::vector<std::string>& list() const { return list_; }

 private:
  std::set<std::string> seen_;
  std::vector<std::string> list_;
};

std::string num(double x) { return std::isfinite(x) ? format_double(x) : "NA"; }

json schema_json(const DataSchema& s) {
  json j = json::array();
  for (const auto& c : s.covariates) j.push_back({{"name", c.name}, {"levels", c.levels}});
  return j;
}

DataSchema schema_from_json(const json& j) {
  DataSchema s;
  try {
    for (std::size_t i = 0; i < s.covariates.size(); ++i) {
      s.covariates[i].name = j.at(i).at("name").get<std::string>();
      s.covariates[i].levels = j.at(i).at("levels").get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest schema: ") + e.what());
  }
  s.validate();
  return s;
}

json versions_json() {
  return {{"mrmm", kVersion},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"boost", BOOST_LIB_VERSION},
          {"compiler", __VERSION__},
          {"cxx", static_cast<long>(__cplusplus)}};
}

// Config identity a checkpoint must match before it is resumed.
json fingerprint(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  return j;
}

// ---- models ---------------------------------------------------------------

struct TransModel {
  using Sampler = TransSampler;
  using State = TransModelState;
  using Draw = TransDraw;
  static constexpr const char* kName = "fit-trans";

  DataSchema schema;
  std::vector<FlatRecord> records;
  TransDims dims;
  TransHyperParams hyper;

  TransModel(const SequenceDataset& ds, const RunConfig& cfg, Warnings& warnings) : schema(ds.schema) {
    records = flatten(ds);
    dims.levels = {ds.schema.covariates[0].d(), ds.schema.covariates[1].d()};
    dims.n_mice = ds.n_mice();
    std::vector<std::string> w;
    hyper = default_trans_hyper(ds, &w);
    warnings.add_all(w);
    apply_trans_hyper(hyper, cfg.trans_hyper);
    hyper.validate();
  }

  Sampler fresh_sampler() const { return Sampler(records, dims, hyper); }
  Sampler sampler_from(const json& h) const {
    TransHyperParams resolved = hyper;
    apply_trans_hyper(resolved, h);
    return Sampler(records, dims, resolved);
  }
  static State init(Sampler& s, RngStream& rng, std::vector<std::string>* w) { return s.init(rng, w); }
  static void sweep(const Sampler& s, State& st, RngStream& rng, std::vector<std::string>*) { s.sweep(st, rng); }
  static json hyper_json(const Sampler& s) { return to_json(s.hyper()); }
  static Draw draw(const Sampler& s, const State& st, int it) { return make_trans_draw(s, st, it); }

  std::string trace_header() const {
    return "iteration,k_" + schema.covariates[0].name + ",k_" + schema.covariates[1].name +
           ",alpha_fixed,alpha_rand,log_likelihood\n";
  }
  static std::string trace_row(const Sampler& s, const State& st, int it) {
    return std::to_string(it) + ',' + std::to_string(st.partitions[0].k) + ',' + std::to_string(st.partitions[1].k) +
           ',' + num(st.alpha_fixed) + ',' + num(st.alpha_rand) + ',' + num(s.log_likelihood(st)) + '\n';
  }
};

struct IsiModel {
  using Sampler = IsiSampler;
  using State = IsiModelState;
  using Draw = IsiDraw;
  static constexpr const char* kName = "fit-isi";

  DataSchema schema;
  std::vector<FlatRecord> records;
  IsiDims dims;
  int K;
  IsiHyperParams hyper;
  IsiSamplerOptions options;

  IsiModel(const SequenceDataset& ds, const RunConfig& cfg, Warnings& warnings)
      : schema(ds.schema), K(cfg.K), options(cfg.isi_options) {
    records = flatten(ds);
    dims.levels = {ds.schema.covariates[0].d(), ds.schema.covariates[1].d(), kNumSyllables};
    dims.n_mice = ds.n_mice();
    std::vector<std::string> w;
    hyper = default_isi_hyper(dims.levels, &w);
    warnings.add_all(w);
    apply_isi_hyper(hyper, cfg.isi_hyper);
    hyper.validate(K);
  }

  Sampler fresh_sampler() const { return Sampler(records, dims, K, hyper, options); }
  Sampler sampler_from(const json& h) const {
    IsiHyperParams resolved = hyper;
    apply_isi_hyper(resolved, h);
    return Sampler(records, dims, K, resolved, options);
  }
  static State init(Sampler& s, RngStream& rng, std::vector<std::string>* w) { return s.init(rng, w); }
  static void sweep(const Sampler& s, State& st, RngStream& rng, std::vector<std::string>* w) { s.sweep(st, rng, w); }
  static json hyper_json(const Sampler& s) { return to_json(s.hyper()); }
  static Draw draw(const Sampler& s, const State& st, int it) { return make_isi_draw(s, st, it); }

  std::string trace_header() const {
    std::string h = "iteration";
    for (int k = 1; k <= K; ++k) h += ",shape_" + std::to_string(k);
    for (int k = 1; k <= K; ++k) h += ",rate_" + std::to_string(k);
    h += ",k_" + schema.covariates[0].name + ",k_" + schema.covariates[1].name + ",k_prev_syllable";
    return h + ",alpha_fixed,alpha_rand,log_likelihood\n";
  }
  static std::string trace_row(const Sampler& s, const State& st, int it) {
    std::string r = std::to_string(it);
    for (const auto& c : st.components) r += ',' + num(c.shape);
    for (const auto& c : st.components) r += ',' + num(c.rate);
    for (const auto& p : st.partitions) r += ',' + std::to_string(p.k);
    return r + ',' + num(st.alpha_fixed) + ',' + num(st.alpha_rand) + ',' + num(s.log_likelihood(st)) + '\n';
  }
};

// ---- chains ---------------------------------------------------------------

template <class Model>
struct ChainResult {
  std::vector<typename Model::Draw> draws;
  std::string trace;
  std::vector<std::string> warnings;
  json hyper;
};

fs::path checkpoint_path(const fs::path& dir, int chain) {
  return dir / ("checkpoint_chain" + std::to_string(chain) + ".json");
}

template <class Model>
void write_checkpoint(const fs::path& dir, int chain, int iteration, const RunConfig& cfg, const RngStream& rng,
                      const typename Model::State& state, const ChainResult<Model>& r) {
  json j;
  j["format"] = kCheckpointFormat;
  j["model"] = Model::kName;
  j["chain"] = chain;
  j["iteration"] = iteration;
  j["fingerprint"] = fingerprint(cfg);
  j["rng"] = rng.state();
  j["hyper"] = r.hyper;
  j["state"] = state;
  j["trace"] = r.trace;
  j["draws"] = r.draws;
  j["warnings"] = r.warnings;
  write_file(checkpoint_path(dir, chain), j.dump());
}

// Runs one chain from scratch or from its checkpoint. Returns false when
// the run stopped at cfg.stop_after before the schedule finished.
template <class Model>
bool run_chain(const Model& model, int chain, const RunConfig& cfg, const fs::path& dir, ChainResult<Model>& r) {
  RngStream rng(cfg.seed, static_cast<std::uint64_t>(chain));
  std::vector<std::string> w;
  typename Model::State state;
  int start = 0;
  std::optional<typename Model::Sampler> sampler;

  if (cfg.resume) {
    const json j = parse_json(read_file(checkpoint_path(dir, chain)), "checkpoint");
    try {
      if (j.at("format") != kCheckpointFormat || j.at("model") != Model::kName || j.at("chain") != chain)
        throw ConfigError("checkpoint " + checkpoint_path(dir, chain).string() + " belongs to another run");
      if (j.at("fingerprint") != fingerprint(cfg))
        throw ConfigError("checkpoint " + checkpoint_path(dir, chain).string() + " does not match the configuration");
      start = j.at("iteration").get<int>();
      rng.restore(j.at("rng").get<std::string>());
      r.hyper = j.at("hyper");
      state = j.at("state").get<typename Model::State>();
      r.trace = j.at("trace").get<std::string>();
      r.draws = j.at("draws").get<std::vector<typename Model::Draw>>();
      r.warnings = j.at("warnings").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ConfigError("checkpoint " + checkpoint_path(dir, chain).string() + ": " + e.what());
    }
    sampler.emplace(model.sampler_from(r.hyper));
    sampler->check_invariants(state);
  } else {
    sampler.emplace(model.fresh_sampler());
    state = Model::init(*sampler, rng, &w);
    r.hyper = Model::hyper_json(*sampler);
    r.trace = model.trace_header();
  }

  const int last = cfg.stop_after > 0 ? std::min(cfg.stop_after, cfg.schedule.iterations) : cfg.schedule.iterations;
  for (int it = start + 1; it <= last; ++it) {
    Model::sweep(*sampler, state, rng, &w);
    r.trace += Model::trace_row(*sampler, state, it);
    if (cfg.schedule.keep(it)) r.draws.push_back(Model::draw(*sampler, state, it));
    if (!w.empty()) {
      for (auto& x : w)
        if (std::find(r.warnings.begin(), r.warnings.end(), x) == r.warnings.end()) r.warnings.push_back(x);
      w.clear();
    }
    if (it % cfg.checkpoint_every == 0 || it == last) write_checkpoint(dir, chain, it, cfg, rng, state, r);
  }
  if (start >= last && start > 0) write_checkpoint(dir, chain, start, cfg, rng, state, r);
  return last == cfg.schedule.iterations;
}

// Chains on a worker pool; results are gathered after the join, in chain order.
template <class Model>
std::vector<ChainResult<Model>> run_chains(const Model& model, const RunConfig& cfg, const fs::path& dir,
                                           std::ostream& out) {
  const int n = cfg.n_chains;
  std::vector<ChainResult<Model>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<char> finished(n, 0);
  std::atomic<int> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (int c = next++; c < n; c = next++) {
      try {
        finished[c] = run_chain(model, c, cfg, dir, results[c]);
        std::lock_guard lock(log_mutex);
        out << "chain " << c << ": " << results[c].draws.size() << " draws kept\n";
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int workers = worker_count(n);
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (char f : finished)
    if (!f)
      throw Interrupted("stopped after iteration " + std::to_string(cfg.stop_after) +
                        "; checkpoints written, rerun with --resume to continue");
  return results;
}

// ---- summaries ------------------------------------------------------------

using Series = std::vector<std::vector<double>>;  // per chain

struct Monitored {
  std::string name;
  Series chains;
};

std::string diagnostics_csv(const std::vector<Monitored>& stats, std::ostream& out) {
  std::ostringstream os;
  os << "statistic,rhat,ess,geweke_max_abs_z\n";
  for (const auto& m : stats) {
    double rhat = NAN, ess = 0.0, gz = 0.0;
    try {
      rhat = r_hat(m.chains);
    } catch (const InsufficientDraws&) {
    }
    for (const auto& c : m.chains) {
      ess += effective_sample_size(c);
      try {
        gz = std::max(gz, std::abs(geweke_z(c)));
      } catch (const InsufficientDraws&) {
        gz = NAN;
      }
    }
    os << m.name << ',' << num(rhat) << ',' << num(ess) << ',' << num(gz) << '\n';
    out << "R-hat " << m.name << " = " << num(rhat) << '\n';
  }
  return os.str();
}

template <class Draw, class F>
Monitored monitor(const std::string& name, const std::vector<std::vector<Draw>>& chains, F f) {
  Monitored m{name, {}};
  for (const auto& c : chains) {
    std::vector<double> x;
    for (const auto& d : c) x.push_back(f(d));
    m.chains.push_back(std::move(x));
  }
  return m;
}

template <class Draw>
std::vector<Draw> pooled(const std::vector<std::vector<Draw>>& chains) {
  std::vector<Draw> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  if (all.empty()) throw EmptyTrace("no kept draws; check the schedule");
  return all;
}

std::vector<std::string> write_trans_summaries(const std::vector<std::vector<TransDraw>>& chains,
                                               const DataSchema& schema, const fs::path& dir, std::ostream& out) {
  const auto draws = pooled(chains);
  std::vector<std::pair<std::string, ClusterCountPosterior>> kp;
  for (int j = 0; j < kNumExogenous; ++j)
    kp.emplace_back(schema.covariates[j].name,
                    cluster_count_posterior(trans_k_column(draws, j), schema.covariates[j].d()));
  write_file(dir / "k_posterior.csv", k_posterior_csv(kp));
  write_file(dir / "transition_means.csv", transition_means_csv(population_transition_means(draws), schema));
  write_file(dir / "coefficients.csv", coefficients_csv(trans_coefficient_summary(draws), "prev_syllable"));

  std::vector<Monitored> stats;
  stats.push_back(monitor("log_likelihood", chains, [](const TransDraw& d) { return d.log_likelihood; }));
  stats.push_back(monitor("alpha_fixed", chains, [](const TransDraw& d) { return d.alpha_fixed; }));
  stats.push_back(monitor("alpha_rand", chains, [](const TransDraw& d) { return d.alpha_rand; }));
  for (int j = 0; j < kNumExogenous; ++j)
    stats.push_back(monitor("k_" + schema.covariates[j].name, chains,
                            [j](const TransDraw& d) { return static_cast<double>(d.k[j]); }));
  write_file(dir / "diagnostics.csv", diagnostics_csv(stats, out));
  return {"k_posterior.csv", "transition_means.csv", "coefficients.csv", "diagnostics.csv"};
}

std::vector<std::string> write_isi_summaries(const std::vector<std::vector<IsiDraw>>& chains, const DataSchema& schema,
                                             const std::array<int, kNumIsiCovariates>& levels, const fs::path& dir,
                                             std::ostream& out) {
  const auto draws = pooled(chains);
  const std::array<std::string, kNumIsiCovariates> names{schema.covariates[0].name, schema.covariates[1].name,
                                                         "prev_syllable"};
  std::vector<std::pair<std::string, ClusterCountPosterior>> kp;
  for (int r = 0; r < kNumIsiCovariates; ++r)
    kp.emplace_back(names[r], cluster_count_posterior(isi_k_column(draws, r), levels[r]));
  write_file(dir / "k_posterior.csv", k_posterior_csv(kp));
  write_file(dir / "mixture_probs.csv", mixture_probs_csv(mixture_probability_tables(draws, levels), schema));
  write_file(dir / "components.csv", components_csv(component_summary(draws)));
  write_file(dir / "coefficients.csv", coefficients_csv(isi_coefficient_summary(draws), "component"));

  std::vector<Monitored> stats;
  stats.push_back(monitor("log_likelihood", chains, [](const IsiDraw& d) { return d.log_likelihood; }));
  stats.push_back(monitor("alpha_fixed", chains, [](const IsiDraw& d) { return d.alpha_fixed; }));
  stats.push_back(monitor("alpha_rand", chains, [](const IsiDraw& d) { return d.alpha_rand; }));
  for (int r = 0; r < kNumIsiCovariates; ++r)
    stats.push_back(monitor("k_" + names[r], chains, [r](const IsiDraw& d) { return static_cast<double>(d.k[r]); }));
  const int K = static_cast<int>(draws.front().components.size());
  for (int k = 0; k < K; ++k)
    stats.push_back(monitor("mean_" + std::to_string(k + 1), chains, [k](const IsiDraw& d) {
      const auto c = canonicalize(d).components[k];
      return c.shape / c.rate;
    }));
  write_file(dir / "diagnostics.csv", diagnostics_csv(stats, out));
  return {"k_posterior.csv", "mixture_probs.csv", "components.csv", "coefficients.csv", "diagnostics.csv"};
}

std::string draws_jsonl(const json& draws) {
  std::string s;
  for (const auto& d : draws) s += d.dump() + '\n';
  return s;
}

template <class Draw>
std::vector<std::vector<Draw>> read_draw_files(const fs::path& dir, int n_chains) {
  std::vector<std::vector<Draw>> chains(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    std::istringstream in(read_file(dir / ("draws_chain" + std::to_string(c) + ".jsonl")));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) {
        try {
          chains[c].push_back(json::parse(line).get<Draw>());
        } catch (const json::exception& e) {
          throw ConfigError("draws_chain" + std::to_string(c) + ".jsonl: " + e.what());
        }
      }
  }
  return chains;
}

json base_manifest(const RunConfig& cfg) {
  json m;
  m["tool"] = "mrmm";
  m["versions"] = versions_json();
  m["config"] = to_json(cfg);
  m["seed"] = cfg.seed;
  return m;
}

void finish_manifest(json& m, const fs::path& dir, const std::vector<std::string>& artifacts,
                     const Warnings& warnings, std::chrono::steady_clock::time_point t0) {
  m["artifacts"] = artifacts;
  m["warnings"] = warnings.list();
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.json", m.dump(2) + '\n');
}

SequenceDataset load_input(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ConfigError("--input is required for " + cfg.subcommand);
  auto ds = load_csv(cfg.input);
  ds.validate();
  return ds;
}

template <class Model, class Summaries>
void fit(const RunConfig& cfg, std::ostream& out, Summaries summaries, json model_info) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  worker_count(cfg.n_chains);  // rejects a malformed MRMM_THREADS before any work
  const auto ds = load_input(cfg);
  Warnings warnings;
  const Model model(ds, cfg, warnings);
  const fs::path dir(cfg.output_dir);
  make_dir(dir);

  auto results = run_chains(model, cfg, dir, out);

  std::vector<std::string> artifacts;
  std::vector<std::vector<typename Model::Draw>> chains;
  json streams = json::array(), hypers = json::array();
  for (int c = 0; c < cfg.n_chains; ++c) {
    auto& r = results[c];
    const std::string id = std::to_string(c);
    write_file(dir / ("trace_chain" + id + ".csv"), r.trace);
    write_file(dir / ("draws_chain" + id + ".jsonl"), draws_jsonl(json(r.draws)));
    artifacts.insert(artifacts.end(),
                     {"trace_chain" + id + ".csv", "draws_chain" + id + ".jsonl", "checkpoint_chain" + id + ".json"});
    warnings.add_all(r.warnings);
    streams.push_back({cfg.seed, c});
    hypers.push_back(r.hyper);
    chains.push_back(std::move(r.draws));
  }
  for (auto& a : summaries(model, chains, dir, out)) artifacts.push_back(std::move(a));

  json m = base_manifest(cfg);
  m["chain_streams"] = streams;
  m["resolved_hyper"] = hypers;
  model_info["schema"] = schema_json(ds.schema);
  model_info["n_records"] = model.records.size();
  model_info["n_mice"] = ds.n_mice();
  m["model"] = model_info;
  finish_manifest(m, dir, artifacts, warnings, t0);
  for (const auto& w : warnings.list()) out << "warning: " << w << '\n';
}

}  // namespace

void cmd_fit_trans(const RunConfig& cfg, std::ostream& out) {
  fit<TransModel>(
      cfg, out,
      [](const TransModel& m, const std::vector<std::vector<TransDraw>>& chains, const fs::path& dir,
         std::ostream& o) { return write_trans_summaries(chains, m.schema, dir, o); },
      json{{"kind", "transition"}});
}

void cmd_fit_isi(const RunConfig& cfg, std::ostream& out) {
  fit<IsiModel>(
      cfg, out,
      [](const IsiModel& m, const std::vector<std::vector<IsiDraw>>& chains, const fs::path& dir, std::ostream& o) {
        return write_isi_summaries(chains, m.schema, m.dims.levels, dir, o);
      },
      json{{"kind", "isi"}, {"K", cfg.K}});
}

void cmd_select_k(const RunConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const int threads = worker_count(static_cast<int>(cfg.k_grid.size()));
  const auto ds = load_input(cfg);
  Warnings warnings;
  IsiDims dims;
  dims.levels = {ds.schema.covariates[0].d(), ds.schema.covariates[1].d(), kNumSyllables};
  dims.n_mice = ds.n_mice();
  SelectKConfig sc;
  sc.schedule = cfg.schedule;
  sc.seed = cfg.seed;
  std::vector<std::string> w;
  sc.hyper = default_isi_hyper(dims.levels, &w);
  warnings.add_all(w);
  apply_isi_hyper(sc.hyper, cfg.isi_hyper);
  sc.options = cfg.isi_options;
  sc.plateau_tolerance = cfg.plateau_tolerance;
  sc.min_draws = static_cast<std::size_t>(cfg.min_draws);
  sc.threads = threads;
  const fs::path dir(cfg.output_dir);
  make_dir(dir);

  const auto result = select_k(flatten(ds), dims, cfg.k_grid, sc);
  write_file(dir / "selection.csv", scores_csv(result.scores));
  for (const auto& s : result.scores)
    out << "K=" << s.K << " LPML=" << num(s.lpml) << " WAIC=" << num(s.waic) << '\n';
  out << "recommended K = " << result.recommended_K << '\n';

  json m = base_manifest(cfg);
  m["recommended_k"] = result.recommended_K;
  json scores = json::array();
  for (const auto& s : result.scores)
    scores.push_back({{"K", s.K}, {"lpml", s.lpml}, {"waic", s.waic}, {"p_waic", s.p_waic}, {"draws", s.n_draws_used}});
  m["scores"] = scores;
  finish_manifest(m, dir, {"selection.csv"}, warnings, t0);
}

void cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const ReferenceParams ref = cfg.reference.empty() ? bundled_reference() : load_reference(cfg.reference);
  GenerativeSpec spec = scenario(cfg.scenario, ref);
  spec.seed = cfg.seed;
  spec.sequences_per_mouse = cfg.sequences_per_mouse;
  spec.mean_length = cfg.mean_length;
  spec.random_effects = cfg.random_effects;
  const auto ds = generate(spec);
  const fs::path dir(cfg.output_dir);
  make_dir(dir);
  write_file(dir / "dataset.csv", to_csv(ds));
  write_file(dir / "truth.json", truth_json(spec, cfg.scenario) + '\n');
  out << "scenario " << cfg.scenario << ": " << ds.sequences.size() << " sequences, " << ds.n_transitions()
      << " transitions\n";
  json m = base_manifest(cfg);
  finish_manifest(m, dir, {"dataset.csv", "truth.json"}, Warnings{}, t0);
}

void cmd_summarize(const RunConfig& cfg, std::ostream& out) {
  if (cfg.input.empty()) throw ConfigError("--input must name a fit's output directory");
  const fs::path in(cfg.input);
  const json m = parse_json(read_file(in / "manifest.json"), "manifest");
  RunConfig fitted;
  apply_json(fitted, m);
  DataSchema schema;
  std::string kind;
  try {
    schema = schema_from_json(m.at("model").at("schema"));
    kind = m.at("model").at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  const fs::path dir(cfg.output_dir);
  make_dir(dir);
  if (kind == "transition") {
    write_trans_summaries(read_draw_files<TransDraw>(in, fitted.n_chains), schema, dir, out);
  } else if (kind == "isi") {
    const std::array<int, kNumIsiCovariates> levels{schema.covariates[0].d(), schema.covariates[1].d(), kNumSyllables};
    write_isi_summaries(read_draw_files<IsiDraw>(in, fitted.n_chains), schema, levels, dir, out);
  } else {
    throw ConfigError("manifest in " + in.string() + " does not describe a fit");
  }
}

void run_command(const RunConfig& cfg, std::ostream& out) {
  if (cfg.subcommand == "fit-trans") cmd_fit_trans(cfg, out);
  else if (cfg.subcommand == "fit-isi") cmd_fit_isi(cfg, out);
  else if (cfg.subcommand == "select-k") cmd_select_k(cfg, out);
  else if (cfg.subcommand == "simulate") cmd_simulate(cfg, out);
  else if (cfg.subcommand == "summarize") cmd_summarize(cfg, out);
  else throw ConfigError("unknown subcommand '" + cfg.subcommand + "'");
}

int exit_code_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "ConfigError" || k == "UnknownScenario" || k == "InvalidSpec") return 2;
  if (k == "MissingFile" || k == "IoError") return 3;
  if (k == "SchemaMismatch" || k == "InvalidLevel" || k == "NonPositiveIsi") return 4;
  if (k == "Interrupted") return 5;
  return 1;
}

}  // namespace mrmm
