#pragma once

#include <iosfwd>

#include "mrmm/errors.hpp"
#include "mrmm/run_config.hpp"

namespace mrmm {

// Subcommands. Each writes its artifacts under cfg.output_dir, reports
// progress and R-hat on `out`, and throws an mrmm::Error on failure.
// A run stopped by stop_after throws Interrupted once every chain has
// written its checkpoint.
void cmd_fit_trans(const RunConfig& cfg, std::ostream& out);
void cmd_fit_isi(const RunConfig& cfg, std::ostream& out);
void cmd_select_k(const RunConfig& cfg, std::ostream& out);
void cmd_simulate(const RunConfig& cfg, std::ostream& out);
// Rebuilds the summary tables of a fit from the per-chain draw files in
// cfg.input (a fit's output directory).
void cmd_summarize(const RunConfig& cfg, std::ostream& out);

void run_command(const RunConfig& cfg, std::ostream& out);

// Process exit code for an error kind.
int exit_code_for(const Error& e);

}  // namespace mrmm
