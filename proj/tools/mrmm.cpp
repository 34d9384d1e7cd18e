// mrmm: fit, select, simulate and summarize Markov renewal mixed models.
// Errors are reported as one line "error: <Kind>: <message>" on stderr.

#include <algorithm>
#include <exception>
#include <iostream>
#include <string>

#include "mrmm/errors.hpp"
#include "mrmm/run_config.hpp"
#include "mrmm/runner.hpp"

namespace {

int fail(const std::string& kind, std::string msg, int code) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::replace(msg.begin(), msg.end(), '\r', ' ');
  std::cerr << "error: " << kind << ": " << msg << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const auto cfg = mrmm::parse_args(argc, argv, std::cout);
    if (!cfg) return 0;
    mrmm::run_command(*cfg, std::cout);
    std::cout.flush();
    return std::cout ? 0 : fail("IoError", "cannot write to standard output", 3);
  } catch (const mrmm::Error& e) {
    return fail(e.kind(), e.what(), mrmm::exit_code_for(e));
  } catch (const std::bad_alloc&) {
    return fail("OutOfMemory", "allocation failed", 1);
  } catch (const std::exception& e) {
    return fail("InternalError", e.what(), 1);
  }
}
