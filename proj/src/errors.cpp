#include "mrmm/errors.hpp"

namespace mrmm {

SchemaMismatch schema_mismatch(const std::string& column, std::size_t row, const std::string& detail) {
  std::string msg = "schema mismatch in column '" + column + "' at row " + std::to_string(row);
  if (!detail.empty()) msg += ": " + detail;
  return SchemaMismatch(msg);
}

InvalidLevel invalid_level(const std::string& label, std::size_t row) {
  return InvalidLevel("invalid level '" + label + "' at row " + std::to_string(row));
}

NonPositiveIsi non_positive_isi(std::size_t row) {
  return NonPositiveIsi("non-positive isi at row " + std::to_string(row));
}

}  // namespace mrmm
