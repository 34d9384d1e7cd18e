#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mrmm {

// Base for every error raised by the library. what() is a single line.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual const char* kind() const noexcept = 0;
};

#define MRMM_DECLARE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& msg) : Error(msg) {}          \
    const char* kind() const noexcept override { return #Name; }   \
  };

MRMM_DECLARE_ERROR(MissingFile)
MRMM_DECLARE_ERROR(SchemaMismatch)
MRMM_DECLARE_ERROR(InvalidLevel)
MRMM_DECLARE_ERROR(NonPositiveIsi)
MRMM_DECLARE_ERROR(DomainError)
MRMM_DECLARE_ERROR(NonPositiveConcentration)
MRMM_DECLARE_ERROR(AllWeightsUnderflow)
MRMM_DECLARE_ERROR(InsufficientDraws)
MRMM_DECLARE_ERROR(EmptyTrace)
MRMM_DECLARE_ERROR(UnknownScenario)
MRMM_DECLARE_ERROR(InvalidSpec)
MRMM_DECLARE_ERROR(ConfigError)
MRMM_DECLARE_ERROR(IoError)
MRMM_DECLARE_ERROR(Interrupted)

#undef MRMM_DECLARE_ERROR

// Helpers that build the conventional messages.
SchemaMismatch schema_mismatch(const std::string& column, std::size_t row, const std::string& detail = {});
InvalidLevel invalid_level(const std::string& label, std::size_t row);
NonPositiveIsi non_positive_isi(std::size_t row);

}  // namespace mrmm
