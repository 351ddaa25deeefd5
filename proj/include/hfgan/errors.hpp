#pragma once

#include <stdexcept>
#include <string>

namespace hfgan {

/// Base of every library error. `user_error()` separates bad input and
/// configuration (CLI exit code 1) from runtime failures (exit code 2).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, bool user_error = true)
      : std::runtime_error(what), user_error_(user_error) {}
  bool user_error() const noexcept { return user_error_; }

 private:
  bool user_error_;
};

#define HFGAN_DEFINE_ERROR(Name, is_user)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(what, is_user) {}       \
  };

HFGAN_DEFINE_ERROR(ShapeError, true)
HFGAN_DEFINE_ERROR(ParameterError, true)
HFGAN_DEFINE_ERROR(ContractError, true)
HFGAN_DEFINE_ERROR(PolicyError, true)
HFGAN_DEFINE_ERROR(PriorError, true)
HFGAN_DEFINE_ERROR(DegenerateRangeError, true)
HFGAN_DEFINE_ERROR(AlignmentError, true)
HFGAN_DEFINE_ERROR(InsufficientDataError, true)
HFGAN_DEFINE_ERROR(IndexError, true)
HFGAN_DEFINE_ERROR(LoadError, true)
HFGAN_DEFINE_ERROR(IoError, false)
HFGAN_DEFINE_ERROR(NonFiniteError, false)

#undef HFGAN_DEFINE_ERROR

}  // namespace hfgan
