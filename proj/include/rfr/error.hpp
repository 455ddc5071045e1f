#ifndef RFR_ERROR_HPP_
#define RFR_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace rfr {

enum class ErrorKind {
  kShape,
  kEmptyBatch,
  kDegenerateGroup,
  kNumeric,
  kValidation,
  kSchema,
  kEmptyData,
  kPartition,
  kSize,
  kDegenerateVariance,
  kUsage,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this one exception type; the
// kind decides the C API error code and the CLI exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace rfr

#endif  // RFR_ERROR_HPP_
