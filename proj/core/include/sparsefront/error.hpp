#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sparsefront {

enum class ErrorKind {
  UnsupportedShape,
  UnknownFamily,
  ShapeMismatch,
  IndexOutOfRange,
  DegenerateInput,
  EmptyClass,
  NonFiniteLoss,
  BadMagic,
  CountMismatch,
  TruncatedFile,
  UnsupportedLayer,
  InvalidLabel,
  InvalidArgument,
  EmptyInput,
  Io,
  Internal,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit a stable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace sparsefront
