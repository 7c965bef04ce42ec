#include "sparsefront/error.hpp"

namespace sparsefront {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::UnsupportedShape: return "UnsupportedShape";
    case ErrorKind::UnknownFamily: return "UnknownFamily";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace sparsefront
