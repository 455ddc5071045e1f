#include "rfr/error.hpp"

namespace rfr {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kEmptyBatch: return "empty-batch";
    case ErrorKind::kDegenerateGroup: return "degenerate-group";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kEmptyData: return "empty-data";
    case ErrorKind::kPartition: return "partition";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kDegenerateVariance: return "degenerate-variance";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace rfr
