#include "gspo_lab/errors.hpp"

namespace gspo_lab {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::malformed_record: return "MalformedRecord";
    case ErrorKind::invalid_config: return "InvalidConfig";
    case ErrorKind::empty_side: return "EmptySide";
    case ErrorKind::insufficient_legit: return "InsufficientLegit";
    case ErrorKind::illegal_sequence: return "IllegalSequence";
    case ErrorKind::shape_mismatch: return "ShapeMismatch";
    case ErrorKind::degenerate_data: return "DegenerateData";
    case ErrorKind::io: return "IOError";
  }
  return "Error";
}

}  // namespace gspo_lab
