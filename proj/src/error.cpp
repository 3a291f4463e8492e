#include "nodpred/error.hpp"

namespace nodpred {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Range: return "range";
        case ErrorKind::Format: return "format";
        case ErrorKind::UnsupportedRate: return "unsupported-rate";
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Io: return "io";
        case ErrorKind::Horizon: return "horizon";
        case ErrorKind::Empty: return "empty";
        case ErrorKind::InsufficientData: return "insufficient-data";
        case ErrorKind::NonFinite: return "non-finite";
    }
    return "unknown";
}

bool is_validation(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::Shape:
        case ErrorKind::Range:
        case ErrorKind::Format:
        case ErrorKind::UnsupportedRate:
        case ErrorKind::Usage:
            return true;
        default:
            return false;
    }
}

}  // namespace nodpred
