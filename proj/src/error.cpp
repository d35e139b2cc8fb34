#include "dyncop/error.hpp"

namespace dyncop {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::domain: return "domain error";
        case ErrorKind::parameter: return "parameter error";
        case ErrorKind::consistency: return "consistency error";
        case ErrorKind::invariant: return "invariant violation";
        case ErrorKind::degenerate: return "degenerate condition";
        case ErrorKind::precondition: return "precondition error";
        case ErrorKind::configuration: return "configuration error";
        case ErrorKind::accuracy: return "accuracy error";
        case ErrorKind::model: return "model error";
        case ErrorKind::blow_up: return "blow-up error";
        case ErrorKind::divergence: return "divergence error";
        case ErrorKind::unsupported: return "unsupported";
        case ErrorKind::io: return "i/o error";
    }
    return "error";
}

}  // namespace dyncop
