#include "common/error.hpp"

namespace lld {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::validation: return "validation";
    case Errc::shape: return "shape";
    case Errc::singularity: return "singularity";
    case Errc::unsupported_method: return "unsupported_method";
    case Errc::degenerate_mode: return "degenerate_mode";
    case Errc::divergence: return "divergence";
    case Errc::quadrature: return "quadrature";
    case Errc::nonfinite: return "nonfinite";
    case Errc::config: return "config";
    case Errc::io: return "io";
    case Errc::invariant: return "invariant";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

}  // namespace lld
