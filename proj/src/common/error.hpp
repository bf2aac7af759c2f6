#pragma once

#include <stdexcept>
#include <string>

namespace lld {

enum class Errc {
  validation = 1,
  shape,
  singularity,
  unsupported_method,
  degenerate_mode,
  divergence,
  quadrature,
  nonfinite,
  config,
  io,
  invariant,
  internal,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace lld
