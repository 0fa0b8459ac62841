#pragma once

#include <stdexcept>
#include <string>

namespace dalign {

enum class Errc {
  invalid_argument,
  degenerate_step,
  zero_support,
  branch_cut,
  degenerate_weights,
  not_differentiable,
  unsupported_value_model,
  stall,
  validation,
};

const char* errc_name(Errc code) noexcept;

/// Typed failure raised by every library entry point.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

inline const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::degenerate_step: return "degenerate-step";
    case Errc::zero_support: return "zero-support";
    case Errc::branch_cut: return "branch-cut";
    case Errc::degenerate_weights: return "degenerate-weights";
    case Errc::not_differentiable: return "not-differentiable";
    case Errc::unsupported_value_model: return "unsupported-value-model";
    case Errc::stall: return "stall";
    case Errc::validation: return "validation";
  }
  return "unknown";
}

}  // namespace dalign
