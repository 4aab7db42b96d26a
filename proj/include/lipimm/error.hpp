#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace lipimm {

enum class ErrorKind {
  invalid_input,
  dimension_mismatch,
  degenerate_frame,
  cut_locus,
  inadmissible_support,
  non_convergence,
  not_a_graph,
  insufficient_sampling,
  injectivity_violation,
  coherence_violation,
  invariant_violation,
  regime,
  non_transversal,
  uniqueness_violation,
  precondition_unmet,
  well_definedness_violation,
};

// How a failure should be read by a caller: bad input, a hypothesis that does
// not hold (the result does not apply), or a result that was checked and failed.
enum class ErrorCategory { input, precondition, conclusion };

inline ErrorCategory category_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input:
    case ErrorKind::dimension_mismatch:
    case ErrorKind::degenerate_frame:
    case ErrorKind::insufficient_sampling:
      return ErrorCategory::input;
    case ErrorKind::cut_locus:
    case ErrorKind::inadmissible_support:
    case ErrorKind::regime:
    case ErrorKind::non_transversal:
    case ErrorKind::precondition_unmet:
      return ErrorCategory::precondition;
    default:
      return ErrorCategory::conclusion;
  }
}

inline const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::degenerate_frame: return "degenerate-frame";
    case ErrorKind::cut_locus: return "cut-locus";
    case ErrorKind::inadmissible_support: return "inadmissible-support";
    case ErrorKind::non_convergence: return "non-convergence";
    case ErrorKind::not_a_graph: return "not-a-graph";
    case ErrorKind::insufficient_sampling: return "insufficient-sampling";
    case ErrorKind::injectivity_violation: return "injectivity-violation";
    case ErrorKind::coherence_violation: return "coherence-violation";
    case ErrorKind::invariant_violation: return "invariant-violation";
    case ErrorKind::regime: return "regime";
    case ErrorKind::non_transversal: return "non-transversal";
    case ErrorKind::uniqueness_violation: return "uniqueness-violation";
    case ErrorKind::precondition_unmet: return "precondition-unmet";
    case ErrorKind::well_definedness_violation: return "well-definedness-violation";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::optional<std::int64_t> sample = std::nullopt)
      : std::runtime_error(std::string(kind_name(kind)) + ": " + what), kind_(kind), sample_(sample) {}

  ErrorKind kind() const { return kind_; }
  ErrorCategory category() const { return category_of(kind_); }
  std::optional<std::int64_t> sample() const { return sample_; }

 private:
  ErrorKind kind_;
  std::optional<std::int64_t> sample_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what,
                              std::optional<std::int64_t> sample = std::nullopt) {
  throw Error(kind, what, sample);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace lipimm
