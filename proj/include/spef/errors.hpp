#pragma once

#include <stdexcept>
#include <string>

namespace spef {

// Base for all toolkit errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent inputs: bad files, unknown ids, schema violations.
// Distinct from infeasibility, which is a property of well-formed inputs.
struct StructuralError : Error {
  explicit StructuralError(const std::string& what) : Error(what) {}
};

// A demand has no route under the given topology/weights.
struct RoutingError : Error {
  explicit RoutingError(const std::string& what) : Error(what) {}
};

// Demands cannot be carried within capacity.
struct InfeasibleError : Error {
  explicit InfeasibleError(const std::string& what) : Error(what) {}
};

// A randomized check could not draw the samples it needs.
struct SamplingError : Error {
  explicit SamplingError(const std::string& what) : Error(what) {}
};

// An iterative stage ran out of budget without meeting its tolerance and the
// caller asked for that to be fatal.
struct ConvergenceError : Error {
  explicit ConvergenceError(const std::string& what) : Error(what) {}
};

}  // namespace spef
