#pragma once

#include <stdexcept>
#include <string>

namespace sbglm {

enum class Errc {
  DegenerateTriangle,
  NonManifoldEdge,
  IndexOutOfRange,
  EmptyMask,
  DimensionMismatch,
  NotPositiveDefinite,
  RankDeficientNuisance,
  RankDeficientDesign,
  NonStationaryEstimate,
  FactorizationFailure,
  NonConvergence,
  DegenerateWeights,
  CenterOutsideMask,
  NoPositives,
  NoNegatives,
  InvalidArgument,
  Io,
  Parse,
};

const char* to_string(Errc code);

/// Numerical failures (as opposed to bad input) map to a distinct CLI exit code.
bool is_numerical(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sbglm
