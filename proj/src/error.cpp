#include "sbglm/error.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "sbglm/parallel.hpp"

namespace sbglm {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::DegenerateTriangle: return "DegenerateTriangle";
    case Errc::NonManifoldEdge: return "NonManifoldEdge";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::RankDeficientNuisance: return "RankDeficientNuisance";
    case Errc::RankDeficientDesign: return "RankDeficientDesign";
    case Errc::NonStationaryEstimate: return "NonStationaryEstimate";
    case Errc::FactorizationFailure: return "FactorizationFailure";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::DegenerateWeights: return "DegenerateWeights";
    case Errc::CenterOutsideMask: return "CenterOutsideMask";
    case Errc::NoPositives: return "NoPositives";
    case Errc::NoNegatives: return "NoNegatives";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::Parse: return "Parse";
  }
  return "Unknown";
}

bool is_numerical(Errc code) {
  switch (code) {
    case Errc::NotPositiveDefinite:
    case Errc::FactorizationFailure:
    case Errc::NonConvergence:
    case Errc::DegenerateWeights:
    case Errc::NonStationaryEstimate:
      return true;
    default:
      return false;
  }
}

namespace {
std::atomic<unsigned> g_workers{0};
}

unsigned default_workers() {
  unsigned w = g_workers.load();
  if (w == 0) w = std::max(1u, std::thread::hardware_concurrency());
  return w;
}

void set_default_workers(unsigned workers) { g_workers.store(workers); }

}  // namespace sbglm
