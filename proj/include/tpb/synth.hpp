#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tpb/attribution.hpp"
#include "tpb/events.hpp"
#include "tpb/types.hpp"

namespace tpb {

enum class OverlapPattern { Sequential, Staircase, Random };

std::string_view to_string(OverlapPattern p) noexcept;

/// Inclusive range, drawn uniformly in whole milliseconds.
struct MsRange {
  std::int64_t min_ms = 0;
  std::int64_t max_ms = 0;
};

struct CountRange {
  std::uint64_t min = 1;
  std::uint64_t max = 1;
};

/// Power of one source as a function of the engine phase.
struct SourceProfile {
  std::string source_id;
  Domain domain = Domain::GPU;
  double prefill_w = 0.0;
  double decode_w = 0.0;
  double idle_w = 0.0;

  double watts(Phase p) const noexcept {
    return p == Phase::Prefill ? prefill_w : p == Phase::Decode ? decode_w : idle_w;
  }
};

struct ScenarioSpec {
  std::uint64_t seed = 1;
  std::string run_id = "synthetic";
  std::size_t n_requests = 1;
  OverlapPattern overlap = OverlapPattern::Sequential;
  MsRange prefill{100, 500};
  MsRange decode{500, 2000};
  /// Idle time before the first request (and between sequential ones).
  MsRange gap{0, 200};
  CountRange prompt_tokens{64, 4096};
  CountRange generated_tokens{16, 512};
  std::vector<SourceProfile> sources;
  std::int64_t run_duration_ms = 4000;
  std::int64_t sample_interval_ms = 100;
};

struct Scenario {
  std::vector<PhaseEvent> events;  // ts order
  std::vector<PowerSample> trace;  // per source, ts order
  std::map<std::string, Domain> domains;
  /// Closed-form energies of the generated trace.
  EnergyLedger expected_ledger;
};

/// Deterministic in `spec`. Throws Error{InfeasibleSpec} when the requests
/// cannot fit in the run, or the scenario is otherwise unusable.
Scenario generate(const ScenarioSpec& spec);

/// Brute-force reference: tags fixed steps of `step_ns` by the phase active
/// at their midpoint, read straight from the raw events, and sums
/// rectangle-rule energy of the linearly interpolated trace. Deliberately
/// slow and independent of the attribution path. Fills by_source_phase,
/// by_domain and totals.
EnergyLedger oracle_ledger(std::span<const PhaseEvent> events,
                           std::span<const PowerSample> trace, std::int64_t step_ns,
                           const std::map<std::string, Domain>& domains);

/// Reads a scenario spec (YAML). Throws ConfigNotFound, ParseError,
/// UnknownKey, BadValue.
ScenarioSpec parse_scenario_file(const std::filesystem::path& path);

}  // namespace tpb
