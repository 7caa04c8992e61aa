#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpb/events.hpp"
#include "tpb/types.hpp"

namespace tpb {

/// Half-open [start_ns, end_ns).
struct Interval {
  TimestampNs start_ns = 0;
  TimestampNs end_ns = 0;

  TimestampNs duration() const noexcept { return end_ns - start_ns; }
  bool contains(TimestampNs t) const noexcept { return start_ns <= t && t < end_ns; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// A request after validation. Intervals of requests still running at
/// RunEnd are truncated there.
struct RequestRecord {
  std::string request_id;
  std::optional<Interval> prefill;
  std::optional<Interval> decode;
  std::uint64_t prompt_tokens = 0;
  std::optional<std::uint64_t> generated_tokens;
  bool complete = false;

  friend bool operator==(const RequestRecord&, const RequestRecord&) = default;
};

struct ValidatedSession {
  std::string run_id;
  Interval run_interval;
  std::vector<RequestRecord> requests;  // by prefill start, then id
  std::optional<std::string> phase_source;
  std::optional<std::string> started_at;
  bool truncated = false;
};

/// Checks a run's event list: exactly one RunStart/RunEnd bracketing every
/// other event, per-request ordering PrefillStart <= PrefillEnd <=
/// DecodeStart <= DecodeEnd <= RequestComplete, token counts present, no
/// duplicates. Input order does not matter.
///
/// Throws Error with MissingRunBoundary, OrderViolation, MissingTokenCount,
/// DuplicateEvent or MismatchedRun; the message names the request.
ValidatedSession validate_events(std::span<const PhaseEvent> events);

struct EngineInterval {
  TimestampNs start_ns = 0;
  TimestampNs end_ns = 0;
  Phase phase = Phase::Idle;

  friend bool operator==(const EngineInterval&, const EngineInterval&) = default;
};

struct PhaseTimeline {
  std::string run_id;
  Interval run_interval;
  /// Contiguous, non-overlapping, covering run_interval exactly.
  std::vector<EngineInterval> engine_intervals;
  std::map<std::string, RequestRecord> requests;
  std::optional<std::string> phase_source;
  std::optional<std::string> started_at;
  bool truncated = false;

  std::size_t complete_requests() const noexcept;
  std::size_t incomplete_requests() const noexcept;
  /// Engine phase at instant t (Idle outside the run).
  Phase phase_at(TimestampNs t) const noexcept;
};

/// The engine-phase policy for overlapping requests: any request in prefill
/// makes the engine Prefill, else any decoding request makes it Decode.
Phase resolve_engine_phase(std::size_t prefilling, std::size_t decoding) noexcept;

/// Resolves a validated session into engine-level intervals. Boundaries are
/// the event timestamps; adjacent same-phase pieces are merged.
PhaseTimeline build_timeline(const ValidatedSession& session);

}  // namespace tpb
