#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpb/types.hpp"

namespace tpb {

enum class EventKind {
  RunStart,
  RunEnd,
  PrefillStart,
  PrefillEnd,
  DecodeStart,
  DecodeEnd,
  RequestComplete,
};

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view text) noexcept;

constexpr bool is_run_event(EventKind kind) noexcept {
  return kind == EventKind::RunStart || kind == EventKind::RunEnd;
}

struct PhaseEvent {
  TimestampNs ts_ns = 0;
  std::string run_id;
  std::string request_id;  // empty for run events
  EventKind kind = EventKind::RunStart;
  std::optional<std::uint64_t> prompt_tokens;
  std::optional<std::uint64_t> generated_tokens;
  /// RunStart only: how phase boundaries were observed ("engine", "ttft-approx").
  std::optional<std::string> phase_source;
  /// RunStart only: wall-clock run start, stamped by the harness.
  std::optional<std::string> started_at;
  /// RunEnd only: set when the harness synthesized the end of a cut-off run.
  bool truncated = false;

  friend bool operator==(const PhaseEvent&, const PhaseEvent&) = default;
};

/// Wire-protocol line limit; longer lines are rejected.
inline constexpr std::size_t kMaxEventLineBytes = 64 * 1024;

/// Parses one newline-delimited JSON record. Unknown keys are ignored.
/// Throws Error{MalformedEvent}.
PhaseEvent parse_event_line(std::string_view line);

/// Canonical single-line JSON (no trailing newline), stable key order.
std::string format_event_line(const PhaseEvent& event);

void write_events(std::span<const PhaseEvent> events, const std::filesystem::path& path);
/// Throws Error{ParseError} naming file:line.
std::vector<PhaseEvent> read_events(const std::filesystem::path& path);

/// Stable sort by timestamp; the merge step for multi-connection streams.
void sort_events(std::vector<PhaseEvent>& events);

}  // namespace tpb
