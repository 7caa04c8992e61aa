#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace tpb {

/// Nanoseconds on the shared monotonic clock, relative to the run epoch.
using TimestampNs = std::int64_t;

constexpr double kNsPerSecond = 1e9;

enum class Phase { Prefill, Decode, Idle };
enum class Domain { GPU, CPU, DRAM, NODE, OTHER };

constexpr Phase kAllPhases[] = {Phase::Prefill, Phase::Decode, Phase::Idle};
constexpr Domain kAllDomains[] = {Domain::GPU, Domain::CPU, Domain::DRAM,
                                  Domain::NODE, Domain::OTHER};

std::string_view to_string(Phase phase) noexcept;
std::string_view to_string(Domain domain) noexcept;
std::optional<Phase> parse_phase(std::string_view text) noexcept;
std::optional<Domain> parse_domain(std::string_view text) noexcept;

/// True for domains that contribute to the component sum (everything but
/// whole-node meters, which would double count).
constexpr bool is_component(Domain domain) noexcept {
  return domain != Domain::NODE;
}

struct PowerSample {
  TimestampNs ts_ns = 0;
  std::string source_id;
  double watts = 0.0;

  friend bool operator==(const PowerSample&, const PowerSample&) = default;
};

/// Rounds to the milliwatt resolution carried by the trace format, so samples
/// survive a record/replay cycle bit-exactly.
double quantize_watts(double watts) noexcept;

/// Raw CLOCK_MONOTONIC reading in nanoseconds. Every process on the host
/// shares this clock, which is what lets workloads timestamp events against
/// the harness epoch.
std::int64_t monotonic_now_ns() noexcept;

}  // namespace tpb
