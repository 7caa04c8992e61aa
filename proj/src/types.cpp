#include "tpb/types.hpp"

#include <cmath>
#include <ctime>

namespace tpb {

std::string_view to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::Prefill: return "prefill";
    case Phase::Decode: return "decode";
    case Phase::Idle: return "idle";
  }
  return "idle";
}

std::string_view to_string(Domain domain) noexcept {
  switch (domain) {
    case Domain::GPU: return "GPU";
    case Domain::CPU: return "CPU";
    case Domain::DRAM: return "DRAM";
    case Domain::NODE: return "NODE";
    case Domain::OTHER: return "OTHER";
  }
  return "OTHER";
}

std::optional<Phase> parse_phase(std::string_view text) noexcept {
  for (Phase p : kAllPhases) {
    if (to_string(p) == text) return p;
  }
  return std::nullopt;
}

std::optional<Domain> parse_domain(std::string_view text) noexcept {
  for (Domain d : kAllDomains) {
    if (to_string(d) == text) return d;
  }
  return std::nullopt;
}

double quantize_watts(double watts) noexcept {
  return std::round(watts * 1000.0) / 1000.0;
}

std::int64_t monotonic_now_ns() noexcept {
  timespec ts{};
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

}  // namespace tpb
