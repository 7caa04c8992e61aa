#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tpb/timeline.hpp"
#include "tpb/types.hpp"

namespace tpb {

struct PhaseJoules {
  double prefill = 0.0;
  double decode = 0.0;
  double idle = 0.0;

  double& operator[](Phase p) noexcept {
    return p == Phase::Prefill ? prefill : p == Phase::Decode ? decode : idle;
  }
  double operator[](Phase p) const noexcept {
    return p == Phase::Prefill ? prefill : p == Phase::Decode ? decode : idle;
  }
  double total() const noexcept { return prefill + decode + idle; }
  friend bool operator==(const PhaseJoules&, const PhaseJoules&) = default;
};

struct PhaseTotals {
  double prefill_j = 0.0;
  double decode_j = 0.0;
  double idle_j = 0.0;
  double total_j = 0.0;
  friend bool operator==(const PhaseTotals&, const PhaseTotals&) = default;
};

struct RequestEnergy {
  double prefill_j = 0.0;
  double decode_j = 0.0;
  friend bool operator==(const RequestEnergy&, const RequestEnergy&) = default;
};

/// How the unmetered remainder of the node was estimated.
enum class OthersMethod { NodeMinusComponents, OtherDomainSum, None };
std::string_view to_string(OthersMethod m) noexcept;

/// Joules per (source x phase) and per request for one run.
///
/// Phase totals and the component total cover component domains only (GPU,
/// CPU, DRAM, OTHER); NODE meters appear in by_source_phase and by_domain
/// but never in sums, since they already include the components.
struct EnergyLedger {
  std::string run_id;
  std::map<std::string, Domain> source_domains;
  std::map<std::string, PhaseJoules> by_source_phase;
  /// Whole-run integral per domain, computed independently of the phase
  /// split; the component sum is the right-hand side of the identity.
  std::map<Domain, double> by_domain;
  PhaseTotals totals;
  double component_total_j = 0.0;
  double others_j = 0.0;
  OthersMethod others_method = OthersMethod::None;
  std::map<std::string, RequestEnergy> per_request;
  /// Prefill/decode joules that went to requests unfinished at RunEnd.
  double incomplete_j = 0.0;
  /// Fraction of the run bracketed by samples, per source.
  std::map<std::string, double> coverage;
  /// |phase sum - component sum| / component sum.
  double identity_residual = 0.0;

  friend bool operator==(const EnergyLedger&, const EnergyLedger&) = default;
};

/// Relative tolerance above which attribute() reports an IdentityViolation.
inline constexpr double kIdentityTolerance = 1e-6;

/// Best guess of a source's domain from its id ("gpu0" -> GPU, "dram" ->
/// DRAM, "node" -> NODE, ...), used when no source spec is at hand.
Domain infer_domain(std::string_view source_id) noexcept;

/// Trapezoidal integral, in joules, of one source's watts over the window.
/// Samples straddling an edge contribute through linear interpolation at the
/// edge; parts of the window not bracketed by samples contribute nothing.
/// Throws Error{UnorderedSamples} unless timestamps strictly increase.
double integrate_energy(std::span<const PowerSample> samples, Interval window);

/// Groups a mixed stream by source, keeping per-source order.
std::map<std::string, std::vector<PowerSample>> split_by_source(
    std::span<const PowerSample> samples);

struct RequestShares {
  std::map<std::string, RequestEnergy> complete;
  double incomplete_j = 0.0;
};

/// Splits every prefill stretch among the requests prefilling in it, in
/// proportion to prompt tokens, and every decode stretch equally among the
/// requests decoding in it. Only component sources count.
RequestShares per_request_energy(std::span<const PowerSample> samples,
                                 const PhaseTimeline& timeline,
                                 const std::map<std::string, Domain>& domains);

/// Builds the ledger. Sources missing from `domains` fall back to
/// infer_domain(). Throws EmptyTimeline, UnorderedSamples, IdentityViolation.
EnergyLedger attribute(std::span<const PowerSample> samples, const PhaseTimeline& timeline,
                       const std::map<std::string, Domain>& domains = {});

/// Sample-derived quantities the metrics need besides the ledger.
struct PowerSummary {
  /// Max of summed component watts at sample instants inside the run and at
  /// the run edges.
  double peak_component_w = 0.0;
  /// Whole-run energy / run duration, per source.
  std::map<std::string, double> mean_power_w;
  std::map<std::string, std::uint64_t> sample_counts;
  friend bool operator==(const PowerSummary&, const PowerSummary&) = default;
};

PowerSummary summarize_power(std::span<const PowerSample> samples,
                             const PhaseTimeline& timeline,
                             const std::map<std::string, Domain>& domains = {});

}  // namespace tpb
