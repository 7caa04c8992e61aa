#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "tpb/attribution.hpp"
#include "tpb/config.hpp"
#include "tpb/timeline.hpp"

namespace tpb {

inline constexpr double kJoulesPerKwh = 3.6e6;

struct RequestCounts {
  std::uint64_t requests = 0;
  std::uint64_t complete = 0;
  std::uint64_t incomplete = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t generated_tokens = 0;
  friend bool operator==(const RequestCounts&, const RequestCounts&) = default;
};

/// Config echo and measurement conventions carried with every report.
struct ReportMetadata {
  std::string model_name;
  std::string engine;
  std::string quantization;
  std::uint64_t batch_size = 1;
  ContextBucket context_bucket;
  std::uint32_t tp_degree = 1;
  std::uint32_t pp_degree = 1;
  int interval_ms = kDefaultIntervalMs;
  std::optional<double> price_usd_per_kwh;
  std::optional<double> kg_co2_per_kwh;
  std::string phase_source = "unspecified";
  std::optional<std::string> started_at;
  std::string others_method = "none";
  std::string config_hash;
  std::string harness_version;
  friend bool operator==(const ReportMetadata&, const ReportMetadata&) = default;
};

struct MetricsReport {
  std::string run_id;
  double duration_s = 0.0;
  double total_j = 0.0;
  double prefill_j = 0.0;
  double decode_j = 0.0;
  double idle_j = 0.0;
  /// Decode joules per generated token.
  std::optional<double> joules_per_generated_token;
  std::optional<double> prefill_joules_per_request;
  std::optional<double> prefill_joules_per_prompt_token;
  /// Mean of prefill_j + decode_j over complete requests.
  std::optional<double> joules_per_response;
  /// Also the "energy per second" figure.
  double mean_power_w = 0.0;
  double peak_power_w = 0.0;
  double energy_delay_product = 0.0;
  std::optional<double> power_imbalance;
  std::optional<double> throughput_tokens_per_s;
  std::optional<double> ttft_ms;
  double total_kwh = 0.0;
  std::optional<double> cost_usd;
  std::optional<double> co2_kg;
  RequestCounts counts;
  bool truncated = false;
  ReportMetadata metadata;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// total_j * run_duration_s. Throws Error{NonPositiveDuration}.
double energy_delay_product(double total_j, double run_duration_s);

/// Relative range (max - min) / mean of per-device mean power; 0 for one
/// device. Throws Error{NoGpuSources} on an empty map.
double power_imbalance(const std::map<std::string, double>& per_source_mean_power);

/// Throw Error{NegativeRate}.
double to_cost(double total_kwh, double price_usd_per_kwh);
double to_co2(double total_kwh, double kg_co2_per_kwh);

ReportMetadata metadata_from_config(const RunConfig& config);

/// Throws Error{MismatchedRun} when ledger and timeline disagree on run_id.
MetricsReport compute_metrics(const EnergyLedger& ledger, const PhaseTimeline& timeline,
                              const PowerSummary& summary, const ReportMetadata& metadata);

}  // namespace tpb
