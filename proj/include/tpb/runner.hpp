#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpb/attribution.hpp"
#include "tpb/config.hpp"
#include "tpb/events.hpp"
#include "tpb/metrics.hpp"
#include "tpb/report.hpp"
#include "tpb/sampler.hpp"
#include "tpb/timeline.hpp"

namespace tpb {

/// Everything derived from one run's samples and events.
struct Analysis {
  PhaseTimeline timeline;
  EnergyLedger ledger;
  PowerSummary summary;
  MetricsReport metrics;
};

/// Sorts, validates and attributes. The same path serves live runs and
/// offline replay, so both produce identical artifacts.
Analysis analyze(std::span<const PowerSample> samples, std::vector<PhaseEvent> events,
                 const std::map<std::string, Domain>& domains, const ReportMetadata& metadata);

/// Config echo plus config hash and harness version.
ReportMetadata metadata_for(const RunConfig& config);

std::map<std::string, Domain> source_domains(const RunConfig& config);

struct RunOptions {
  std::filesystem::path out_dir = "runs";
  /// Override the config's rates.
  std::optional<double> price_usd_per_kwh;
  std::optional<double> kg_co2_per_kwh;
  /// How long to wait for RunEnd after max_requests completions.
  std::chrono::milliseconds request_grace{2000};
  std::function<void(const std::string&)> progress;
  /// Extra `{key}` substitutions for workload_cmd.
  std::map<std::string, std::string> template_vars;
};

enum class StopReason { RunEnd, MaxRequests, Timeout, WorkloadExited };
std::string_view to_string(StopReason reason) noexcept;

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path trace_path;
  std::filesystem::path events_path;
  std::filesystem::path ledger_path;
  std::filesystem::path metrics_path;
  EnergyLedger ledger;
  MetricsReport metrics;
  SamplingSummary sampling;
  StopReason stop_reason = StopReason::RunEnd;
  std::optional<int> workload_exit;
  std::size_t rejected_lines = 0;
};

/// Runs the workload under measurement and writes
/// <out>/<run_id>/{trace.csv, events.ndjson, ledger.json, metrics.json}.
/// Trace and events are written before analysis, so they survive analysis
/// failures. Throws WorkloadSpawnFailed, NoEventsReceived, plus any sampler,
/// validation or attribution error.
RunArtifacts execute_run(const RunConfig& config, const RunOptions& options);

struct SweepResult {
  std::vector<RunArtifacts> runs;
  SweepTable table;
  std::filesystem::path csv_path;
  std::filesystem::path json_path;
};

/// Executes every run of the plan in order, then aggregates them into
/// <out>/sweep.csv and <out>/sweep.json.
SweepResult run_sweep(const SweepPlan& plan, const RunOptions& options);

/// Offline analysis of recorded artifacts into <out_dir>/{ledger.json,
/// metrics.json}. Without a config, source domains are inferred from ids and
/// metadata takes defaults.
RunArtifacts replay(const std::filesystem::path& trace_path,
                    const std::filesystem::path& events_path,
                    const std::filesystem::path& out_dir,
                    const std::optional<RunConfig>& config, const RunOptions& options = {});

}  // namespace tpb
