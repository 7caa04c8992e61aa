#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tpb/attribution.hpp"
#include "tpb/config.hpp"
#include "tpb/metrics.hpp"

namespace tpb {

inline constexpr std::string_view kHarnessVersion = "0.1.0";
inline constexpr std::string_view kMetricsSchema = "tpb.metrics/1";
inline constexpr std::string_view kLedgerSchema = "tpb.ledger/1";
inline constexpr std::string_view kSweepSchema = "tpb.sweep/1";

using ojson = nlohmann::ordered_json;

struct Provenance {
  std::string config_hash;
  std::string harness_version{kHarnessVersion};
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// One row per run, sorted by run_id.
struct SweepTable {
  std::vector<MetricsReport> rows;
  Provenance provenance;
  friend bool operator==(const SweepTable&, const SweepTable&) = default;
};

/// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a64_hex(std::string_view bytes);

/// Canonical JSON echo of a run config; its hash identifies the config.
ojson config_to_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

ojson to_json(const MetricsReport& report);
ojson to_json(const EnergyLedger& ledger);
ojson to_json(const SweepTable& table);

/// Throw Error{SchemaMismatch} on a wrong or missing `schema`, ParseError on
/// malformed content.
MetricsReport metrics_from_json(const ojson& doc);
EnergyLedger ledger_from_json(const ojson& doc);
SweepTable sweep_from_json(const ojson& doc);

/// Two-space indented, trailing newline. Throws Error{IoError}.
void emit_json(const MetricsReport& report, const std::filesystem::path& path);
void emit_json(const EnergyLedger& ledger, const std::filesystem::path& path);
void emit_json(const SweepTable& table, const std::filesystem::path& path);

MetricsReport read_metrics(const std::filesystem::path& path);
EnergyLedger read_ledger(const std::filesystem::path& path);
SweepTable read_sweep(const std::filesystem::path& path);

/// A table cell: empty, text, integer or real.
using Cell = std::variant<std::monostate, std::string, std::uint64_t, double>;

/// Fixed column order: run_id, the sweepable axes, then the metric scalars.
const std::vector<std::string>& sweep_columns();
std::vector<Cell> sweep_row(const MetricsReport& report);

/// Reals with up to 6 significant digits; integers exact; empty cells for
/// absent values; text quoted only when needed.
std::string format_cell(const Cell& cell);

/// Throws EmptyTable, IoError.
void emit_csv(const SweepTable& table, const std::filesystem::path& path);

/// Reads <dir>/metrics.json for every dir. Throws MissingArtifact naming the
/// dir, SchemaMismatch.
SweepTable aggregate_runs(const std::vector<std::filesystem::path>& artifact_dirs);

/// Writes plot-ready data for a run directory into `out_dir`:
/// power_timeline.csv (t_s, source_id, watts, phase) and
/// phase_energy.csv (source_id, prefill_j, decode_j, idle_j). Returns the
/// files written.
std::vector<std::filesystem::path> emit_plot_data(const std::filesystem::path& run_dir,
                                                  const std::filesystem::path& out_dir);

}  // namespace tpb
