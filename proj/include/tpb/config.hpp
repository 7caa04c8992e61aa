#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tpb/sampler.hpp"

namespace tpb {

/// Prompt-length range in tokens, half-open: [min_tokens, max_tokens).
struct ContextBucket {
  std::uint64_t min_tokens = 0;
  std::uint64_t max_tokens = 1'000'000'000;

  bool contains(std::uint64_t tokens) const noexcept {
    return min_tokens <= tokens && tokens < max_tokens;
  }
  friend bool operator==(const ContextBucket&, const ContextBucket&) = default;
};

struct DatasetSpec {
  std::filesystem::path path;
  std::string format;  // csv | json | jsonl
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

inline constexpr int kDefaultIntervalMs = 100;

struct RunConfig {
  std::string run_id;
  std::string model_name = "unknown";
  std::string engine = "custom";
  /// Shell command template; `{run_id}`, `{batch_size}`, `{quantization}`,
  /// `{tp}`, `{pp}`, `{model}`, `{engine}`, `{endpoint}`, `{prompts_file}`
  /// are substituted.
  std::string workload_cmd;
  std::optional<DatasetSpec> dataset;
  std::uint64_t batch_size = 1;
  ContextBucket context_bucket;
  std::uint32_t tp_degree = 1;
  std::uint32_t pp_degree = 1;
  std::string quantization = "fp16";
  std::vector<SourceSpec> sources;
  int interval_ms = kDefaultIntervalMs;
  std::optional<double> price_usd_per_kwh;
  std::optional<double> kg_co2_per_kwh;
  std::optional<std::uint64_t> max_requests;
  std::optional<double> max_duration_s;
  /// Reads a prompt on stdin, prints its token count. Whitespace words if unset.
  std::optional<std::string> token_counter_cmd;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Values one sweep axis can take.
using AxisValue = std::variant<std::uint64_t, std::string, ContextBucket,
                               std::pair<std::uint32_t, std::uint32_t>>;

struct SweepAxis {
  std::string name;  // batch_size | context_bucket | quantization | tp_pp | engine | model_name
  std::vector<AxisValue> values;
};

struct SweepPlan {
  RunConfig base;
  std::vector<SweepAxis> axes;
  /// Cartesian product, first axis outermost.
  std::vector<RunConfig> runs;
};

using ParsedConfig = std::variant<RunConfig, SweepPlan>;

/// Reads a run or sweep config (YAML). Relative paths resolve against the
/// file's directory. Throws ConfigNotFound, ParseError, UnknownKey,
/// MissingRequired, BadValue.
ParsedConfig parse_config(const std::filesystem::path& path);
ParsedConfig parse_config_text(const std::string& text,
                               const std::filesystem::path& base_dir = ".");

/// Expands axes into runs with deterministic ids: base id plus one token per
/// axis value ("bs32", "fp8", "ctx0-2000", "tp2pp1", ...).
SweepPlan expand_sweep(const RunConfig& base, std::vector<SweepAxis> axes);

/// Applies config invariants; throws BadValue / MissingRequired.
void validate_config(const RunConfig& config);

std::string axis_token(const std::string& axis, const AxisValue& value);

}  // namespace tpb
