#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <vector>

#include "tpb/types.hpp"

namespace tpb {

enum class Backend { EnergyCounterFile, GpuTelemetry, BaseboardPoll, TraceReplay, Synthetic };

std::string_view to_string(Backend backend) noexcept;
/// Accepts the enum names and snake_case aliases (energy_counter, gpu_telemetry,
/// baseboard, trace_replay, synthetic).
std::optional<Backend> parse_backend(std::string_view text) noexcept;

struct SourceSpec {
  std::string source_id;
  Domain domain = Domain::OTHER;
  Backend backend = Backend::Synthetic;
  std::map<std::string, std::string> backend_params;

  friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

/// Cumulative energy counter value as exposed by powercap-style interfaces.
struct CounterReading {
  TimestampNs ts_ns = 0;
  std::uint64_t energy_microjoules = 0;
  std::uint64_t wrap_max_microjoules = 0;
};

/// Energy accumulated between two counter values. A decrease means the counter
/// wrapped exactly once: (wrap_max - prev) + curr.
std::uint64_t counter_delta_uj(std::uint64_t prev, std::uint64_t curr,
                               std::uint64_t wrap_max);

/// Average power between two readings of the same counter.
double counter_watts(const CounterReading& prev, const CounterReading& curr);

/// Extracts watts from baseboard query output: the DCMI
/// "Instantaneous power reading: N Watts" line, or a bare number.
std::optional<double> parse_node_power_reading(const std::string& output);

/// One open power source. Each handle is driven by a single sampling actor,
/// so implementations need no internal locking.
class PowerSource {
 public:
  explicit PowerSource(SourceSpec spec) : spec_(std::move(spec)) {}
  virtual ~PowerSource() = default;

  PowerSource(const PowerSource&) = delete;
  PowerSource& operator=(const PowerSource&) = delete;

  const SourceSpec& spec() const noexcept { return spec_; }

  /// Throws Error{ReadFailed} on transient failures and
  /// Error{FirstReadNoDelta} when a counter has no previous reading yet.
  virtual PowerSample read(TimestampNs ts_ns) = 0;

  /// Replay sources run dry; live sources never do.
  virtual bool exhausted() const noexcept { return false; }

  /// Polling cadence override in milliseconds, from the `interval_ms` param.
  std::optional<int> interval_ms() const;

 private:
  SourceSpec spec_;
};

using SourceHandle = std::unique_ptr<PowerSource>;

/// Opens and probes a source. A missing sensor fails here rather than
/// mid-run (SensorUnavailable, PermissionDenied, BadParams).
SourceHandle open_source(const SourceSpec& spec);

/// Reads one sample and enforces the outgoing sample contract: finite,
/// non-negative, milliwatt-quantized.
PowerSample sample_once(PowerSource& source, TimestampNs ts_ns);

class SampleSink {
 public:
  virtual ~SampleSink() = default;
  /// May be called from several sampling actors concurrently.
  virtual void consume(const PowerSample& sample) = 0;
};

class CollectingSink : public SampleSink {
 public:
  void consume(const PowerSample& sample) override;
  std::vector<PowerSample> take();
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<PowerSample> samples_;
};

/// Forwards every sample to several sinks in order.
class TeeSink : public SampleSink {
 public:
  explicit TeeSink(std::vector<SampleSink*> sinks) : sinks_(std::move(sinks)) {}
  void consume(const PowerSample& sample) override {
    for (SampleSink* s : sinks_) s->consume(sample);
  }

 private:
  std::vector<SampleSink*> sinks_;
};

struct SourceStats {
  std::string source_id;
  std::uint64_t samples = 0;
  std::uint64_t dropped = 0;
  std::uint64_t no_delta = 0;
  /// Largest |actual - nominal| spacing between consecutive samples.
  std::int64_t max_jitter_ns = 0;
};

struct SamplingSummary {
  std::vector<SourceStats> sources;
  std::uint64_t ticks = 0;

  std::uint64_t total_samples() const noexcept;
  std::uint64_t dropped() const noexcept;
  std::int64_t max_jitter_ns() const noexcept;
};

struct SamplingOptions {
  int interval_ms = 100;
  /// Run epoch on the monotonic clock; sample timestamps are relative to it.
  std::int64_t epoch_ns = 0;
  /// Stop by itself after this long; otherwise runs until stop is requested
  /// or every source is exhausted.
  std::optional<std::int64_t> duration_ns;
  /// Take one extra reading of every live source when stopping, so the tail
  /// of a run is bracketed by samples.
  bool sample_on_stop = true;
};

/// Polls every handle at its cadence and pushes samples into the sink.
/// Throws Error{AllSourcesFailed} when every live handle's latest read failed.
SamplingSummary run_sampling_loop(std::span<const SourceHandle> handles,
                                  const SamplingOptions& options, SampleSink& sink,
                                  std::stop_token stop = {});

}  // namespace tpb
