#include "tpb/sampler.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <regex>

#include "nvml_loader.hpp"
#include "tpb/error.hpp"
#include "tpb/process.hpp"
#include "tpb/trace.hpp"

namespace tpb {

namespace fs = std::filesystem;

std::string_view to_string(Backend backend) noexcept {
  switch (backend) {
    case Backend::EnergyCounterFile: return "EnergyCounterFile";
    case Backend::GpuTelemetry: return "GpuTelemetry";
    case Backend::BaseboardPoll: return "BaseboardPoll";
    case Backend::TraceReplay: return "TraceReplay";
    case Backend::Synthetic: return "Synthetic";
  }
  return "Synthetic";
}

std::optional<Backend> parse_backend(std::string_view text) noexcept {
  for (Backend b : {Backend::EnergyCounterFile, Backend::GpuTelemetry,
                    Backend::BaseboardPoll, Backend::TraceReplay, Backend::Synthetic}) {
    if (to_string(b) == text) return b;
  }
  static const std::pair<std::string_view, Backend> aliases[] = {
      {"energy_counter", Backend::EnergyCounterFile}, {"gpu_telemetry", Backend::GpuTelemetry},
      {"baseboard", Backend::BaseboardPoll},          {"trace_replay", Backend::TraceReplay},
      {"synthetic", Backend::Synthetic}};
  for (const auto& [name, b] : aliases) {
    if (name == text) return b;
  }
  return std::nullopt;
}

std::optional<double> parse_node_power_reading(const std::string& output) {
  static const std::regex dcmi(R"(Instantaneous power reading:\s*([0-9]+(?:\.[0-9]+)?)\s*Watts)",
                               std::regex::icase);
  std::smatch m;
  if (std::regex_search(output, m, dcmi)) return std::stod(m[1].str());
  static const std::regex bare(R"(^\s*([0-9]+(?:\.[0-9]+)?)\s*(?:W|Watts)?\s*$)",
                               std::regex::icase);
  if (std::regex_match(output, m, bare)) return std::stod(m[1].str());
  return std::nullopt;
}

std::uint64_t counter_delta_uj(std::uint64_t prev, std::uint64_t curr,
                               std::uint64_t wrap_max) {
  if (curr >= prev) return curr - prev;
  return (wrap_max - prev) + curr;
}

double counter_watts(const CounterReading& prev, const CounterReading& curr) {
  const auto dt_ns = curr.ts_ns - prev.ts_ns;
  if (dt_ns <= 0) throw Error(ErrorCode::ReadFailed, "counter readings not time-ordered");
  const auto delta = counter_delta_uj(prev.energy_microjoules, curr.energy_microjoules,
                                      curr.wrap_max_microjoules);
  // µJ/ns == kW; scale to W.
  return static_cast<double>(delta) * 1e3 / static_cast<double>(dt_ns);
}

namespace {

const std::string* find_param(const SourceSpec& spec, const std::string& key) {
  auto it = spec.backend_params.find(key);
  return it == spec.backend_params.end() ? nullptr : &it->second;
}

const std::string& require_param(const SourceSpec& spec, const std::string& key) {
  const auto* v = find_param(spec, key);
  if (!v) {
    throw Error(ErrorCode::BadParams, spec.source_id + ": missing backend param '" + key + "'");
  }
  return *v;
}

double param_double(const SourceSpec& spec, const std::string& key,
                    std::optional<double> fallback = std::nullopt) {
  const auto* v = find_param(spec, key);
  if (!v) {
    if (fallback) return *fallback;
    throw Error(ErrorCode::BadParams, spec.source_id + ": missing backend param '" + key + "'");
  }
  double out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || p != v->data() + v->size() || !std::isfinite(out)) {
    throw Error(ErrorCode::BadParams, spec.source_id + ": param '" + key + "' is not a number");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view text, bool& ok) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
    text.remove_suffix(1);
  }
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  ok = ec == std::errc{} && p == text.data() + text.size() && !text.empty();
  return out;
}

void probe_readable(const SourceSpec& spec, const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    throw Error(ErrorCode::SensorUnavailable, spec.source_id + ": " + path.string() + " not found");
  }
  if (access(path.c_str(), R_OK) != 0) {
    throw Error(ErrorCode::PermissionDenied,
                spec.source_id + ": " + path.string() + " not readable");
  }
}

bool read_u64_file(const fs::path& path, std::uint64_t& value) {
  std::ifstream in(path);
  std::string text;
  if (!in || !std::getline(in, text)) return false;
  bool ok = false;
  value = parse_u64(text, ok);
  return ok;
}

// Cumulative microjoule counter, powercap convention.
class EnergyCounterSource : public PowerSource {
 public:
  explicit EnergyCounterSource(SourceSpec spec) : PowerSource(std::move(spec)) {
    const auto& s = this->spec();
    if (const auto* dir = find_param(s, "path")) {
      energy_file_ = fs::path(*dir) / "energy_uj";
      max_file_ = fs::path(*dir) / "max_energy_range_uj";
    } else if (const auto* f = find_param(s, "energy_file")) {
      energy_file_ = *f;
      if (const auto* m = find_param(s, "max_energy_file")) max_file_ = *m;
    } else {
      throw Error(ErrorCode::BadParams, s.source_id + ": needs 'path' or 'energy_file'");
    }
    probe_readable(s, energy_file_);
    if (const auto* w = find_param(s, "wrap_max_uj")) {
      bool ok = false;
      wrap_max_ = parse_u64(*w, ok);
      if (!ok || wrap_max_ == 0) throw Error(ErrorCode::BadParams, s.source_id + ": bad wrap_max_uj");
    } else if (!max_file_.empty()) {
      probe_readable(s, max_file_);
      if (!read_u64_file(max_file_, wrap_max_) || wrap_max_ == 0) {
        throw Error(ErrorCode::SensorUnavailable, s.source_id + ": unreadable max range");
      }
    } else {
      throw Error(ErrorCode::BadParams, s.source_id + ": counter modulus unknown");
    }
    std::uint64_t probe = 0;
    if (!read_u64_file(energy_file_, probe)) {
      throw Error(ErrorCode::SensorUnavailable, s.source_id + ": counter unreadable");
    }
  }

  PowerSample read(TimestampNs ts_ns) override {
    CounterReading now{ts_ns, 0, wrap_max_};
    if (!read_u64_file(energy_file_, now.energy_microjoules) ||
        now.energy_microjoules >= wrap_max_) {
      throw Error(ErrorCode::ReadFailed, spec().source_id + ": counter read failed");
    }
    auto prev = std::exchange(prev_, now);
    if (!prev) throw Error(ErrorCode::FirstReadNoDelta, spec().source_id);
    return PowerSample{ts_ns, spec().source_id, counter_watts(*prev, now)};
  }

 private:
  fs::path energy_file_;
  fs::path max_file_;
  std::uint64_t wrap_max_ = 0;
  std::optional<CounterReading> prev_;
};

// Vendor GPU telemetry in milliwatts. `milliwatts_file` reads a text file
// (sysfs-style or a test fixture); otherwise NVML device `device`.
class GpuTelemetrySource : public PowerSource {
 public:
  explicit GpuTelemetrySource(SourceSpec spec) : PowerSource(std::move(spec)) {
    const auto& s = this->spec();
    if (const auto* f = find_param(s, "milliwatts_file")) {
      file_ = *f;
      probe_readable(s, file_);
      return;
    }
    bool ok = false;
    const auto index = parse_u64(find_param(s, "device") ? *find_param(s, "device") : "0", ok);
    if (!ok) throw Error(ErrorCode::BadParams, s.source_id + ": bad device index");
    std::string why;
    nvml_ = detail::open_nvml_device(static_cast<unsigned int>(index), why);
    if (!nvml_) throw Error(ErrorCode::SensorUnavailable, s.source_id + ": " + why);
  }

  PowerSample read(TimestampNs ts_ns) override {
    std::uint64_t mw = 0;
    bool ok = false;
    if (nvml_) {
      unsigned int v = 0;
      ok = nvml_->power_milliwatts(v);
      mw = v;
    } else {
      ok = read_u64_file(file_, mw);
    }
    if (!ok) throw Error(ErrorCode::ReadFailed, spec().source_id + ": telemetry read failed");
    return PowerSample{ts_ns, spec().source_id, static_cast<double>(mw) / 1000.0};
  }

 private:
  fs::path file_;
  std::unique_ptr<detail::NvmlDevice> nvml_;
};

// Whole-node power from a baseboard query command (DCMI power reading).
class BaseboardSource : public PowerSource {
 public:
  explicit BaseboardSource(SourceSpec spec) : PowerSource(std::move(spec)) {
    const auto* c = find_param(this->spec(), "command");
    command_ = c ? *c : "ipmitool dcmi power reading";
    if (!poll()) {
      throw Error(ErrorCode::SensorUnavailable,
                  this->spec().source_id + ": '" + command_ + "' gave no power reading");
    }
  }

  PowerSample read(TimestampNs ts_ns) override {
    auto w = poll();
    if (!w) throw Error(ErrorCode::ReadFailed, spec().source_id + ": baseboard read failed");
    return PowerSample{ts_ns, spec().source_id, *w};
  }

 private:
  std::optional<double> poll() {
    auto r = run_command(command_);
    if (r.exit_code != 0) return std::nullopt;
    return parse_node_power_reading(r.output);
  }

  std::string command_;
};

// Re-emits a recorded trace; timestamps come from the file, not the clock.
class TraceReplaySource : public PowerSource {
 public:
  explicit TraceReplaySource(SourceSpec spec) : PowerSource(std::move(spec)) {
    const auto& s = this->spec();
    const fs::path path = require_param(s, "path");
    std::error_code ec;
    if (!fs::exists(path, ec)) {
      throw Error(ErrorCode::SensorUnavailable, s.source_id + ": " + path.string() + " not found");
    }
    const auto* filter = find_param(s, "trace_source");
    const std::string wanted = filter ? *filter : s.source_id;
    for (auto& sample : read_trace(path)) {
      if (sample.source_id != wanted) continue;
      if (!samples_.empty() && sample.ts_ns <= samples_.back().ts_ns) {
        throw Error(ErrorCode::BadParams, s.source_id + ": trace timestamps not increasing");
      }
      sample.source_id = s.source_id;
      samples_.push_back(std::move(sample));
    }
  }

  PowerSample read(TimestampNs) override {
    if (next_ >= samples_.size()) throw Error(ErrorCode::ReadFailed, "trace exhausted");
    return samples_[next_++];
  }

  bool exhausted() const noexcept override { return next_ >= samples_.size(); }

 private:
  std::vector<PowerSample> samples_;
  std::size_t next_ = 0;
};

class SyntheticSource : public PowerSource {
 public:
  enum class Wave { Constant, Square, Ramp, Sine };

  explicit SyntheticSource(SourceSpec spec) : PowerSource(std::move(spec)) {
    const auto& s = this->spec();
    const auto* wave = find_param(s, "wave");
    const std::string w = wave ? *wave : "constant";
    if (w == "constant") {
      wave_ = Wave::Constant;
      a_ = param_double(s, "watts");
    } else if (w == "square") {
      wave_ = Wave::Square;
      a_ = param_double(s, "low");
      b_ = param_double(s, "high");
      period_s_ = param_double(s, "period_ms") / 1000.0;
      duty_ = param_double(s, "duty", 0.5);
    } else if (w == "ramp") {
      wave_ = Wave::Ramp;
      a_ = param_double(s, "start", 0.0);
      b_ = param_double(s, "slope");
    } else if (w == "sine") {
      wave_ = Wave::Sine;
      a_ = param_double(s, "mean");
      b_ = param_double(s, "amplitude");
      period_s_ = param_double(s, "period_ms") / 1000.0;
    } else {
      throw Error(ErrorCode::BadParams, s.source_id + ": unknown wave '" + w + "'");
    }
    if ((wave_ == Wave::Square || wave_ == Wave::Sine) && period_s_ <= 0) {
      throw Error(ErrorCode::BadParams, s.source_id + ": period_ms must be > 0");
    }
    fail_every_ = static_cast<std::uint64_t>(param_double(s, "fail_every", 0));
  }

  PowerSample read(TimestampNs ts_ns) override {
    ++reads_;
    if (fail_every_ > 0 && reads_ % fail_every_ == 0) {
      throw Error(ErrorCode::ReadFailed, spec().source_id + ": injected failure");
    }
    return PowerSample{ts_ns, spec().source_id, value_at(ts_ns / kNsPerSecond)};
  }

 private:
  double value_at(double t) const {
    switch (wave_) {
      case Wave::Constant: return a_;
      case Wave::Square: {
        double phase = std::fmod(t, period_s_) / period_s_;
        if (phase < 0) phase += 1.0;
        return phase < duty_ ? b_ : a_;
      }
      case Wave::Ramp: return std::max(0.0, a_ + b_ * t);
      case Wave::Sine:
        return std::max(0.0, a_ + b_ * std::sin(2 * std::numbers::pi * t / period_s_));
    }
    return a_;
  }

  Wave wave_ = Wave::Constant;
  double a_ = 0, b_ = 0, period_s_ = 0, duty_ = 0.5;
  std::uint64_t fail_every_ = 0;
  std::uint64_t reads_ = 0;
};

}  // namespace

std::optional<int> PowerSource::interval_ms() const {
  auto it = spec_.backend_params.find("interval_ms");
  if (it == spec_.backend_params.end()) return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc{} || v < 1) {
    throw Error(ErrorCode::BadParams, spec_.source_id + ": interval_ms must be >= 1");
  }
  return v;
}

SourceHandle open_source(const SourceSpec& spec) {
  if (spec.source_id.empty()) throw Error(ErrorCode::BadParams, "source_id must not be empty");
  SourceHandle h;
  switch (spec.backend) {
    case Backend::EnergyCounterFile: h = std::make_unique<EnergyCounterSource>(spec); break;
    case Backend::GpuTelemetry: h = std::make_unique<GpuTelemetrySource>(spec); break;
    case Backend::BaseboardPoll: h = std::make_unique<BaseboardSource>(spec); break;
    case Backend::TraceReplay: h = std::make_unique<TraceReplaySource>(spec); break;
    case Backend::Synthetic: h = std::make_unique<SyntheticSource>(spec); break;
  }
  (void)h->interval_ms();  // validate early
  return h;
}

PowerSample sample_once(PowerSource& source, TimestampNs ts_ns) {
  PowerSample s = source.read(ts_ns);
  if (!std::isfinite(s.watts) || s.watts < 0) {
    throw Error(ErrorCode::ReadFailed, source.spec().source_id + ": invalid wattage");
  }
  s.watts = quantize_watts(s.watts) + 0.0;
  return s;
}

void CollectingSink::consume(const PowerSample& sample) {
  std::lock_guard lock(mu_);
  samples_.push_back(sample);
}

std::vector<PowerSample> CollectingSink::take() {
  std::lock_guard lock(mu_);
  return std::exchange(samples_, {});
}

std::size_t CollectingSink::size() const {
  std::lock_guard lock(mu_);
  return samples_.size();
}

std::uint64_t SamplingSummary::total_samples() const noexcept {
  std::uint64_t n = 0;
  for (const auto& s : sources) n += s.samples;
  return n;
}

std::uint64_t SamplingSummary::dropped() const noexcept {
  std::uint64_t n = 0;
  for (const auto& s : sources) n += s.dropped;
  return n;
}

std::int64_t SamplingSummary::max_jitter_ns() const noexcept {
  std::int64_t j = 0;
  for (const auto& s : sources) j = std::max(j, s.max_jitter_ns);
  return j;
}

namespace {

struct Slot {
  PowerSource* source = nullptr;
  std::int64_t interval_ns = 0;
  std::int64_t next_due = 0;  // absolute monotonic ns
  std::uint64_t tick = 0;
  std::optional<std::uint64_t> last_emitted_tick;
  std::optional<TimestampNs> last_ts;
  bool attempted = false;
  bool last_failed = false;
  SourceStats stats;
};

// Returns true if a sample was emitted.
bool poll_slot(Slot& slot, std::int64_t epoch_ns, SampleSink& sink) {
  const bool replay = slot.source->spec().backend == Backend::TraceReplay;
  TimestampNs ts = monotonic_now_ns() - epoch_ns;
  if (!replay && slot.last_ts && ts <= *slot.last_ts) ts = *slot.last_ts + 1;
  const auto tick = slot.tick++;
  try {
    PowerSample s = sample_once(*slot.source, ts);
    slot.attempted = true;
    slot.last_failed = false;
    if (slot.last_ts && s.ts_ns <= *slot.last_ts) {
      throw Error(ErrorCode::ReadFailed, "non-increasing timestamp");
    }
    if (!replay && slot.last_emitted_tick && *slot.last_emitted_tick + 1 == tick) {
      const auto gap = s.ts_ns - *slot.last_ts;
      slot.stats.max_jitter_ns =
          std::max(slot.stats.max_jitter_ns, std::abs(gap - slot.interval_ns));
    }
    slot.last_ts = s.ts_ns;
    slot.last_emitted_tick = tick;
    ++slot.stats.samples;
    sink.consume(s);
    return true;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::FirstReadNoDelta) {
      slot.last_ts = ts;
      ++slot.stats.no_delta;
      return false;
    }
    if (e.code() != ErrorCode::ReadFailed) throw;
    slot.attempted = true;
    slot.last_failed = true;
    ++slot.stats.dropped;
    return false;
  }
}

}  // namespace

SamplingSummary run_sampling_loop(std::span<const SourceHandle> handles,
                                  const SamplingOptions& options, SampleSink& sink,
                                  std::stop_token stop) {
  if (options.interval_ms < 1) throw Error(ErrorCode::BadParams, "interval_ms must be >= 1");
  if (handles.empty()) throw Error(ErrorCode::BadParams, "no power sources");

  const auto start = monotonic_now_ns();
  std::vector<Slot> slots;
  slots.reserve(handles.size());
  for (const auto& h : handles) {
    Slot slot;
    slot.source = h.get();
    slot.interval_ns = std::int64_t{h->interval_ms().value_or(options.interval_ms)} * 1'000'000;
    slot.next_due = start;
    slot.stats.source_id = h->spec().source_id;
    slots.push_back(std::move(slot));
  }

  std::mutex mu;
  std::condition_variable_any cv;
  SamplingSummary summary;
  const auto deadline =
      options.duration_ns ? std::optional(start + *options.duration_ns) : std::nullopt;

  while (!stop.stop_requested()) {
    const auto now = monotonic_now_ns();
    if (deadline && now >= *deadline) break;

    bool any_live = false;
    bool polled = false;
    for (auto& slot : slots) {
      if (slot.source->exhausted()) continue;
      any_live = true;
      if (slot.next_due > now) continue;
      polled = true;
      poll_slot(slot, options.epoch_ns, sink);
      while (slot.next_due <= now) slot.next_due += slot.interval_ns;
    }
    if (!any_live) break;
    if (polled) {
      ++summary.ticks;
      std::size_t failing = 0;
      std::size_t live = 0;
      for (const auto& slot : slots) {
        if (slot.source->exhausted()) continue;
        ++live;
        if (slot.attempted && slot.last_failed) ++failing;
      }
      if (live > 0 && failing == live) {
        throw Error(ErrorCode::AllSourcesFailed, "every power source failed on the same tick");
      }
    }

    std::int64_t wake = deadline.value_or(INT64_MAX);
    for (const auto& slot : slots) {
      if (!slot.source->exhausted()) wake = std::min(wake, slot.next_due);
    }
    std::unique_lock lock(mu);
    cv.wait_until(lock, stop,
                  std::chrono::steady_clock::time_point(std::chrono::nanoseconds(wake)),
                  [] { return false; });
  }

  if (options.sample_on_stop) {
    for (auto& slot : slots) {
      if (slot.source->exhausted() || slot.source->spec().backend == Backend::TraceReplay) {
        continue;
      }
      slot.last_emitted_tick.reset();  // off-cadence, excluded from jitter
      poll_slot(slot, options.epoch_ns, sink);
    }
  }

  for (auto& slot : slots) summary.sources.push_back(slot.stats);
  return summary;
}

}  // namespace tpb
