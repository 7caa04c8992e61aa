#include "tpb/runner.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <ctime>
#include <exception>
#include <thread>

#include "tpb/dataset.hpp"
#include "tpb/error.hpp"
#include "tpb/event_server.hpp"
#include "tpb/process.hpp"
#include "tpb/trace.hpp"

namespace tpb {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

std::string_view to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::RunEnd: return "run_end";
    case StopReason::MaxRequests: return "max_requests";
    case StopReason::Timeout: return "timeout";
    case StopReason::WorkloadExited: return "workload_exited";
  }
  return "run_end";
}

Analysis analyze(std::span<const PowerSample> samples, std::vector<PhaseEvent> events,
                 const std::map<std::string, Domain>& domains, const ReportMetadata& metadata) {
  sort_events(events);
  Analysis a;
  a.timeline = build_timeline(validate_events(events));
  a.ledger = attribute(samples, a.timeline, domains);
  a.summary = summarize_power(samples, a.timeline, domains);
  a.metrics = compute_metrics(a.ledger, a.timeline, a.summary, metadata);
  return a;
}

ReportMetadata metadata_for(const RunConfig& config) {
  auto m = metadata_from_config(config);
  m.config_hash = config_hash(config);
  m.harness_version = std::string(kHarnessVersion);
  return m;
}

std::map<std::string, Domain> source_domains(const RunConfig& config) {
  std::map<std::string, Domain> out;
  for (const auto& s : config.sources) out[s.source_id] = s.domain;
  return out;
}

namespace {

RunConfig with_overrides(RunConfig c, const RunOptions& o) {
  if (o.price_usd_per_kwh) c.price_usd_per_kwh = o.price_usd_per_kwh;
  if (o.kg_co2_per_kwh) c.kg_co2_per_kwh = o.kg_co2_per_kwh;
  return c;
}

void say(const RunOptions& o, const std::string& msg) {
  if (o.progress) o.progress(msg);
}

std::string socket_path(const std::string& run_id) {
  static std::atomic<unsigned> counter{0};
  const auto tag = fnv1a64_hex(run_id).substr(0, 8);
  return (fs::temp_directory_path() / ("tpb-" + std::to_string(::getpid()) + "-" +
                                       std::to_string(counter++) + "-" + tag + ".sock"))
      .string();
}

std::optional<fs::path> prepare_prompts(const RunConfig& c, const fs::path& run_dir) {
  if (!c.dataset) return std::nullopt;
  const auto prompts = load_prompts(c.dataset->path, c.dataset->format);
  const TokenCounter counter =
      c.token_counter_cmd ? command_token_counter(*c.token_counter_cmd) : TokenCounter(whitespace_token_count);
  auto bucketed = bucket_prompts(prompts, {c.context_bucket}, counter);
  auto& chosen = bucketed.buckets.front();
  if (chosen.empty()) {
    throw Error(ErrorCode::EmptyDataset, "no prompt of " + c.dataset->path.string() +
                                             " falls in the context bucket");
  }
  if (c.max_requests && chosen.size() > *c.max_requests) chosen.resize(*c.max_requests);
  const auto path = run_dir / "prompts.jsonl";
  write_prompts_file(chosen, path);
  return path;
}

std::string utc_now_iso() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t count_kind(const std::vector<PhaseEvent>& events, EventKind kind) {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [kind](const auto& e) { return e.kind == kind; }));
}

}  // namespace

RunArtifacts execute_run(const RunConfig& config_in, const RunOptions& options) {
  const RunConfig config = with_overrides(config_in, options);
  validate_config(config);

  RunArtifacts art;
  art.dir = options.out_dir / config.run_id;
  fs::create_directories(art.dir);
  art.trace_path = art.dir / "trace.csv";
  art.events_path = art.dir / "events.ndjson";
  art.ledger_path = art.dir / "ledger.json";
  art.metrics_path = art.dir / "metrics.json";

  const auto prompts_file = prepare_prompts(config, art.dir);

  std::vector<SourceHandle> handles;
  for (const auto& spec : config.sources) handles.push_back(open_source(spec));

  const std::int64_t epoch = monotonic_now_ns();
  const std::string started_at = utc_now_iso();
  auto since_epoch = [epoch] { return monotonic_now_ns() - epoch; };

  EventServer server("unix:" + socket_path(config.run_id), epoch);

  CollectingSink sink;
  SamplingOptions sopts;
  sopts.interval_ms = config.interval_ms;
  sopts.epoch_ns = epoch;
  std::exception_ptr sampler_error;
  std::atomic<bool> sampler_done{false};
  std::jthread sampler([&](std::stop_token st) {
    try {
      art.sampling = run_sampling_loop(handles, sopts, sink, st);
    } catch (...) {
      sampler_error = std::current_exception();
    }
    sampler_done = true;
  });

  std::map<std::string, std::string> vars = options.template_vars;
  vars.merge(std::map<std::string, std::string>{
      {"run_id", config.run_id},
      {"batch_size", std::to_string(config.batch_size)},
      {"quantization", config.quantization},
      {"tp", std::to_string(config.tp_degree)},
      {"pp", std::to_string(config.pp_degree)},
      {"model", config.model_name},
      {"engine", config.engine},
      {"endpoint", server.endpoint()},
      {"prompts_file", prompts_file ? prompts_file->string() : ""},
      {"max_requests", config.max_requests ? std::to_string(*config.max_requests) : ""},
  });
  std::map<std::string, std::string> env = {
      {"TPB_EVENT_ENDPOINT", server.endpoint()},
      {"TPB_RUN_ID", config.run_id},
      {"TPB_BATCH_SIZE", std::to_string(config.batch_size)},
      {"TPB_PROMPTS_FILE", prompts_file ? prompts_file->string() : ""},
      {"TPB_QUANT", config.quantization},
      {"TPB_TP", std::to_string(config.tp_degree)},
      {"TPB_PP", std::to_string(config.pp_degree)},
      {"TPB_MODEL", config.model_name},
      {"TPB_ENGINE", config.engine},
  };
  if (config.max_requests) env["TPB_MAX_REQUESTS"] = std::to_string(*config.max_requests);

  say(options, "run " + config.run_id + ": starting workload");
  auto stop_sampler = [&] {
    sampler.request_stop();
    if (sampler.joinable()) sampler.join();
  };

  std::optional<ChildProcess> child;
  try {
    child.emplace(expand_template(config.workload_cmd, vars), env);
  } catch (...) {
    stop_sampler();
    server.stop();
    throw;
  }

  const auto deadline_ns =
      config.max_duration_s
          ? std::optional<std::int64_t>(static_cast<std::int64_t>(*config.max_duration_s * 1e9))
          : std::nullopt;
  std::optional<std::int64_t> requests_met_at;
  std::int64_t stop_ts = 0;
  for (;;) {
    const auto events = server.events();
    const auto now = since_epoch();
    if (count_kind(events, EventKind::RunEnd) > 0) {
      art.stop_reason = StopReason::RunEnd;
      break;
    }
    if (sampler_done && sampler_error) {
      art.stop_reason = StopReason::Timeout;
      stop_ts = now;
      break;
    }
    if (config.max_requests && !requests_met_at &&
        count_kind(events, EventKind::RequestComplete) >= *config.max_requests) {
      requests_met_at = now;
    }
    if (requests_met_at &&
        now - *requests_met_at >=
            std::chrono::duration_cast<std::chrono::nanoseconds>(options.request_grace).count()) {
      art.stop_reason = StopReason::MaxRequests;
      stop_ts = now;
      break;
    }
    if (deadline_ns && now >= *deadline_ns) {
      art.stop_reason = StopReason::Timeout;
      stop_ts = now;
      break;
    }
    if (auto status = child->poll()) {
      art.workload_exit = *status;
      // Let in-flight lines land before deciding the run ended without RunEnd.
      server.wait_for([](const auto& evs) { return count_kind(evs, EventKind::RunEnd) > 0; }, 200ms);
      if (count_kind(server.events(), EventKind::RunEnd) > 0) {
        art.stop_reason = StopReason::RunEnd;
      } else {
        art.stop_reason = StopReason::WorkloadExited;
        stop_ts = since_epoch();
      }
      break;
    }
    server.wait_for([n = events.size()](const auto& evs) { return evs.size() != n; }, 10ms);
  }

  if (!art.workload_exit) {
    child->terminate();
    art.workload_exit = child->wait();
  }
  server.stop();
  stop_sampler();
  art.rejected_lines = server.rejected_lines();

  auto events = server.events();
  sort_events(events);
  for (auto& e : events) {
    if (e.kind == EventKind::RunStart && !e.started_at) e.started_at = started_at;
  }
  const bool has_start = count_kind(events, EventKind::RunStart) > 0;
  if (art.stop_reason != StopReason::RunEnd && has_start) {
    const std::string run_id = events.front().run_id;
    std::erase_if(events, [stop_ts](const auto& e) { return e.ts_ns > stop_ts; });
    PhaseEvent end;
    end.ts_ns = stop_ts;
    end.run_id = run_id;
    end.kind = EventKind::RunEnd;
    end.truncated = art.stop_reason != StopReason::MaxRequests;
    events.push_back(end);
  }

  const auto samples = sink.take();
  record_trace(samples, art.trace_path);
  write_events(events, art.events_path);

  if (sampler_error) std::rethrow_exception(sampler_error);
  if (!has_start) {
    if (art.workload_exit == 127) {
      throw Error(ErrorCode::WorkloadSpawnFailed,
                  "workload command not found: " + config.workload_cmd);
    }
    throw Error(ErrorCode::NoEventsReceived,
                "run " + config.run_id + ": workload sent no RunStart (exit status " +
                    std::to_string(art.workload_exit.value_or(-1)) + ")");
  }

  auto analysis = analyze(samples, std::move(events), source_domains(config), metadata_for(config));
  emit_json(analysis.ledger, art.ledger_path);
  emit_json(analysis.metrics, art.metrics_path);
  art.ledger = std::move(analysis.ledger);
  art.metrics = std::move(analysis.metrics);
  return art;
}

SweepResult run_sweep(const SweepPlan& plan, const RunOptions& options) {
  SweepResult res;
  std::vector<fs::path> dirs;
  const auto n = plan.runs.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& run = plan.runs[i];
    if (!run.max_requests && !run.max_duration_s) {
      throw Error(ErrorCode::MissingRequired,
                  "run " + run.run_id + ": sweeps need max_requests or max_duration_s");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    say(options, "[" + std::to_string(i + 1) + "/" + std::to_string(n) + "] " + plan.runs[i].run_id);
    res.runs.push_back(execute_run(plan.runs[i], options));
    dirs.push_back(res.runs.back().dir);
  }
  res.table = aggregate_runs(dirs);
  res.csv_path = options.out_dir / "sweep.csv";
  res.json_path = options.out_dir / "sweep.json";
  emit_csv(res.table, res.csv_path);
  emit_json(res.table, res.json_path);
  return res;
}

RunArtifacts replay(const fs::path& trace_path, const fs::path& events_path, const fs::path& out_dir,
                    const std::optional<RunConfig>& config, const RunOptions& options) {
  RunArtifacts art;
  art.dir = out_dir;
  art.trace_path = trace_path;
  art.events_path = events_path;
  art.ledger_path = out_dir / "ledger.json";
  art.metrics_path = out_dir / "metrics.json";

  const auto samples = read_trace(trace_path);
  auto events = read_events(events_path);

  std::map<std::string, Domain> domains;
  ReportMetadata meta = metadata_from_config(RunConfig{});
  meta.harness_version = std::string(kHarnessVersion);
  if (config) {
    const auto c = with_overrides(*config, options);
    domains = source_domains(c);
    meta = metadata_for(c);
  } else {
    meta.price_usd_per_kwh = options.price_usd_per_kwh;
    meta.kg_co2_per_kwh = options.kg_co2_per_kwh;
  }
  auto analysis = analyze(samples, std::move(events), domains, meta);
  fs::create_directories(out_dir);
  emit_json(analysis.ledger, art.ledger_path);
  emit_json(analysis.metrics, art.metrics_path);
  art.ledger = std::move(analysis.ledger);
  art.metrics = std::move(analysis.metrics);
  art.stop_reason = analysis.timeline.truncated ? StopReason::Timeout : StopReason::RunEnd;
  return art;
}

}  // namespace tpb
