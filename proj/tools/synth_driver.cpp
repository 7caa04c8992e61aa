// Scripted workload: connects to the harness, then replays a synthetic
// request schedule in real time as phase events.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "tpb/error.hpp"
#include "tpb/event_server.hpp"
#include "tpb/synth.hpp"

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic workload for the tpb harness"};
  std::size_t requests = std::stoul(env_or("TPB_MAX_REQUESTS", "4"));
  std::string overlap = "staircase";
  std::int64_t prefill_ms = 100;
  std::int64_t decode_ms = 300;
  std::int64_t gap_ms = 20;
  std::int64_t tail_ms = 50;
  std::uint64_t prompt_tokens = 512;
  std::uint64_t generated_tokens = 0;
  std::uint64_t seed = 1;
  std::string phase_source = "synthetic-driver";
  bool no_run_end = false;
  bool hang = false;
  int exit_code = 0;
  app.add_option("--requests", requests, "Number of requests (default TPB_MAX_REQUESTS or 4)");
  app.add_option("--overlap", overlap, "sequential | staircase | random")
      ->check(CLI::IsMember({"sequential", "staircase", "random"}));
  app.add_option("--prefill-ms", prefill_ms)->check(CLI::PositiveNumber);
  app.add_option("--decode-ms", decode_ms)->check(CLI::PositiveNumber);
  app.add_option("--gap-ms", gap_ms)->check(CLI::NonNegativeNumber);
  app.add_option("--tail-ms", tail_ms, "Idle time before RunEnd")->check(CLI::NonNegativeNumber);
  app.add_option("--prompt-tokens", prompt_tokens)->check(CLI::PositiveNumber);
  app.add_option("--generated-tokens", generated_tokens,
                 "Tokens per response (default 32 x TPB_BATCH_SIZE)");
  app.add_option("--seed", seed);
  app.add_option("--phase-source", phase_source);
  app.add_flag("--no-run-end", no_run_end, "Exit without sending RunEnd");
  app.add_flag("--hang", hang, "Block after the last event until killed");
  app.add_option("--exit-code", exit_code);
  CLI11_PARSE(app, argc, argv);

  if (generated_tokens == 0) generated_tokens = 32 * std::stoull(env_or("TPB_BATCH_SIZE", "1"));

  try {
    const auto endpoint = env_or("TPB_EVENT_ENDPOINT", "");
    if (endpoint.empty()) throw tpb::Error(tpb::ErrorCode::BadParams, "TPB_EVENT_ENDPOINT is not set");
    tpb::EventClient client(endpoint);

    tpb::ScenarioSpec spec;
    spec.seed = seed;
    spec.run_id = env_or("TPB_RUN_ID", "synthetic");
    spec.n_requests = requests;
    spec.overlap = overlap == "sequential"  ? tpb::OverlapPattern::Sequential
                   : overlap == "random"   ? tpb::OverlapPattern::Random
                                           : tpb::OverlapPattern::Staircase;
    spec.prefill = {prefill_ms, prefill_ms};
    spec.decode = {decode_ms, decode_ms};
    spec.gap = {gap_ms, gap_ms};
    spec.prompt_tokens = {prompt_tokens, prompt_tokens};
    spec.generated_tokens = {generated_tokens, generated_tokens};
    // Long enough for any schedule; only the events are used.
    spec.run_duration_ms = static_cast<std::int64_t>(requests + 1) * (prefill_ms + decode_ms + gap_ms) + 1;
    if (spec.overlap == tpb::OverlapPattern::Random) spec.run_duration_ms = 2 * (prefill_ms + decode_ms);
    spec.sample_interval_ms = spec.run_duration_ms;
    spec.sources = {{"none", tpb::Domain::OTHER, 0, 0, 0}};
    auto events = tpb::generate(spec).events;
    std::erase_if(events, [](const auto& e) { return e.kind == tpb::EventKind::RunEnd; });
    std::int64_t last = 0;
    for (const auto& e : events) last = std::max(last, e.ts_ns);
    if (!no_run_end) {
      tpb::PhaseEvent end;
      end.ts_ns = last + tail_ms * 1'000'000;
      end.run_id = spec.run_id;
      end.kind = tpb::EventKind::RunEnd;
      events.push_back(end);
    }

    const std::int64_t t0 = client.now_ns() + 1'000'000;
    for (auto e : events) {
      e.ts_ns += t0;
      if (e.kind == tpb::EventKind::RunStart) e.phase_source = phase_source;
      const auto wait = e.ts_ns - client.now_ns();
      if (wait > 0) std::this_thread::sleep_for(std::chrono::nanoseconds(wait));
      client.send(e);
    }
    client.close();
    while (hang) std::this_thread::sleep_for(std::chrono::seconds(1));
  } catch (const tpb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
