#include "tpb/timeline.hpp"

#include <algorithm>
#include <array>

#include "tpb/error.hpp"

namespace tpb {

namespace {

// Per-request event slots in lifecycle order.
constexpr std::array kLifecycle = {EventKind::PrefillStart, EventKind::PrefillEnd,
                                   EventKind::DecodeStart, EventKind::DecodeEnd,
                                   EventKind::RequestComplete};

std::size_t slot_of(EventKind kind) {
  for (std::size_t i = 0; i < kLifecycle.size(); ++i) {
    if (kLifecycle[i] == kind) return i;
  }
  return kLifecycle.size();
}

struct PendingRequest {
  std::array<const PhaseEvent*, kLifecycle.size()> slots{};
};

[[noreturn]] void order_violation(const std::string& id, const std::string& why) {
  throw Error(ErrorCode::OrderViolation, "request " + id + ": " + why);
}

}  // namespace

ValidatedSession validate_events(std::span<const PhaseEvent> events) {
  ValidatedSession session;
  const PhaseEvent* run_start = nullptr;
  const PhaseEvent* run_end = nullptr;
  std::map<std::string, PendingRequest> pending;

  for (const auto& e : events) {
    if (session.run_id.empty()) session.run_id = e.run_id;
    if (e.run_id != session.run_id) {
      throw Error(ErrorCode::MismatchedRun,
                  "events from runs '" + session.run_id + "' and '" + e.run_id + "'");
    }
    if (e.kind == EventKind::RunStart || e.kind == EventKind::RunEnd) {
      auto& slot = e.kind == EventKind::RunStart ? run_start : run_end;
      if (slot) {
        throw Error(ErrorCode::DuplicateEvent, "duplicate " + std::string(to_string(e.kind)));
      }
      slot = &e;
      continue;
    }
    auto& req = pending[e.request_id];
    auto& slot = req.slots[slot_of(e.kind)];
    if (slot) {
      throw Error(ErrorCode::DuplicateEvent,
                  "request " + e.request_id + ": duplicate " + std::string(to_string(e.kind)));
    }
    slot = &e;
  }

  if (!run_start) throw Error(ErrorCode::MissingRunBoundary, "no RunStart event");
  if (!run_end) throw Error(ErrorCode::MissingRunBoundary, "no RunEnd event");
  if (run_end->ts_ns < run_start->ts_ns) {
    throw Error(ErrorCode::MissingRunBoundary, "RunEnd precedes RunStart");
  }
  session.run_interval = {run_start->ts_ns, run_end->ts_ns};
  session.phase_source = run_start->phase_source;
  session.started_at = run_start->started_at;
  session.truncated = run_end->truncated;
  const auto run_end_ts = run_end->ts_ns;

  for (const auto& [id, req] : pending) {
    // Each present event needs its predecessor, and timestamps must not go
    // backwards along the lifecycle.
    std::optional<TimestampNs> last;
    for (std::size_t i = 0; i < kLifecycle.size(); ++i) {
      const PhaseEvent* e = req.slots[i];
      if (!e) continue;
      if (i > 0 && !req.slots[i - 1]) {
        order_violation(id, std::string(to_string(kLifecycle[i])) + " without " +
                                std::string(to_string(kLifecycle[i - 1])));
      }
      if (e->ts_ns < session.run_interval.start_ns || e->ts_ns > run_end_ts) {
        order_violation(id, std::string(to_string(e->kind)) + " outside the run");
      }
      if (last && e->ts_ns < *last) {
        order_violation(id, std::string(to_string(e->kind)) + " precedes its predecessor");
      }
      last = e->ts_ns;
    }

    const auto* ps = req.slots[0];
    const auto* pe = req.slots[1];
    const auto* ds = req.slots[2];
    const auto* de = req.slots[3];
    const auto* rc = req.slots[4];
    if (!ps->prompt_tokens) {
      throw Error(ErrorCode::MissingTokenCount, "request " + id + ": PrefillStart lacks prompt_tokens");
    }
    if (rc && !rc->generated_tokens) {
      throw Error(ErrorCode::MissingTokenCount,
                  "request " + id + ": RequestComplete lacks generated_tokens");
    }

    RequestRecord rec;
    rec.request_id = id;
    rec.prompt_tokens = *ps->prompt_tokens;
    rec.prefill = Interval{ps->ts_ns, pe ? pe->ts_ns : run_end_ts};
    if (ds) rec.decode = Interval{ds->ts_ns, de ? de->ts_ns : run_end_ts};
    if (rc) {
      rec.complete = true;
      rec.generated_tokens = rc->generated_tokens;
    }
    session.requests.push_back(std::move(rec));
  }

  std::sort(session.requests.begin(), session.requests.end(),
            [](const RequestRecord& a, const RequestRecord& b) {
              if (a.prefill->start_ns != b.prefill->start_ns) {
                return a.prefill->start_ns < b.prefill->start_ns;
              }
              return a.request_id < b.request_id;
            });
  return session;
}

Phase resolve_engine_phase(std::size_t prefilling, std::size_t decoding) noexcept {
  if (prefilling > 0) return Phase::Prefill;
  if (decoding > 0) return Phase::Decode;
  return Phase::Idle;
}

PhaseTimeline build_timeline(const ValidatedSession& session) {
  PhaseTimeline tl;
  tl.run_id = session.run_id;
  tl.run_interval = session.run_interval;
  tl.phase_source = session.phase_source;
  tl.started_at = session.started_at;
  tl.truncated = session.truncated;

  // Sweep over +1/-1 edges of the prefill and decode intervals.
  struct Edge {
    TimestampNs ts;
    int prefill;
    int decode;
  };
  std::vector<Edge> edges;
  for (const auto& r : session.requests) {
    tl.requests.emplace(r.request_id, r);
    if (r.prefill && r.prefill->duration() > 0) {
      edges.push_back({r.prefill->start_ns, +1, 0});
      edges.push_back({r.prefill->end_ns, -1, 0});
    }
    if (r.decode && r.decode->duration() > 0) {
      edges.push_back({r.decode->start_ns, 0, +1});
      edges.push_back({r.decode->end_ns, 0, -1});
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return a.ts < b.ts; });

  const auto [start, end] = std::pair{tl.run_interval.start_ns, tl.run_interval.end_ns};
  auto push = [&](TimestampNs a, TimestampNs b, Phase phase) {
    if (b <= a) return;
    if (!tl.engine_intervals.empty() && tl.engine_intervals.back().phase == phase) {
      tl.engine_intervals.back().end_ns = b;
    } else {
      tl.engine_intervals.push_back({a, b, phase});
    }
  };

  long prefilling = 0;
  long decoding = 0;
  TimestampNs cursor = start;
  std::size_t i = 0;
  while (i < edges.size()) {
    const auto ts = edges[i].ts;
    push(cursor, ts, resolve_engine_phase(prefilling, decoding));
    while (i < edges.size() && edges[i].ts == ts) {
      prefilling += edges[i].prefill;
      decoding += edges[i].decode;
      ++i;
    }
    cursor = std::max(cursor, ts);
  }
  push(cursor, end, resolve_engine_phase(prefilling, decoding));
  return tl;
}

std::size_t PhaseTimeline::complete_requests() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      requests.begin(), requests.end(), [](const auto& kv) { return kv.second.complete; }));
}

std::size_t PhaseTimeline::incomplete_requests() const noexcept {
  return requests.size() - complete_requests();
}

Phase PhaseTimeline::phase_at(TimestampNs t) const noexcept {
  auto it = std::upper_bound(
      engine_intervals.begin(), engine_intervals.end(), t,
      [](TimestampNs v, const EngineInterval& iv) { return v < iv.start_ns; });
  if (it == engine_intervals.begin()) return Phase::Idle;
  --it;
  return t < it->end_ns ? it->phase : Phase::Idle;
}

}  // namespace tpb
