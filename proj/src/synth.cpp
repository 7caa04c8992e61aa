#include "tpb/synth.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "tpb/error.hpp"

namespace tpb {

std::string_view to_string(OverlapPattern p) noexcept {
  switch (p) {
    case OverlapPattern::Sequential: return "sequential";
    case OverlapPattern::Staircase: return "staircase";
    case OverlapPattern::Random: return "random";
  }
  return "sequential";
}

namespace {

constexpr std::int64_t kNsPerMs = 1'000'000;

struct ScheduledRequest {
  std::string id;
  std::int64_t start_ms = 0;
  std::int64_t prefill_end_ms = 0;
  std::int64_t decode_end_ms = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t generated_tokens = 0;
};

struct Segment {
  std::int64_t a_ns = 0;
  std::int64_t b_ns = 0;
  Phase phase = Phase::Idle;
  std::vector<const ScheduledRequest*> prefilling;
  std::vector<const ScheduledRequest*> decoding;
};

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  std::int64_t ms(const MsRange& r) {
    const auto span = static_cast<std::uint64_t>(r.max_ms - r.min_ms) + 1;
    return r.min_ms + static_cast<std::int64_t>(rng_() % span);
  }
  std::uint64_t count(const CountRange& r) { return r.min + rng_() % (r.max - r.min + 1); }

 private:
  std::mt19937_64 rng_;
};

[[noreturn]] void infeasible(const std::string& why) {
  throw Error(ErrorCode::InfeasibleSpec, why);
}

void check_spec(const ScenarioSpec& s) {
  if (s.run_duration_ms <= 0) infeasible("run_duration must be positive");
  if (s.sample_interval_ms <= 0) infeasible("sample_interval must be positive");
  if (s.sources.empty()) infeasible("no source profiles");
  for (const MsRange* r : {&s.prefill, &s.decode, &s.gap}) {
    if (r->min_ms < 0 || r->max_ms < r->min_ms) infeasible("bad duration range");
  }
  if (s.prompt_tokens.min < 1 || s.prompt_tokens.max < s.prompt_tokens.min ||
      s.generated_tokens.max < s.generated_tokens.min) {
    infeasible("bad token range");
  }
  std::set<std::string> ids;
  for (const auto& p : s.sources) {
    if (!ids.insert(p.source_id).second) infeasible("duplicate source " + p.source_id);
    if (p.prefill_w < 0 || p.decode_w < 0 || p.idle_w < 0) infeasible("negative watts");
  }
}

std::vector<ScheduledRequest> schedule(const ScenarioSpec& s, Draw& draw) {
  std::vector<ScheduledRequest> reqs;
  std::int64_t cursor = draw.ms(s.gap);
  for (std::size_t i = 0; i < s.n_requests; ++i) {
    ScheduledRequest r;
    r.id = "req-" + std::to_string(i);
    const auto p = draw.ms(s.prefill);
    const auto d = draw.ms(s.decode);
    r.prompt_tokens = draw.count(s.prompt_tokens);
    r.generated_tokens = draw.count(s.generated_tokens);
    switch (s.overlap) {
      case OverlapPattern::Sequential:
        r.start_ms = cursor;
        cursor = r.start_ms + p + d + draw.ms(s.gap);
        break;
      case OverlapPattern::Staircase:
        r.start_ms = cursor;
        cursor = r.start_ms + (p + d) / 2;
        break;
      case OverlapPattern::Random: {
        const auto latest = s.run_duration_ms - (p + d);
        if (latest < 0) infeasible("request longer than the run");
        r.start_ms = draw.ms({0, latest});
        break;
      }
    }
    r.prefill_end_ms = r.start_ms + p;
    r.decode_end_ms = r.prefill_end_ms + d;
    if (r.decode_end_ms > s.run_duration_ms) {
      infeasible("request " + r.id + " ends at " + std::to_string(r.decode_end_ms) +
                 " ms, after the run (" + std::to_string(s.run_duration_ms) + " ms)");
    }
    reqs.push_back(std::move(r));
  }
  return reqs;
}

// Elementary pieces between consecutive schedule instants, each tagged by
// checking every request against the piece's midpoint.
std::vector<Segment> segments(const std::vector<ScheduledRequest>& reqs, std::int64_t run_ms) {
  std::set<std::int64_t> cuts{0, run_ms};
  for (const auto& r : reqs) {
    cuts.insert(r.start_ms);
    cuts.insert(r.prefill_end_ms);
    cuts.insert(r.decode_end_ms);
  }
  std::vector<Segment> out;
  for (auto it = cuts.begin(); std::next(it) != cuts.end(); ++it) {
    Segment seg;
    seg.a_ns = *it * kNsPerMs;
    seg.b_ns = *std::next(it) * kNsPerMs;
    const double mid = 0.5 * static_cast<double>(*it + *std::next(it));
    for (const auto& r : reqs) {
      if (r.start_ms <= mid && mid < r.prefill_end_ms) seg.prefilling.push_back(&r);
      if (r.prefill_end_ms <= mid && mid < r.decode_end_ms) seg.decoding.push_back(&r);
    }
    seg.phase = !seg.prefilling.empty()  ? Phase::Prefill
                : !seg.decoding.empty() ? Phase::Decode
                                         : Phase::Idle;
    out.push_back(std::move(seg));
  }
  return out;
}

Phase phase_at(const std::vector<Segment>& segs, std::int64_t t_ns) {
  for (const auto& s : segs) {
    if (s.a_ns <= t_ns && t_ns < s.b_ns) return s.phase;
  }
  return segs.back().phase;  // the run's closing instant
}

}  // namespace

Scenario generate(const ScenarioSpec& spec) {
  check_spec(spec);
  Draw draw(spec.seed);
  const auto reqs = schedule(spec, draw);
  const auto segs = segments(reqs, spec.run_duration_ms);
  const std::int64_t run_ns = spec.run_duration_ms * kNsPerMs;

  Scenario sc;

  // Events.
  PhaseEvent start{};
  start.run_id = spec.run_id;
  start.kind = EventKind::RunStart;
  start.phase_source = "synthetic";
  sc.events.push_back(start);
  for (const auto& r : reqs) {
    auto ev = [&](EventKind k, std::int64_t ms) {
      PhaseEvent e;
      e.ts_ns = ms * kNsPerMs;
      e.run_id = spec.run_id;
      e.request_id = r.id;
      e.kind = k;
      return e;
    };
    auto ps = ev(EventKind::PrefillStart, r.start_ms);
    ps.prompt_tokens = r.prompt_tokens;
    sc.events.push_back(ps);
    sc.events.push_back(ev(EventKind::PrefillEnd, r.prefill_end_ms));
    sc.events.push_back(ev(EventKind::DecodeStart, r.prefill_end_ms));
    sc.events.push_back(ev(EventKind::DecodeEnd, r.decode_end_ms));
    auto rc = ev(EventKind::RequestComplete, r.decode_end_ms);
    rc.generated_tokens = r.generated_tokens;
    sc.events.push_back(rc);
  }
  PhaseEvent end{};
  end.ts_ns = run_ns;
  end.run_id = spec.run_id;
  end.kind = EventKind::RunEnd;
  sc.events.push_back(end);
  sort_events(sc.events);

  // Trace: regular cadence plus a sample pair straddling every phase change,
  // so the linear interpolant is the step function up to a 1 ns ramp.
  std::set<std::int64_t> instants;
  for (std::int64_t t = 0; t <= run_ns; t += spec.sample_interval_ms * kNsPerMs) {
    instants.insert(t);
  }
  instants.insert(run_ns);
  for (std::size_t i = 1; i < segs.size(); ++i) {
    if (segs[i].phase == segs[i - 1].phase) continue;
    instants.insert(segs[i].a_ns - 1);
    instants.insert(segs[i].a_ns);
  }
  for (const auto& prof : spec.sources) {
    sc.domains[prof.source_id] = prof.domain;
    for (auto t : instants) {
      sc.trace.push_back({t, prof.source_id, quantize_watts(prof.watts(phase_at(segs, t)))});
    }
  }

  // Closed-form ledger. A segment followed by a phase change also carries
  // the 1 ns ramp into the next level: (w_next - w) / 2 nJ.
  auto seg_joules = [&](std::size_t i, const SourceProfile& prof) {
    const double w = quantize_watts(prof.watts(segs[i].phase));
    double j = w * static_cast<double>(segs[i].b_ns - segs[i].a_ns) / kNsPerSecond;
    if (i + 1 < segs.size() && segs[i + 1].phase != segs[i].phase) {
      j += (quantize_watts(prof.watts(segs[i + 1].phase)) - w) * 0.5 / kNsPerSecond;
    }
    return j;
  };
  EnergyLedger& L = sc.expected_ledger;
  L.run_id = spec.run_id;
  L.source_domains = sc.domains;
  for (Domain d : kAllDomains) L.by_domain[d] = 0.0;
  for (const auto& prof : spec.sources) {
    PhaseJoules cells;
    for (std::size_t i = 0; i < segs.size(); ++i) cells[segs[i].phase] += seg_joules(i, prof);
    L.by_source_phase[prof.source_id] = cells;
    L.by_domain[prof.domain] += cells.total();
    L.coverage[prof.source_id] = 1.0;
    if (is_component(prof.domain)) {
      L.totals.prefill_j += cells.prefill;
      L.totals.decode_j += cells.decode;
      L.totals.idle_j += cells.idle;
      L.component_total_j += cells.total();
    }
  }
  L.totals.total_j = L.totals.prefill_j + L.totals.decode_j + L.totals.idle_j;
  const bool has_node = std::any_of(spec.sources.begin(), spec.sources.end(),
                                    [](const auto& p) { return p.domain == Domain::NODE; });
  if (has_node) {
    L.others_j = std::max(0.0, L.by_domain[Domain::NODE] - L.component_total_j);
    L.others_method = OthersMethod::NodeMinusComponents;
  } else if (L.by_domain[Domain::OTHER] > 0) {
    L.others_j = L.by_domain[Domain::OTHER];
    L.others_method = OthersMethod::OtherDomainSum;
  }
  for (const auto& r : reqs) L.per_request[r.id] = {};
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& seg = segs[i];
    if (seg.phase == Phase::Idle) continue;
    double joules = 0.0;
    for (const auto& prof : spec.sources) {
      if (is_component(prof.domain)) joules += seg_joules(i, prof);
    }
    if (seg.phase == Phase::Prefill) {
      double tokens = 0;
      for (const auto* r : seg.prefilling) tokens += static_cast<double>(r->prompt_tokens);
      for (const auto* r : seg.prefilling) {
        L.per_request[r->id].prefill_j += joules * static_cast<double>(r->prompt_tokens) / tokens;
      }
    } else {
      for (const auto* r : seg.decoding) {
        L.per_request[r->id].decode_j += joules / static_cast<double>(seg.decoding.size());
      }
    }
  }
  return sc;
}

EnergyLedger oracle_ledger(std::span<const PhaseEvent> events,
                           std::span<const PowerSample> trace, std::int64_t step_ns,
                           const std::map<std::string, Domain>& domains) {
  std::int64_t run_start = 0;
  std::int64_t run_end = 0;
  std::string run_id;
  struct Times {
    std::optional<std::int64_t> ps, pe, ds, de;
  };
  std::map<std::string, Times> reqs;
  for (const auto& e : events) {
    run_id = e.run_id;
    switch (e.kind) {
      case EventKind::RunStart: run_start = e.ts_ns; break;
      case EventKind::RunEnd: run_end = e.ts_ns; break;
      case EventKind::PrefillStart: reqs[e.request_id].ps = e.ts_ns; break;
      case EventKind::PrefillEnd: reqs[e.request_id].pe = e.ts_ns; break;
      case EventKind::DecodeStart: reqs[e.request_id].ds = e.ts_ns; break;
      case EventKind::DecodeEnd: reqs[e.request_id].de = e.ts_ns; break;
      case EventKind::RequestComplete: break;
    }
  }
  // Counter changes at interval edges, consumed as the step midpoint passes.
  struct Change {
    double at;
    int prefill;
    int decode;
  };
  std::vector<Change> changes;
  for (const auto& [_, t] : reqs) {
    if (t.ps) {
      changes.push_back({double(*t.ps), 1, 0});
      changes.push_back({double(t.pe.value_or(run_end)), -1, 0});
    }
    if (t.ds) {
      changes.push_back({double(*t.ds), 0, 1});
      changes.push_back({double(t.de.value_or(run_end)), 0, -1});
    }
  }
  std::sort(changes.begin(), changes.end(),
            [](const Change& a, const Change& b) { return a.at < b.at; });

  struct Stream {
    std::string id;
    Domain domain;
    std::vector<const PowerSample*> pts;
    std::size_t j = 0;
    PhaseJoules cells;
  };
  std::map<std::string, Stream> by_id;
  for (const auto& s : trace) {
    auto& st = by_id[s.source_id];
    st.id = s.source_id;
    st.pts.push_back(&s);
  }
  std::vector<Stream> streams;
  for (auto& [id, st] : by_id) {
    auto it = domains.find(id);
    st.domain = it != domains.end() ? it->second : infer_domain(id);
    streams.push_back(std::move(st));
  }

  std::size_t next_change = 0;
  int prefilling = 0;
  int decoding = 0;
  for (std::int64_t t = run_start; t < run_end; t += step_ns) {
    const std::int64_t h = std::min(step_ns, run_end - t);
    const double mid = static_cast<double>(t) + 0.5 * static_cast<double>(h);
    while (next_change < changes.size() && changes[next_change].at <= mid) {
      prefilling += changes[next_change].prefill;
      decoding += changes[next_change].decode;
      ++next_change;
    }
    const Phase phase = prefilling > 0  ? Phase::Prefill
                        : decoding > 0 ? Phase::Decode
                                       : Phase::Idle;
    const double dt_s = static_cast<double>(h) / kNsPerSecond;
    for (auto& st : streams) {
      const auto& p = st.pts;
      if (p.size() < 2 || mid < double(p.front()->ts_ns) || mid > double(p.back()->ts_ns)) {
        continue;
      }
      while (st.j + 2 < p.size() && double(p[st.j + 1]->ts_ns) <= mid) ++st.j;
      const auto& a = *p[st.j];
      const auto& b = *p[st.j + 1];
      const double f = (mid - double(a.ts_ns)) / double(b.ts_ns - a.ts_ns);
      st.cells[phase] += (a.watts + (b.watts - a.watts) * f) * dt_s;
    }
  }

  EnergyLedger L;
  L.run_id = run_id;
  for (Domain d : kAllDomains) L.by_domain[d] = 0.0;
  for (const auto& st : streams) {
    L.source_domains[st.id] = st.domain;
    L.by_source_phase[st.id] = st.cells;
    L.by_domain[st.domain] += st.cells.total();
    if (is_component(st.domain)) {
      L.totals.prefill_j += st.cells.prefill;
      L.totals.decode_j += st.cells.decode;
      L.totals.idle_j += st.cells.idle;
      L.component_total_j += st.cells.total();
    }
  }
  L.totals.total_j = L.totals.prefill_j + L.totals.decode_j + L.totals.idle_j;
  return L;
}

namespace {

[[noreturn]] void spec_error(ErrorCode code, const std::string& what) {
  throw Error(code, "scenario: " + what);
}

MsRange ms_range(const YAML::Node& n, const std::string& key) {
  if (!n.IsSequence() || n.size() != 2) spec_error(ErrorCode::BadValue, key + ": expected [min_ms, max_ms]");
  MsRange r{n[0].as<std::int64_t>(), n[1].as<std::int64_t>()};
  if (r.min_ms < 0 || r.max_ms < r.min_ms) spec_error(ErrorCode::BadValue, key + ": need 0 <= min <= max");
  return r;
}

CountRange count_range(const YAML::Node& n, const std::string& key) {
  if (!n.IsSequence() || n.size() != 2) spec_error(ErrorCode::BadValue, key + ": expected [min, max]");
  CountRange r{n[0].as<std::uint64_t>(), n[1].as<std::uint64_t>()};
  if (r.max < r.min) spec_error(ErrorCode::BadValue, key + ": need min <= max");
  return r;
}

}  // namespace

ScenarioSpec parse_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigNotFound, "config not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  YAML::Node root;
  try {
    root = YAML::Load(ss.str());
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": line " + std::to_string(e.mark.line + 1) +
                                           ": " + e.msg);
  }
  if (!root.IsMap()) spec_error(ErrorCode::ParseError, "expected a table");

  static const std::set<std::string> keys = {
      "seed",      "run_id", "n_requests",    "overlap_pattern",  "prefill_ms", "decode_ms",
      "gap_ms",    "prompt_tokens", "generated_tokens", "sources", "run_duration_s",
      "sample_interval_ms"};
  ScenarioSpec s;
  try {
    for (const auto& kv : root) {
      const auto key = kv.first.as<std::string>();
      if (!keys.count(key)) spec_error(ErrorCode::UnknownKey, "unknown key '" + key + "'");
    }
    if (auto v = root["seed"]) s.seed = v.as<std::uint64_t>();
    if (auto v = root["run_id"]) s.run_id = v.as<std::string>();
    if (auto v = root["n_requests"]) s.n_requests = v.as<std::size_t>();
    if (auto v = root["overlap_pattern"]) {
      const auto p = v.as<std::string>();
      if (p == "sequential") s.overlap = OverlapPattern::Sequential;
      else if (p == "staircase") s.overlap = OverlapPattern::Staircase;
      else if (p == "random") s.overlap = OverlapPattern::Random;
      else spec_error(ErrorCode::BadValue, "overlap_pattern: expected sequential|staircase|random");
    }
    if (auto v = root["prefill_ms"]) s.prefill = ms_range(v, "prefill_ms");
    if (auto v = root["decode_ms"]) s.decode = ms_range(v, "decode_ms");
    if (auto v = root["gap_ms"]) s.gap = ms_range(v, "gap_ms");
    if (auto v = root["prompt_tokens"]) s.prompt_tokens = count_range(v, "prompt_tokens");
    if (auto v = root["generated_tokens"]) s.generated_tokens = count_range(v, "generated_tokens");
    if (auto v = root["run_duration_s"]) {
      s.run_duration_ms = static_cast<std::int64_t>(std::llround(v.as<double>() * 1000.0));
    }
    if (auto v = root["sample_interval_ms"]) s.sample_interval_ms = v.as<std::int64_t>();
    if (auto v = root["sources"]) {
      if (!v.IsSequence()) spec_error(ErrorCode::BadValue, "sources: expected a list");
      for (const auto& src : v) {
        for (const auto& kv : src) {
          const auto k = kv.first.as<std::string>();
          if (k != "id" && k != "domain" && k != "prefill_w" && k != "decode_w" && k != "idle_w") {
            spec_error(ErrorCode::UnknownKey, "unknown key 'sources." + k + "'");
          }
        }
        SourceProfile p;
        p.source_id = src["id"].as<std::string>();
        auto dom = parse_domain(src["domain"] ? src["domain"].as<std::string>() : "GPU");
        if (!dom) spec_error(ErrorCode::BadValue, "sources.domain: expected GPU|CPU|DRAM|NODE|OTHER");
        p.domain = *dom;
        p.prefill_w = src["prefill_w"].as<double>();
        p.decode_w = src["decode_w"].as<double>();
        p.idle_w = src["idle_w"].as<double>();
        s.sources.push_back(std::move(p));
      }
    }
  } catch (const YAML::Exception& e) {
    spec_error(ErrorCode::BadValue, "line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  return s;
}

}  // namespace tpb
