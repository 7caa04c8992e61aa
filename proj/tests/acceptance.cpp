// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "support.hpp"
#include "tpb/attribution.hpp"
#include "tpb/config.hpp"
#include "tpb/metrics.hpp"
#include "tpb/report.hpp"
#include "tpb/runner.hpp"
#include "tpb/sampler.hpp"
#include "tpb/synth.hpp"
#include "tpb/timeline.hpp"
#include "tpb/trace.hpp"

using namespace tpb;
namespace fs = std::filesystem;

namespace {

constexpr double kIdentityTol = 1e-9;
constexpr double kOracleTol = 1e-4;
constexpr std::int64_t kOracleStepNs = 1'000;  // 1 us
constexpr double kIntegratorTol = 1e-12;
constexpr double kConservationTol = 1e-9;
constexpr double kScaleTol = 1e-12;
constexpr double kQuantFactor = 0.70;
constexpr double kQuantTarget = 0.30;
constexpr double kQuantTol = 0.005;
constexpr double kCsvTol = 1e-5;  // %.6g formatting
constexpr double kIdentityBudgetS = 10;
constexpr double kOracleBudgetS = 60;
constexpr double kSweepBudgetS = 120;

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects the first few failures of one criterion.
struct Check {
  Outcome out;
  int failures = 0;
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    out.pass = false;
    if (failures++ < 3) out.detail += (out.detail.empty() ? "" : "; ") + what;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

ScenarioSpec random_spec(std::mt19937_64& rng, std::uint64_t seed, std::int64_t run_ms) {
  ScenarioSpec s;
  s.seed = seed;
  s.run_id = "acc" + std::to_string(seed);
  s.n_requests = static_cast<std::size_t>(tpbtest::uniform(rng, 1, 6));
  s.overlap = static_cast<OverlapPattern>(tpbtest::uniform(rng, 0, 2));
  s.prefill = {20, 200};
  s.decode = {50, 400};
  s.gap = {0, 100};
  s.prompt_tokens = {16, 4096};
  s.generated_tokens = {8, 512};
  s.run_duration_ms = run_ms;
  s.sample_interval_ms = tpbtest::uniform(rng, 10, 150);
  auto w = [&](int lo, int hi) { return static_cast<double>(tpbtest::uniform(rng, lo, hi)); };
  s.sources = {{"gpu0", Domain::GPU, w(250, 700), w(150, 450), w(40, 90)},
               {"gpu1", Domain::GPU, w(250, 700), w(150, 450), w(40, 90)},
               {"cpu", Domain::CPU, w(60, 150), w(50, 120), w(20, 50)},
               {"node", Domain::NODE, w(1500, 2500), w(1200, 2000), w(500, 800)}};
  return s;
}

// 1: phase totals equal the component-domain sum.
Outcome decomposition_identity() {
  Check c;
  std::mt19937_64 rng(101);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto sc = generate(random_spec(rng, seed, 4500));
    const auto l = analyze(sc.trace, sc.events, sc.domains, {}).ledger;
    double components = 0;
    for (const auto& [d, j] : l.by_domain) {
      if (d != Domain::NODE) components += j;
    }
    const double phases = l.totals.prefill_j + l.totals.decode_j + l.totals.idle_j;
    const double err = tpbtest::rel_err(phases, components);
    worst = std::max(worst, err);
    c.expect(err <= kIdentityTol, "seed " + std::to_string(seed) + " rel " + fmt(err));
  }
  const double took = seconds_since(t0);
  c.expect(took < kIdentityBudgetS, "took " + fmt(took) + " s");
  if (c.out.pass) c.out.detail = "100 scenarios, worst rel " + fmt(worst) + ", " + fmt(took) + " s";
  return c.out;
}

// 2: attribute() vs the brute-force oracle at 1 us.
Outcome oracle_agreement() {
  Check c;
  std::mt19937_64 rng(202);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto sc = generate(random_spec(rng, seed, 4500));
    const auto got = analyze(sc.trace, sc.events, sc.domains, {}).ledger;
    const auto want = oracle_ledger(sc.events, sc.trace, kOracleStepNs, sc.domains);
    for (const auto& [id, w] : want.by_source_phase) {
      const auto& g = got.by_source_phase.at(id);
      for (Phase p : {Phase::Prefill, Phase::Decode, Phase::Idle}) {
        const double err = std::abs(g[p] - w[p]) / std::max(std::abs(w[p]), 1e-6);
        worst = std::max(worst, err);
        c.expect(err <= kOracleTol, "seed " + std::to_string(seed) + " " + id + "/" +
                                        std::string(to_string(p)) + " rel " + fmt(err));
      }
    }
  }
  const double took = seconds_since(t0);
  c.expect(took < kOracleBudgetS, "took " + fmt(took) + " s");
  if (c.out.pass) c.out.detail = "100 seeds, worst rel " + fmt(worst) + ", " + fmt(took) + " s";
  return c.out;
}

// 3: trapezoid exactness on constant and linear traces.
Outcome integrator_exactness() {
  Check c;
  constexpr std::int64_t S = 1'000'000'000;
  std::vector<PowerSample> flat;
  std::vector<PowerSample> ramp;
  for (std::int64_t i = 0; i <= 1000; ++i) {
    const std::int64_t t = i * 10 * S / 1000;
    flat.push_back({t, "x", 100.0});
    ramp.push_back({t, "x", 10.0 * static_cast<double>(t) / S});
  }
  const double e_flat = integrate_energy(flat, {0, 10 * S});
  const double e_ramp = integrate_energy(ramp, {0, 10 * S});
  c.expect(tpbtest::rel_err(e_flat, 1000.0) <= kIntegratorTol, "constant " + fmt(e_flat));
  c.expect(tpbtest::rel_err(e_ramp, 500.0) <= kIntegratorTol, "ramp " + fmt(e_ramp));
  if (c.out.pass) c.out.detail = "constant 1000 J, ramp 500 J";
  return c.out;
}

// 4: counter deltas across a forced wrap.
Outcome counter_wraparound() {
  Check c;
  std::mt19937_64 rng(404);
  for (int i = 0; i < 100000; ++i) {
    const auto wrap = std::uniform_int_distribution<std::uint64_t>(2, std::uint64_t{1} << 63)(rng);
    const auto prev = std::uniform_int_distribution<std::uint64_t>(1, wrap - 1)(rng);
    const auto curr = std::uniform_int_distribution<std::uint64_t>(0, prev - 1)(rng);
    const auto got = counter_delta_uj(prev, curr, wrap);
    const auto want = static_cast<std::uint64_t>(
        ((static_cast<unsigned __int128>(curr) + wrap) - prev) % wrap);
    c.expect(got > 0 && got < wrap, "out of range at i=" + std::to_string(i));
    c.expect(got == want, "modular mismatch at i=" + std::to_string(i));
  }
  if (c.out.pass) c.out.detail = "100000 wrapped pairs";
  return c.out;
}

PhaseEvent event(std::int64_t ts, EventKind k, std::string req = "") {
  PhaseEvent e;
  e.ts_ns = ts;
  e.run_id = "tl";
  e.request_id = std::move(req);
  e.kind = k;
  if (k == EventKind::PrefillStart) e.prompt_tokens = 10;
  if (k == EventKind::RequestComplete) e.generated_tokens = 5;
  return e;
}

// 5: exact partition and prefill precedence.
Outcome timeline_properties() {
  Check c;
  std::mt19937_64 rng(505);
  for (int iter = 0; iter < 500; ++iter) {
    const std::int64_t run = tpbtest::uniform(rng, 1, 300);
    std::vector<PhaseEvent> evs{event(0, EventKind::RunStart), event(run, EventKind::RunEnd)};
    std::vector<std::array<std::int64_t, 3>> rs;
    const int n = static_cast<int>(tpbtest::uniform(rng, 0, 8));
    for (int i = 0; i < n; ++i) {
      std::array<std::int64_t, 3> t{tpbtest::uniform(rng, 0, run), tpbtest::uniform(rng, 0, run),
                                    tpbtest::uniform(rng, 0, run)};
      std::sort(t.begin(), t.end());
      rs.push_back(t);
      const auto id = "q" + std::to_string(i);
      for (auto [ts, k] : {std::pair{t[0], EventKind::PrefillStart},
                           {t[1], EventKind::PrefillEnd},
                           {t[1], EventKind::DecodeStart},
                           {t[2], EventKind::DecodeEnd},
                           {t[2], EventKind::RequestComplete}}) {
        evs.push_back(event(ts, k, id));
      }
    }
    std::shuffle(evs.begin(), evs.end(), rng);
    const auto tl = build_timeline(validate_events(evs));
    const auto& iv = tl.engine_intervals;
    const auto tag = "session " + std::to_string(iter);
    c.expect(!iv.empty() && iv.front().start_ns == 0 && iv.back().end_ns == run,
             tag + " does not span the run");
    std::int64_t covered = 0;
    for (std::size_t i = 0; i < iv.size(); ++i) {
      covered += iv[i].end_ns - iv[i].start_ns;
      c.expect(iv[i].end_ns > iv[i].start_ns, tag + " empty interval");
      if (i + 1 < iv.size()) c.expect(iv[i].end_ns == iv[i + 1].start_ns, tag + " gap/overlap");
    }
    c.expect(covered == run, tag + " coverage " + std::to_string(covered));
    for (std::int64_t t = 0; t < run; ++t) {
      bool prefill = false;
      bool decode = false;
      for (const auto& r : rs) {
        prefill |= r[0] <= t && t < r[1];
        decode |= r[1] <= t && t < r[2];
      }
      const Phase want = prefill ? Phase::Prefill : decode ? Phase::Decode : Phase::Idle;
      c.expect(tl.phase_at(t) == want, tag + " phase at " + std::to_string(t));
    }
  }
  if (c.out.pass) c.out.detail = "500 sessions, per-ns oracle";
  return c.out;
}

// 6: per-request energies sum to the phase totals.
Outcome conservation() {
  Check c;
  std::mt19937_64 rng(606);
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto sc = generate(random_spec(rng, seed, 4500));
    const auto l = analyze(sc.trace, sc.events, sc.domains, {}).ledger;
    double prefill = 0;
    double decode = 0;
    for (const auto& [_, e] : l.per_request) {
      prefill += e.prefill_j;
      decode += e.decode_j;
    }
    const double ep = tpbtest::rel_err(prefill, l.totals.prefill_j);
    const double ed = tpbtest::rel_err(decode, l.totals.decode_j);
    worst = std::max({worst, ep, ed});
    c.expect(ep <= kConservationTol && ed <= kConservationTol,
             "seed " + std::to_string(seed) + " rel " + fmt(std::max(ep, ed)));
    c.expect(l.incomplete_j == 0, "seed " + std::to_string(seed) + " has incomplete energy");
  }
  if (c.out.pass) c.out.detail = "100 sessions, worst rel " + fmt(worst);
  return c.out;
}

// 7: scaling every watt by k.
Outcome scale_linearity() {
  Check c;
  constexpr double k = 3.0;
  std::mt19937_64 rng(707);
  ReportMetadata meta;
  meta.price_usd_per_kwh = 0.15;
  meta.kg_co2_per_kwh = 0.38;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto sc = generate(random_spec(rng, seed, 4500));
    auto scaled = sc.trace;
    for (auto& s : scaled) s.watts *= k;
    const auto a = analyze(sc.trace, sc.events, sc.domains, meta).metrics;
    const auto b = analyze(scaled, sc.events, sc.domains, meta).metrics;
    const auto tag = "seed " + std::to_string(seed) + " ";
    c.expect(tpbtest::rel_err(b.total_j, k * a.total_j) <= kScaleTol, tag + "total_j");
    c.expect(tpbtest::rel_err(*b.joules_per_generated_token, k * *a.joules_per_generated_token) <=
                 kScaleTol,
             tag + "J/token");
    c.expect(tpbtest::rel_err(*b.cost_usd, k * *a.cost_usd) <= kScaleTol, tag + "cost");
    c.expect(tpbtest::rel_err(*b.co2_kg, k * *a.co2_kg) <= kScaleTol, tag + "co2");
    c.expect(std::abs(*b.power_imbalance - *a.power_imbalance) <= kScaleTol, tag + "imbalance");
    c.expect(*b.throughput_tokens_per_s == *a.throughput_tokens_per_s, tag + "throughput");
  }
  if (c.out.pass) c.out.detail = "k=3 over 20 scenarios";
  return c.out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted && ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = !quoted;
      } else if (ch == ',' && !quoted) {
        row.push_back(field);
        field.clear();
      } else {
        field += ch;
      }
    }
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
}

// 8: decode power scaled by 0.70 shows as a 30% J/token drop in the table.
Outcome quantization_study() {
  Check c;
  tpbtest::TempDir tmp;
  ScenarioSpec base;
  base.seed = 8;
  base.n_requests = 6;
  base.overlap = OverlapPattern::Staircase;
  base.prefill = {80, 200};
  base.decode = {300, 900};
  base.run_duration_ms = 8000;
  base.sources = {{"gpu0", Domain::GPU, 600, 400, 80},
                  {"gpu1", Domain::GPU, 580, 390, 78},
                  {"cpu", Domain::CPU, 120, 100, 40}};
  std::vector<fs::path> dirs;
  for (const auto& [label, factor] : {std::pair{"fp16", 1.0}, {"fp8", kQuantFactor}}) {
    auto spec = base;
    spec.run_id = std::string("quant_") + label;
    for (auto& s : spec.sources) s.decode_w *= factor;
    const auto sc = generate(spec);
    ReportMetadata meta;
    meta.quantization = label;
    const auto an = analyze(sc.trace, sc.events, sc.domains, meta);
    dirs.push_back(tmp / spec.run_id);
    fs::create_directories(dirs.back());
    emit_json(an.metrics, dirs.back() / "metrics.json");
  }
  const auto table = aggregate_runs(dirs);
  emit_csv(table, tmp / "sweep.csv");
  const auto rows = parse_csv(tpbtest::read_file(tmp / "sweep.csv"));
  c.expect(rows.size() == 3, "table has " + std::to_string(rows.size()) + " lines");
  if (!c.out.pass) return c.out;
  const auto q = column(rows[0], "quantization");
  const auto jt = column(rows[0], "joules_per_generated_token");
  double fp16 = 0;
  double fp8 = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    (rows[i][q] == "fp8" ? fp8 : fp16) = std::stod(rows[i][jt]);
  }
  const double reduction = 1.0 - fp8 / fp16;
  c.expect(std::abs(reduction - kQuantTarget) <= kQuantTol, "reduction " + fmt(reduction));
  if (c.out.pass) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "J/token %.4g -> %.4g, reduction %.2f%%", fp16, fp8,
                  100 * reduction);
    c.out.detail = buf;
  }
  return c.out;
}

SourceSpec synthetic(const std::string& id, Domain d,
                     std::map<std::string, std::string> params) {
  SourceSpec s;
  s.source_id = id;
  s.domain = d;
  s.backend = Backend::Synthetic;
  s.backend_params = std::move(params);
  return s;
}

// 9: live run vs offline replay of its artifacts.
Outcome replay_determinism() {
  Check c;
  tpbtest::TempDir tmp;
  RunConfig cfg;
  cfg.run_id = "live";
  cfg.workload_cmd = std::string(TPB_SYNTH_DRIVER) + " --requests 4 --overlap staircase";
  cfg.interval_ms = 25;
  cfg.max_duration_s = 30;
  cfg.price_usd_per_kwh = 0.2;
  cfg.sources = {
      synthetic("gpu0", Domain::GPU, {{"wave", "square"}, {"low", "60"}, {"high", "300"},
                                      {"period_ms", "170"}, {"duty", "0.4"}}),
      synthetic("cpu", Domain::CPU, {{"wave", "sine"}, {"mean", "50"}, {"amplitude", "10"},
                                     {"period_ms", "330"}})};
  RunOptions opts;
  opts.out_dir = tmp.path();
  const auto live = execute_run(cfg, opts);
  const auto again = replay(live.trace_path, live.events_path, tmp / "replay", cfg, opts);
  c.expect(tpbtest::read_file(live.ledger_path) == tpbtest::read_file(again.ledger_path),
           "ledger.json differs");
  c.expect(tpbtest::read_file(live.metrics_path) == tpbtest::read_file(again.metrics_path),
           "metrics.json differs");
  if (c.out.pass) {
    c.out.detail = std::to_string(read_trace(live.trace_path).size()) + " samples, " +
                   std::to_string(live.metrics.counts.complete) + " requests, byte-identical";
  }
  return c.out;
}

// 10: JSON identity for every schema; CSV values within formatting precision.
Outcome report_round_trips() {
  Check c;
  tpbtest::TempDir tmp;
  std::mt19937_64 rng(1010);
  SweepTable table;
  table.provenance.config_hash = "feedfacecafebeef";
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto sc = generate(random_spec(rng, seed, 4500));
    ReportMetadata meta;
    meta.batch_size = seed * 16;
    meta.price_usd_per_kwh = 0.11;
    meta.started_at = "2026-03-01T12:00:00Z";
    const auto an = analyze(sc.trace, sc.events, sc.domains, meta);
    c.expect(ledger_from_json(to_json(an.ledger)) == an.ledger, "ledger " + sc.events[0].run_id);
    c.expect(metrics_from_json(to_json(an.metrics)) == an.metrics, "metrics " + sc.events[0].run_id);
    emit_json(an.ledger, tmp / "l.json");
    c.expect(read_ledger(tmp / "l.json") == an.ledger, "ledger file");
    table.rows.push_back(an.metrics);
  }
  c.expect(sweep_from_json(to_json(table)) == table, "sweep");
  emit_json(table, tmp / "sweep.json");
  c.expect(read_sweep(tmp / "sweep.json") == table, "sweep file");
  emit_csv(table, tmp / "sweep.csv");
  const auto rows = parse_csv(tpbtest::read_file(tmp / "sweep.csv"));
  c.expect(rows.size() == table.rows.size() + 1, "csv line count");
  c.expect(rows[0] == sweep_columns(), "csv header");
  std::size_t cells = 0;
  for (std::size_t r = 0; r < table.rows.size() && r + 1 < rows.size(); ++r) {
    const auto want = sweep_row(table.rows[r]);
    const auto& got = rows[r + 1];
    c.expect(got.size() == want.size(), "csv row width");
    for (std::size_t i = 0; i < want.size() && i < got.size(); ++i) {
      ++cells;
      const auto& w = want[i];
      const auto& name = sweep_columns()[i];
      if (std::holds_alternative<std::monostate>(w)) {
        c.expect(got[i].empty(), name + " should be empty");
      } else if (auto* s = std::get_if<std::string>(&w)) {
        c.expect(got[i] == *s, name + " text");
      } else if (auto* u = std::get_if<std::uint64_t>(&w)) {
        c.expect(got[i] == std::to_string(*u), name + " integer");
      } else {
        const double v = std::get<double>(w);
        c.expect(std::abs(std::stod(got[i]) - v) <= kCsvTol * std::abs(v), name + " real");
      }
    }
  }
  if (c.out.pass) {
    c.out.detail = "metrics, ledger, sweep JSON identical; " + std::to_string(cells) + " CSV cells";
  }
  return c.out;
}

// 11: the 6-run synthetic sweep.
Outcome sweep_smoke() {
  Check c;
  tpbtest::TempDir tmp;
  const auto plan = std::get<SweepPlan>(parse_config(fs::path(TPB_CONFIG_DIR) / "sweep_batch_quant.yaml"));
  RunOptions opts;
  opts.out_dir = tmp.path();
  opts.template_vars["synth_driver"] = TPB_SYNTH_DRIVER;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_sweep(plan, opts);
  const double took = seconds_since(t0);
  c.expect(took < kSweepBudgetS, "took " + fmt(took) + " s");
  c.expect(res.runs.size() == 6, std::to_string(res.runs.size()) + " runs");
  for (const auto& run : plan.runs) {
    for (const char* f : {"trace.csv", "events.ndjson", "ledger.json", "metrics.json"}) {
      c.expect(fs::is_regular_file(tmp / run.run_id / f), run.run_id + "/" + f + " missing");
    }
  }
  const auto rows = parse_csv(tpbtest::read_file(res.csv_path));
  c.expect(rows.size() == 7, "table has " + std::to_string(rows.size()) + " lines");
  c.expect(read_sweep(res.json_path).rows.size() == 6, "sweep.json rows");
  if (c.out.pass) c.out.detail = "6 runs in " + fmt(took) + " s, 1 table";
  return c.out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"decomposition identity", decomposition_identity},
      {"attribution vs 1us oracle", oracle_agreement},
      {"integrator exactness", integrator_exactness},
      {"counter wraparound", counter_wraparound},
      {"timeline properties", timeline_properties},
      {"per-request conservation", conservation},
      {"scale linearity", scale_linearity},
      {"synthetic quantization study", quantization_study},
      {"replay determinism", replay_determinism},
      {"report round-trips", report_round_trips},
      {"end-to-end sweep", sweep_smoke},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
