#include "tpb/attribution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "tpb/error.hpp"

namespace tpb {

std::string_view to_string(OthersMethod m) noexcept {
  switch (m) {
    case OthersMethod::NodeMinusComponents: return "node_minus_components";
    case OthersMethod::OtherDomainSum: return "other_domain_sum";
    case OthersMethod::None: return "none";
  }
  return "none";
}

Domain infer_domain(std::string_view source_id) noexcept {
  std::string id(source_id);
  std::transform(id.begin(), id.end(), id.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto starts = [&](std::string_view p) { return id.rfind(p, 0) == 0; };
  if (starts("gpu")) return Domain::GPU;
  if (starts("dram") || starts("mem")) return Domain::DRAM;
  if (starts("cpu") || starts("pkg") || starts("package")) return Domain::CPU;
  if (starts("node") || starts("bmc") || starts("ipmi") || starts("wall")) return Domain::NODE;
  return Domain::OTHER;
}

namespace {

void check_ordered(std::span<const PowerSample> samples) {
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].ts_ns <= samples[i - 1].ts_ns) {
      throw Error(ErrorCode::UnorderedSamples,
                  "samples of '" + samples[i].source_id + "' not strictly increasing at ts " +
                      std::to_string(samples[i].ts_ns));
    }
  }
}

double interpolate(const PowerSample& a, const PowerSample& b, TimestampNs t) {
  if (t == a.ts_ns) return a.watts;
  if (t == b.ts_ns) return b.watts;
  const double f = static_cast<double>(t - a.ts_ns) / static_cast<double>(b.ts_ns - a.ts_ns);
  return a.watts + (b.watts - a.watts) * f;
}

// Assumes ordered samples.
double integrate_sorted(std::span<const PowerSample> s, TimestampNs lo, TimestampNs hi) {
  if (s.size() < 2 || hi <= lo) return 0.0;
  lo = std::max(lo, s.front().ts_ns);
  hi = std::min(hi, s.back().ts_ns);
  if (hi <= lo) return 0.0;
  // First segment [s[i], s[i+1]] with s[i+1].ts > lo.
  auto it = std::upper_bound(s.begin(), s.end(), lo,
                             [](TimestampNs v, const PowerSample& p) { return v < p.ts_ns; });
  std::size_t i = static_cast<std::size_t>(it - s.begin());
  i = i == 0 ? 0 : i - 1;
  double joules = 0.0;
  for (; i + 1 < s.size() && s[i].ts_ns < hi; ++i) {
    const auto a = std::max(lo, s[i].ts_ns);
    const auto b = std::min(hi, s[i + 1].ts_ns);
    if (b <= a) continue;
    const double wa = interpolate(s[i], s[i + 1], a);
    const double wb = interpolate(s[i], s[i + 1], b);
    joules += 0.5 * (wa + wb) * (static_cast<double>(b - a) / kNsPerSecond);
  }
  return joules;
}

// Summed component watts at instant t; sources not bracketing t add nothing.
double component_power_at(const std::map<std::string, std::vector<PowerSample>>& by_source,
                          const std::map<std::string, Domain>& domains, TimestampNs t) {
  double sum = 0.0;
  for (const auto& [id, s] : by_source) {
    if (!is_component(domains.at(id)) || s.empty()) continue;
    if (t < s.front().ts_ns || t > s.back().ts_ns) continue;
    auto it = std::lower_bound(s.begin(), s.end(), t,
                               [](const PowerSample& p, TimestampNs v) { return p.ts_ns < v; });
    if (it->ts_ns == t) {
      sum += it->watts;
    } else {
      sum += interpolate(*(it - 1), *it, t);
    }
  }
  return sum;
}

std::map<std::string, Domain> resolve_domains(
    const std::map<std::string, std::vector<PowerSample>>& by_source,
    const std::map<std::string, Domain>& given) {
  std::map<std::string, Domain> out;
  for (const auto& [id, _] : by_source) {
    auto it = given.find(id);
    out[id] = it != given.end() ? it->second : infer_domain(id);
  }
  return out;
}

}  // namespace

double integrate_energy(std::span<const PowerSample> samples, Interval window) {
  check_ordered(samples);
  return integrate_sorted(samples, window.start_ns, window.end_ns);
}

std::map<std::string, std::vector<PowerSample>> split_by_source(
    std::span<const PowerSample> samples) {
  std::map<std::string, std::vector<PowerSample>> out;
  for (const auto& s : samples) out[s.source_id].push_back(s);
  return out;
}

RequestShares per_request_energy(std::span<const PowerSample> samples,
                                 const PhaseTimeline& timeline,
                                 const std::map<std::string, Domain>& domains) {
  const auto by_source = split_by_source(samples);
  const auto doms = resolve_domains(by_source, domains);
  for (const auto& [_, s] : by_source) check_ordered(s);

  RequestShares shares;
  for (const auto& [id, r] : timeline.requests) {
    if (r.complete) shares.complete[id] = {};
  }

  const auto run = timeline.run_interval;
  std::set<TimestampNs> cuts{run.start_ns, run.end_ns};
  for (const auto& [_, r] : timeline.requests) {
    for (const auto& iv : {r.prefill, r.decode}) {
      if (!iv) continue;
      cuts.insert(std::clamp(iv->start_ns, run.start_ns, run.end_ns));
      cuts.insert(std::clamp(iv->end_ns, run.start_ns, run.end_ns));
    }
  }

  std::vector<const RequestRecord*> prefilling;
  std::vector<const RequestRecord*> decoding;
  for (auto it = cuts.begin(); std::next(it) != cuts.end(); ++it) {
    const auto a = *it;
    const auto b = *std::next(it);
    prefilling.clear();
    decoding.clear();
    for (const auto& [_, r] : timeline.requests) {
      if (r.prefill && r.prefill->start_ns <= a && b <= r.prefill->end_ns) prefilling.push_back(&r);
      if (r.decode && r.decode->start_ns <= a && b <= r.decode->end_ns) decoding.push_back(&r);
    }
    const Phase phase = resolve_engine_phase(prefilling.size(), decoding.size());
    if (phase == Phase::Idle) continue;

    double joules = 0.0;
    for (const auto& [id, s] : by_source) {
      if (is_component(doms.at(id))) joules += integrate_sorted(s, a, b);
    }

    auto credit = [&](const RequestRecord& r, double j) {
      if (!r.complete) {
        shares.incomplete_j += j;
        return;
      }
      auto& e = shares.complete[r.request_id];
      (phase == Phase::Prefill ? e.prefill_j : e.decode_j) += j;
    };
    if (phase == Phase::Prefill) {
      double tokens = 0.0;
      for (const auto* r : prefilling) tokens += static_cast<double>(r->prompt_tokens);
      for (const auto* r : prefilling) {
        credit(*r, joules * static_cast<double>(r->prompt_tokens) / tokens);
      }
    } else {
      const double each = joules / static_cast<double>(decoding.size());
      for (const auto* r : decoding) credit(*r, each);
    }
  }
  return shares;
}

EnergyLedger attribute(std::span<const PowerSample> samples, const PhaseTimeline& timeline,
                       const std::map<std::string, Domain>& domains) {
  if (timeline.engine_intervals.empty() || timeline.run_interval.duration() <= 0) {
    throw Error(ErrorCode::EmptyTimeline, "run '" + timeline.run_id + "' has zero duration");
  }
  const auto by_source = split_by_source(samples);
  for (const auto& [_, s] : by_source) check_ordered(s);

  EnergyLedger ledger;
  ledger.run_id = timeline.run_id;
  ledger.source_domains = resolve_domains(by_source, domains);
  for (Domain d : kAllDomains) ledger.by_domain[d] = 0.0;

  const auto run = timeline.run_interval;
  const double run_ns = static_cast<double>(run.duration());
  for (const auto& [id, s] : by_source) {
    PhaseJoules cells;
    for (const auto& iv : timeline.engine_intervals) {
      cells[iv.phase] += integrate_sorted(s, iv.start_ns, iv.end_ns);
    }
    ledger.by_source_phase[id] = cells;

    const Domain dom = ledger.source_domains.at(id);
    ledger.by_domain[dom] += integrate_sorted(s, run.start_ns, run.end_ns);

    double covered = 0.0;
    if (s.size() >= 2) {
      const auto lo = std::max(run.start_ns, s.front().ts_ns);
      const auto hi = std::min(run.end_ns, s.back().ts_ns);
      covered = hi > lo ? static_cast<double>(hi - lo) / run_ns : 0.0;
    }
    ledger.coverage[id] = covered;

    if (is_component(dom)) {
      ledger.totals.prefill_j += cells.prefill;
      ledger.totals.decode_j += cells.decode;
      ledger.totals.idle_j += cells.idle;
    }
  }
  ledger.totals.total_j = ledger.totals.prefill_j + ledger.totals.decode_j + ledger.totals.idle_j;

  bool has_node = false;
  for (const auto& [_, d] : ledger.source_domains) has_node |= d == Domain::NODE;
  for (const auto& [d, j] : ledger.by_domain) {
    if (is_component(d)) ledger.component_total_j += j;
  }
  if (has_node) {
    ledger.others_j = std::max(0.0, ledger.by_domain[Domain::NODE] - ledger.component_total_j);
    ledger.others_method = OthersMethod::NodeMinusComponents;
  } else if (ledger.by_domain[Domain::OTHER] > 0.0) {
    ledger.others_j = ledger.by_domain[Domain::OTHER];
    ledger.others_method = OthersMethod::OtherDomainSum;
  }

  const double scale = std::max(std::abs(ledger.component_total_j), 1e-300);
  ledger.identity_residual =
      std::abs(ledger.totals.total_j - ledger.component_total_j) / scale;
  if (ledger.component_total_j == 0.0 && ledger.totals.total_j == 0.0) {
    ledger.identity_residual = 0.0;
  }
  if (ledger.identity_residual > kIdentityTolerance) {
    throw Error(ErrorCode::IdentityViolation,
                "phase sum " + std::to_string(ledger.totals.total_j) +
                    " J != component sum " + std::to_string(ledger.component_total_j) + " J");
  }

  auto shares = per_request_energy(samples, timeline, ledger.source_domains);
  ledger.per_request = std::move(shares.complete);
  ledger.incomplete_j = shares.incomplete_j;
  return ledger;
}

PowerSummary summarize_power(std::span<const PowerSample> samples,
                             const PhaseTimeline& timeline,
                             const std::map<std::string, Domain>& domains) {
  const auto by_source = split_by_source(samples);
  for (const auto& [_, s] : by_source) check_ordered(s);
  const auto doms = resolve_domains(by_source, domains);
  const auto run = timeline.run_interval;

  PowerSummary out;
  std::set<TimestampNs> instants{run.start_ns, run.end_ns};
  for (const auto& [id, s] : by_source) {
    out.sample_counts[id] = s.size();
    const double secs = static_cast<double>(run.duration()) / kNsPerSecond;
    out.mean_power_w[id] = secs > 0 ? integrate_sorted(s, run.start_ns, run.end_ns) / secs : 0.0;
    if (!is_component(doms.at(id))) continue;
    for (const auto& p : s) {
      if (p.ts_ns >= run.start_ns && p.ts_ns <= run.end_ns) instants.insert(p.ts_ns);
    }
  }
  for (auto t : instants) {
    out.peak_component_w = std::max(out.peak_component_w, component_power_at(by_source, doms, t));
  }
  return out;
}

}  // namespace tpb
