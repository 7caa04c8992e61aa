#include "tpb/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tpb/error.hpp"

namespace tpb {

double energy_delay_product(double total_j, double run_duration_s) {
  if (!(run_duration_s > 0)) {
    throw Error(ErrorCode::NonPositiveDuration, "run duration must be positive");
  }
  return total_j * run_duration_s;
}

double power_imbalance(const std::map<std::string, double>& per_source_mean_power) {
  if (per_source_mean_power.empty()) {
    throw Error(ErrorCode::NoGpuSources, "power imbalance needs at least one GPU source");
  }
  if (per_source_mean_power.size() == 1) return 0.0;
  double lo = INFINITY;
  double hi = -INFINITY;
  double sum = 0.0;
  for (const auto& [_, w] : per_source_mean_power) {
    lo = std::min(lo, w);
    hi = std::max(hi, w);
    sum += w;
  }
  const double mean = sum / static_cast<double>(per_source_mean_power.size());
  return mean > 0 ? (hi - lo) / mean : 0.0;
}

double to_cost(double total_kwh, double price_usd_per_kwh) {
  if (price_usd_per_kwh < 0) throw Error(ErrorCode::NegativeRate, "negative electricity price");
  return total_kwh * price_usd_per_kwh;
}

double to_co2(double total_kwh, double kg_co2_per_kwh) {
  if (kg_co2_per_kwh < 0) throw Error(ErrorCode::NegativeRate, "negative carbon factor");
  return total_kwh * kg_co2_per_kwh;
}

ReportMetadata metadata_from_config(const RunConfig& c) {
  ReportMetadata m;
  m.model_name = c.model_name;
  m.engine = c.engine;
  m.quantization = c.quantization;
  m.batch_size = c.batch_size;
  m.context_bucket = c.context_bucket;
  m.tp_degree = c.tp_degree;
  m.pp_degree = c.pp_degree;
  m.interval_ms = c.interval_ms;
  m.price_usd_per_kwh = c.price_usd_per_kwh;
  m.kg_co2_per_kwh = c.kg_co2_per_kwh;
  return m;
}

MetricsReport compute_metrics(const EnergyLedger& ledger, const PhaseTimeline& timeline,
                              const PowerSummary& summary, const ReportMetadata& metadata) {
  if (ledger.run_id != timeline.run_id) {
    throw Error(ErrorCode::MismatchedRun,
                "ledger '" + ledger.run_id + "' vs timeline '" + timeline.run_id + "'");
  }
  MetricsReport r;
  r.run_id = ledger.run_id;
  r.metadata = metadata;
  r.metadata.others_method = std::string(to_string(ledger.others_method));
  if (timeline.phase_source) r.metadata.phase_source = *timeline.phase_source;
  if (timeline.started_at) r.metadata.started_at = timeline.started_at;
  r.truncated = timeline.truncated;

  r.duration_s = static_cast<double>(timeline.run_interval.duration()) / kNsPerSecond;
  r.total_j = ledger.totals.total_j;
  r.prefill_j = ledger.totals.prefill_j;
  r.decode_j = ledger.totals.decode_j;
  r.idle_j = ledger.totals.idle_j;

  auto& n = r.counts;
  double ttft_sum_ms = 0.0;
  for (const auto& [_, req] : timeline.requests) {
    ++n.requests;
    n.prompt_tokens += req.prompt_tokens;
    if (!req.complete) continue;
    ++n.complete;
    n.generated_tokens += req.generated_tokens.value_or(0);
    ttft_sum_ms += static_cast<double>(req.prefill->duration()) / 1e6;
  }
  n.incomplete = n.requests - n.complete;

  if (n.generated_tokens > 0) {
    r.joules_per_generated_token = r.decode_j / static_cast<double>(n.generated_tokens);
  }
  if (n.prompt_tokens > 0) {
    r.prefill_joules_per_prompt_token = r.prefill_j / static_cast<double>(n.prompt_tokens);
  }
  if (n.complete > 0) {
    double prefill = 0.0;
    double response = 0.0;
    for (const auto& [_, e] : ledger.per_request) {
      prefill += e.prefill_j;
      response += e.prefill_j + e.decode_j;
    }
    const double complete = static_cast<double>(n.complete);
    r.prefill_joules_per_request = prefill / complete;
    r.joules_per_response = response / complete;
    r.ttft_ms = ttft_sum_ms / complete;
  }

  r.mean_power_w = r.duration_s > 0 ? r.total_j / r.duration_s : 0.0;
  r.peak_power_w = summary.peak_component_w;
  r.energy_delay_product = energy_delay_product(r.total_j, r.duration_s);

  std::map<std::string, double> gpu_means;
  for (const auto& [id, dom] : ledger.source_domains) {
    if (dom != Domain::GPU) continue;
    auto it = summary.mean_power_w.find(id);
    gpu_means[id] = it == summary.mean_power_w.end() ? 0.0 : it->second;
  }
  if (!gpu_means.empty()) r.power_imbalance = power_imbalance(gpu_means);
  if (r.duration_s > 0) {
    r.throughput_tokens_per_s = static_cast<double>(n.generated_tokens) / r.duration_s;
  }

  r.total_kwh = r.total_j / kJoulesPerKwh;
  if (metadata.price_usd_per_kwh) r.cost_usd = to_cost(r.total_kwh, *metadata.price_usd_per_kwh);
  if (metadata.kg_co2_per_kwh) r.co2_kg = to_co2(r.total_kwh, *metadata.kg_co2_per_kwh);
  return r;
}

}  // namespace tpb
