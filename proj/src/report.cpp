#include "tpb/report.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tpb/error.hpp"
#include "tpb/events.hpp"
#include "tpb/timeline.hpp"
#include "tpb/trace.hpp"

namespace tpb {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_doc(const std::string& what) {
  throw Error(ErrorCode::ParseError, what);
}

void check_schema(const ojson& doc, std::string_view want) {
  if (!doc.is_object()) bad_doc("expected a JSON object");
  auto it = doc.find("schema");
  if (it == doc.end() || !it->is_string()) {
    throw Error(ErrorCode::SchemaMismatch, "missing schema field, expected " + std::string(want));
  }
  if (it->get<std::string>() != want) {
    throw Error(ErrorCode::SchemaMismatch,
                "schema " + it->get<std::string>() + ", expected " + std::string(want));
  }
}

const ojson& field(const ojson& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) bad_doc(std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
T get(const ojson& obj, const char* key) {
  try {
    return field(obj, key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    bad_doc(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> get_opt(const ojson& obj, const char* key) {
  if (!obj.contains(key)) return std::nullopt;
  return get<T>(obj, key);
}

template <typename T>
void put_opt(ojson& obj, const char* key, const std::optional<T>& v) {
  if (v) obj[key] = *v;
}

ojson conventions(std::string_view others_method) {
  return ojson{
      {"phase_overlap", "prefill_precedence"},
      {"integration", "trapezoid_over_sample_times"},
      {"others", std::string(others_method)},
      {"power_imbalance", "relative_range"},
      {"decode_split", "equal_share"},
      {"prefill_split", "prompt_token_proportional"},
      {"joules_per_token_denominator", "generated_tokens"},
      {"prefill_per_token_denominator", "prompt_tokens"},
      {"ttft", "prefill_start_to_prefill_end"},
      {"edp", "run_wall_time"},
  };
}

OthersMethod parse_others(const std::string& s) {
  for (auto m : {OthersMethod::NodeMinusComponents, OthersMethod::OtherDomainSum, OthersMethod::None}) {
    if (to_string(m) == s) return m;
  }
  bad_doc("unknown others_method '" + s + "'");
}

Domain domain_field(const std::string& s) {
  auto d = parse_domain(s);
  if (!d) bad_doc("unknown domain '" + s + "'");
  return *d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

ojson read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot read " + path.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void emit(const ojson& doc, const fs::path& path) { write_text(path, doc.dump(2) + "\n"); }

}  // namespace

std::string fnv1a64_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

ojson config_to_json(const RunConfig& c) {
  ojson j;
  j["run_id"] = c.run_id;
  j["model_name"] = c.model_name;
  j["engine"] = c.engine;
  j["workload_cmd"] = c.workload_cmd;
  if (c.dataset) j["dataset"] = {{"path", c.dataset->path.string()}, {"format", c.dataset->format}};
  j["batch_size"] = c.batch_size;
  j["context_bucket"] = {c.context_bucket.min_tokens, c.context_bucket.max_tokens};
  j["tp_degree"] = c.tp_degree;
  j["pp_degree"] = c.pp_degree;
  j["quantization"] = c.quantization;
  ojson sources = ojson::array();
  for (const auto& s : c.sources) {
    ojson params = ojson::object();
    for (const auto& [k, v] : s.backend_params) params[k] = v;
    sources.push_back({{"id", s.source_id},
                       {"domain", std::string(to_string(s.domain))},
                       {"backend", std::string(to_string(s.backend))},
                       {"params", params}});
  }
  j["sources"] = sources;
  j["interval_ms"] = c.interval_ms;
  put_opt(j, "price_usd_per_kwh", c.price_usd_per_kwh);
  put_opt(j, "kg_co2_per_kwh", c.kg_co2_per_kwh);
  put_opt(j, "max_requests", c.max_requests);
  put_opt(j, "max_duration_s", c.max_duration_s);
  put_opt(j, "token_counter_cmd", c.token_counter_cmd);
  return j;
}

std::string config_hash(const RunConfig& c) { return fnv1a64_hex(config_to_json(c).dump()); }

ojson to_json(const MetricsReport& r) {
  ojson j;
  j["schema"] = kMetricsSchema;
  j["run_id"] = r.run_id;
  j["truncated"] = r.truncated;
  j["duration_s"] = r.duration_s;
  j["total_j"] = r.total_j;
  j["prefill_j"] = r.prefill_j;
  j["decode_j"] = r.decode_j;
  j["idle_j"] = r.idle_j;
  put_opt(j, "joules_per_generated_token", r.joules_per_generated_token);
  put_opt(j, "prefill_joules_per_request", r.prefill_joules_per_request);
  put_opt(j, "prefill_joules_per_prompt_token", r.prefill_joules_per_prompt_token);
  put_opt(j, "joules_per_response", r.joules_per_response);
  j["mean_power_w"] = r.mean_power_w;
  j["peak_power_w"] = r.peak_power_w;
  j["energy_delay_product"] = r.energy_delay_product;
  put_opt(j, "power_imbalance", r.power_imbalance);
  put_opt(j, "throughput_tokens_per_s", r.throughput_tokens_per_s);
  put_opt(j, "ttft_ms", r.ttft_ms);
  j["total_kwh"] = r.total_kwh;
  put_opt(j, "cost_usd", r.cost_usd);
  put_opt(j, "co2_kg", r.co2_kg);
  j["counts"] = {{"requests", r.counts.requests},
                 {"complete", r.counts.complete},
                 {"incomplete_requests", r.counts.incomplete},
                 {"prompt_tokens", r.counts.prompt_tokens},
                 {"generated_tokens", r.counts.generated_tokens}};
  const auto& m = r.metadata;
  ojson meta;
  meta["model_name"] = m.model_name;
  meta["engine"] = m.engine;
  meta["quantization"] = m.quantization;
  meta["batch_size"] = m.batch_size;
  meta["context_bucket"] = {m.context_bucket.min_tokens, m.context_bucket.max_tokens};
  meta["tp_degree"] = m.tp_degree;
  meta["pp_degree"] = m.pp_degree;
  meta["interval_ms"] = m.interval_ms;
  put_opt(meta, "price_usd_per_kwh", m.price_usd_per_kwh);
  put_opt(meta, "kg_co2_per_kwh", m.kg_co2_per_kwh);
  meta["phase_source"] = m.phase_source;
  put_opt(meta, "started_at", m.started_at);
  j["metadata"] = meta;
  j["provenance"] = {{"config_hash", m.config_hash},
                     {"harness_version", m.harness_version},
                     {"conventions", conventions(m.others_method)}};
  return j;
}

MetricsReport metrics_from_json(const ojson& j) {
  check_schema(j, kMetricsSchema);
  MetricsReport r;
  r.run_id = get<std::string>(j, "run_id");
  r.truncated = get<bool>(j, "truncated");
  r.duration_s = get<double>(j, "duration_s");
  r.total_j = get<double>(j, "total_j");
  r.prefill_j = get<double>(j, "prefill_j");
  r.decode_j = get<double>(j, "decode_j");
  r.idle_j = get<double>(j, "idle_j");
  r.joules_per_generated_token = get_opt<double>(j, "joules_per_generated_token");
  r.prefill_joules_per_request = get_opt<double>(j, "prefill_joules_per_request");
  r.prefill_joules_per_prompt_token = get_opt<double>(j, "prefill_joules_per_prompt_token");
  r.joules_per_response = get_opt<double>(j, "joules_per_response");
  r.mean_power_w = get<double>(j, "mean_power_w");
  r.peak_power_w = get<double>(j, "peak_power_w");
  r.energy_delay_product = get<double>(j, "energy_delay_product");
  r.power_imbalance = get_opt<double>(j, "power_imbalance");
  r.throughput_tokens_per_s = get_opt<double>(j, "throughput_tokens_per_s");
  r.ttft_ms = get_opt<double>(j, "ttft_ms");
  r.total_kwh = get<double>(j, "total_kwh");
  r.cost_usd = get_opt<double>(j, "cost_usd");
  r.co2_kg = get_opt<double>(j, "co2_kg");
  const auto& c = field(j, "counts");
  r.counts.requests = get<std::uint64_t>(c, "requests");
  r.counts.complete = get<std::uint64_t>(c, "complete");
  r.counts.incomplete = get<std::uint64_t>(c, "incomplete_requests");
  r.counts.prompt_tokens = get<std::uint64_t>(c, "prompt_tokens");
  r.counts.generated_tokens = get<std::uint64_t>(c, "generated_tokens");
  const auto& meta = field(j, "metadata");
  auto& m = r.metadata;
  m.model_name = get<std::string>(meta, "model_name");
  m.engine = get<std::string>(meta, "engine");
  m.quantization = get<std::string>(meta, "quantization");
  m.batch_size = get<std::uint64_t>(meta, "batch_size");
  const auto bucket = get<std::vector<std::uint64_t>>(meta, "context_bucket");
  if (bucket.size() != 2) bad_doc("context_bucket must be [min, max]");
  m.context_bucket = {bucket[0], bucket[1]};
  m.tp_degree = get<std::uint32_t>(meta, "tp_degree");
  m.pp_degree = get<std::uint32_t>(meta, "pp_degree");
  m.interval_ms = get<int>(meta, "interval_ms");
  m.price_usd_per_kwh = get_opt<double>(meta, "price_usd_per_kwh");
  m.kg_co2_per_kwh = get_opt<double>(meta, "kg_co2_per_kwh");
  m.phase_source = get<std::string>(meta, "phase_source");
  m.started_at = get_opt<std::string>(meta, "started_at");
  const auto& prov = field(j, "provenance");
  m.config_hash = get<std::string>(prov, "config_hash");
  m.harness_version = get<std::string>(prov, "harness_version");
  m.others_method = get<std::string>(field(prov, "conventions"), "others");
  return r;
}

ojson to_json(const EnergyLedger& l) {
  ojson j;
  j["schema"] = kLedgerSchema;
  j["run_id"] = l.run_id;
  ojson domains = ojson::object();
  for (const auto& [id, d] : l.source_domains) domains[id] = std::string(to_string(d));
  j["source_domains"] = domains;
  ojson cells = ojson::object();
  for (const auto& [id, pj] : l.by_source_phase) {
    cells[id] = {{"prefill_j", pj.prefill}, {"decode_j", pj.decode}, {"idle_j", pj.idle}};
  }
  j["by_source_phase"] = cells;
  ojson by_domain = ojson::object();
  for (const auto& [d, v] : l.by_domain) by_domain[std::string(to_string(d))] = v;
  j["by_domain"] = by_domain;
  j["totals"] = {{"prefill_j", l.totals.prefill_j},
                 {"decode_j", l.totals.decode_j},
                 {"idle_j", l.totals.idle_j},
                 {"total_j", l.totals.total_j}};
  j["component_total_j"] = l.component_total_j;
  j["others_j"] = l.others_j;
  j["others_method"] = std::string(to_string(l.others_method));
  ojson per_request = ojson::object();
  for (const auto& [id, e] : l.per_request) {
    per_request[id] = {{"prefill_j", e.prefill_j}, {"decode_j", e.decode_j}};
  }
  j["per_request"] = per_request;
  j["incomplete_j"] = l.incomplete_j;
  ojson coverage = ojson::object();
  for (const auto& [id, c] : l.coverage) coverage[id] = c;
  j["coverage"] = coverage;
  j["identity_residual"] = l.identity_residual;
  j["provenance"] = {{"harness_version", kHarnessVersion},
                     {"conventions", conventions(to_string(l.others_method))}};
  return j;
}

EnergyLedger ledger_from_json(const ojson& j) {
  check_schema(j, kLedgerSchema);
  EnergyLedger l;
  l.run_id = get<std::string>(j, "run_id");
  for (const auto& [id, d] : field(j, "source_domains").items()) {
    if (!d.is_string()) bad_doc("source_domains values must be strings");
    l.source_domains[id] = domain_field(d.get<std::string>());
  }
  for (const auto& [id, c] : field(j, "by_source_phase").items()) {
    l.by_source_phase[id] = {get<double>(c, "prefill_j"), get<double>(c, "decode_j"),
                             get<double>(c, "idle_j")};
  }
  for (const auto& [d, v] : field(j, "by_domain").items()) {
    if (!v.is_number()) bad_doc("by_domain values must be numbers");
    l.by_domain[domain_field(d)] = v.get<double>();
  }
  const auto& t = field(j, "totals");
  l.totals = {get<double>(t, "prefill_j"), get<double>(t, "decode_j"), get<double>(t, "idle_j"),
              get<double>(t, "total_j")};
  l.component_total_j = get<double>(j, "component_total_j");
  l.others_j = get<double>(j, "others_j");
  l.others_method = parse_others(get<std::string>(j, "others_method"));
  for (const auto& [id, e] : field(j, "per_request").items()) {
    l.per_request[id] = {get<double>(e, "prefill_j"), get<double>(e, "decode_j")};
  }
  l.incomplete_j = get<double>(j, "incomplete_j");
  for (const auto& [id, c] : field(j, "coverage").items()) {
    if (!c.is_number()) bad_doc("coverage values must be numbers");
    l.coverage[id] = c.get<double>();
  }
  l.identity_residual = get<double>(j, "identity_residual");
  return l;
}

ojson to_json(const SweepTable& t) {
  ojson j;
  j["schema"] = kSweepSchema;
  j["provenance"] = {{"config_hash", t.provenance.config_hash},
                     {"harness_version", t.provenance.harness_version}};
  j["columns"] = sweep_columns();
  ojson rows = ojson::array();
  for (const auto& r : t.rows) rows.push_back(to_json(r));
  j["rows"] = rows;
  return j;
}

SweepTable sweep_from_json(const ojson& j) {
  check_schema(j, kSweepSchema);
  SweepTable t;
  const auto& prov = field(j, "provenance");
  t.provenance.config_hash = get<std::string>(prov, "config_hash");
  t.provenance.harness_version = get<std::string>(prov, "harness_version");
  if (get<std::vector<std::string>>(j, "columns") != sweep_columns()) {
    throw Error(ErrorCode::SchemaMismatch, "sweep columns differ from " + std::string(kSweepSchema));
  }
  const auto& rows = field(j, "rows");
  if (!rows.is_array()) bad_doc("rows must be an array");
  for (const auto& r : rows) t.rows.push_back(metrics_from_json(r));
  return t;
}

void emit_json(const MetricsReport& r, const fs::path& path) { emit(to_json(r), path); }
void emit_json(const EnergyLedger& l, const fs::path& path) { emit(to_json(l), path); }
void emit_json(const SweepTable& t, const fs::path& path) { emit(to_json(t), path); }

MetricsReport read_metrics(const fs::path& path) { return metrics_from_json(read_json(path)); }
EnergyLedger read_ledger(const fs::path& path) { return ledger_from_json(read_json(path)); }
SweepTable read_sweep(const fs::path& path) { return sweep_from_json(read_json(path)); }

const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols = {
      "run_id",
      "model_name",
      "engine",
      "batch_size",
      "context_min_tokens",
      "context_max_tokens",
      "quantization",
      "tp_degree",
      "pp_degree",
      "duration_s",
      "total_j",
      "prefill_j",
      "decode_j",
      "idle_j",
      "joules_per_generated_token",
      "prefill_joules_per_request",
      "prefill_joules_per_prompt_token",
      "joules_per_response",
      "mean_power_w",
      "peak_power_w",
      "energy_delay_product",
      "power_imbalance",
      "throughput_tokens_per_s",
      "ttft_ms",
      "total_kwh",
      "cost_usd",
      "co2_kg",
      "requests",
      "complete_requests",
      "incomplete_requests",
      "prompt_tokens",
      "generated_tokens",
      "truncated",
      "phase_source",
      "others_method",
  };
  return cols;
}

std::vector<Cell> sweep_row(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) -> Cell {
    if (v) return *v;
    return std::monostate{};
  };
  const auto& m = r.metadata;
  return {
      r.run_id,
      m.model_name,
      m.engine,
      m.batch_size,
      m.context_bucket.min_tokens,
      m.context_bucket.max_tokens,
      m.quantization,
      std::uint64_t{m.tp_degree},
      std::uint64_t{m.pp_degree},
      r.duration_s,
      r.total_j,
      r.prefill_j,
      r.decode_j,
      r.idle_j,
      opt(r.joules_per_generated_token),
      opt(r.prefill_joules_per_request),
      opt(r.prefill_joules_per_prompt_token),
      opt(r.joules_per_response),
      r.mean_power_w,
      r.peak_power_w,
      r.energy_delay_product,
      opt(r.power_imbalance),
      opt(r.throughput_tokens_per_s),
      opt(r.ttft_ms),
      r.total_kwh,
      opt(r.cost_usd),
      opt(r.co2_kg),
      r.counts.requests,
      r.counts.complete,
      r.counts.incomplete,
      r.counts.prompt_tokens,
      r.counts.generated_tokens,
      std::string(r.truncated ? "true" : "false"),
      m.phase_source,
      m.others_method,
  };
}

std::string format_cell(const Cell& cell) {
  struct {
    std::string operator()(std::monostate) const { return {}; }
    std::string operator()(std::uint64_t v) const { return std::to_string(v); }
    std::string operator()(double v) const {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", v);
      std::string s = buf;
      return s == "-0" ? "0" : s;
    }
    std::string operator()(const std::string& s) const {
      if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
      std::string out = "\"";
      for (char c : s) {
        if (c == '"') out += '"';
        out += c;
      }
      return out + "\"";
    }
  } visit;
  return std::visit(visit, cell);
}

void emit_csv(const SweepTable& t, const fs::path& path) {
  if (t.rows.empty()) throw Error(ErrorCode::EmptyTable, "sweep table has no rows");
  std::string out;
  const auto& cols = sweep_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const auto& r : t.rows) {
    const auto cells = sweep_row(r);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += format_cell(cells[i]);
    }
    out += '\n';
  }
  write_text(path, out);
}

SweepTable aggregate_runs(const std::vector<fs::path>& dirs) {
  std::vector<std::pair<MetricsReport, std::string>> loaded;
  for (const auto& dir : dirs) {
    const auto path = dir / "metrics.json";
    if (!fs::is_regular_file(path)) {
      throw Error(ErrorCode::MissingArtifact, "missing metrics.json in " + dir.string());
    }
    const auto doc = read_json(path);
    auto report = metrics_from_json(doc);
    loaded.emplace_back(std::move(report), doc.dump());
  }
  std::sort(loaded.begin(), loaded.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first.run_id, a.second) < std::tie(b.first.run_id, b.second);
  });
  SweepTable t;
  std::string hashes;
  for (auto& [report, _] : loaded) {
    hashes += report.metadata.config_hash + "\n";
    t.rows.push_back(std::move(report));
  }
  t.provenance.config_hash = fnv1a64_hex(hashes);
  return t;
}

std::vector<fs::path> emit_plot_data(const fs::path& run_dir, const fs::path& out_dir) {
  const auto trace_path = run_dir / "trace.csv";
  const auto events_path = run_dir / "events.ndjson";
  for (const auto& p : {trace_path, events_path}) {
    if (!fs::is_regular_file(p)) throw Error(ErrorCode::MissingArtifact, "missing " + p.string());
  }
  const auto samples = read_trace(trace_path);
  auto events = read_events(events_path);
  sort_events(events);
  const auto timeline = build_timeline(validate_events(events));
  fs::create_directories(out_dir);

  std::string power = "t_s,source_id,watts,phase\n";
  char buf[64];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.6f",
                  static_cast<double>(s.ts_ns - timeline.run_interval.start_ns) / kNsPerSecond);
    power += std::string(buf) + "," + format_cell(s.source_id) + "," + format_watts(s.watts) +
             "," + std::string(to_string(timeline.phase_at(s.ts_ns))) + "\n";
  }
  const auto power_path = out_dir / "power_timeline.csv";
  write_text(power_path, power);

  std::string phases = "source_id,prefill_j,decode_j,idle_j\n";
  for (const auto& [id, pj] : attribute(samples, timeline).by_source_phase) {
    phases += format_cell(id) + "," + format_cell(pj.prefill) + "," + format_cell(pj.decode) + "," +
              format_cell(pj.idle) + "\n";
  }
  const auto phase_path = out_dir / "phase_energy.csv";
  write_text(phase_path, phases);
  return {power_path, phase_path};
}

}  // namespace tpb
