#include "tpb/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "tpb/error.hpp"

namespace tpb {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::BadValue, key + ": " + why);
}

std::string line_of(const YAML::Node& node) {
  return node.Mark().is_null() ? "" : " (line " + std::to_string(node.Mark().line + 1) + ")";
}

void check_keys(const YAML::Node& node, const std::string& where,
                const std::set<std::string>& allowed) {
  if (!node.IsMap()) bad_value(where, "expected a table" + line_of(node));
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw Error(ErrorCode::UnknownKey,
                  "unknown key '" + (where.empty() ? key : where + "." + key) + "'" +
                      line_of(kv.first));
    }
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) bad_value(key, "expected a scalar" + line_of(node));
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    bad_value(key, "cannot convert '" + node.Scalar() + "'" + line_of(node));
  }
}

std::int64_t integer(const YAML::Node& node, const std::string& key) {
  return scalar<std::int64_t>(node, key);
}

std::uint64_t positive(const YAML::Node& node, const std::string& key) {
  auto v = integer(node, key);
  if (v < 1) bad_value(key, "must be >= 1" + line_of(node));
  return static_cast<std::uint64_t>(v);
}

double non_negative(const YAML::Node& node, const std::string& key) {
  auto v = scalar<double>(node, key);
  if (!(v >= 0)) bad_value(key, "must be >= 0" + line_of(node));
  return v;
}

ContextBucket parse_bucket(const YAML::Node& node, const std::string& key) {
  if (!node.IsSequence() || node.size() != 2) {
    bad_value(key, "expected [min_tokens, max_tokens]" + line_of(node));
  }
  auto lo = integer(node[0], key);
  auto hi = integer(node[1], key);
  if (lo < 0 || hi <= lo) bad_value(key, "need 0 <= min < max" + line_of(node));
  return {static_cast<std::uint64_t>(lo), static_cast<std::uint64_t>(hi)};
}

std::pair<std::uint32_t, std::uint32_t> parse_tp_pp(const YAML::Node& node,
                                                    const std::string& key) {
  if (!node.IsSequence() || node.size() != 2) bad_value(key, "expected [tp, pp]" + line_of(node));
  return {static_cast<std::uint32_t>(positive(node[0], key)),
          static_cast<std::uint32_t>(positive(node[1], key))};
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

SourceSpec parse_source(const YAML::Node& node, std::size_t index, const fs::path& base) {
  const std::string where = "run.sources[" + std::to_string(index) + "]";
  check_keys(node, where, {"id", "domain", "backend", "params"});
  SourceSpec s;
  if (!node["id"]) throw Error(ErrorCode::MissingRequired, where + ".id");
  s.source_id = scalar<std::string>(node["id"], where + ".id");
  if (!node["backend"]) throw Error(ErrorCode::MissingRequired, where + ".backend");
  auto backend = parse_backend(scalar<std::string>(node["backend"], where + ".backend"));
  if (!backend) bad_value(where + ".backend", "unknown backend" + line_of(node["backend"]));
  s.backend = *backend;
  if (node["domain"]) {
    auto dom = parse_domain(scalar<std::string>(node["domain"], where + ".domain"));
    if (!dom) bad_value(where + ".domain", "expected GPU|CPU|DRAM|NODE|OTHER");
    s.domain = *dom;
  }
  if (const auto params = node["params"]) {
    if (!params.IsMap()) bad_value(where + ".params", "expected a table");
    for (const auto& kv : params) {
      const auto k = kv.first.as<std::string>();
      auto v = scalar<std::string>(kv.second, where + ".params." + k);
      if (k == "path" || k == "energy_file" || k == "max_energy_file" ||
          k == "milliwatts_file") {
        v = resolve(base, v).string();
      }
      s.backend_params[k] = v;
    }
  }
  return s;
}

const std::set<std::string> kRunKeys = {
    "run_id",      "model_name", "engine",          "workload_cmd",   "dataset",
    "batch_size",  "context_bucket", "tp_degree",   "pp_degree",      "quantization",
    "sources",     "interval_ms", "price_usd_per_kwh", "kg_co2_per_kwh", "max_requests",
    "max_duration_s", "token_counter_cmd"};

RunConfig parse_run(const YAML::Node& node, const fs::path& base) {
  check_keys(node, "run", kRunKeys);
  RunConfig c;
  for (const char* required : {"run_id", "workload_cmd", "sources"}) {
    if (!node[required]) {
      throw Error(ErrorCode::MissingRequired, std::string("run.") + required);
    }
  }
  c.run_id = scalar<std::string>(node["run_id"], "run.run_id");
  c.workload_cmd = scalar<std::string>(node["workload_cmd"], "run.workload_cmd");
  if (auto v = node["model_name"]) c.model_name = scalar<std::string>(v, "run.model_name");
  if (auto v = node["engine"]) c.engine = scalar<std::string>(v, "run.engine");
  if (auto v = node["quantization"]) c.quantization = scalar<std::string>(v, "run.quantization");
  if (auto v = node["batch_size"]) c.batch_size = positive(v, "run.batch_size");
  if (auto v = node["context_bucket"]) c.context_bucket = parse_bucket(v, "run.context_bucket");
  if (auto v = node["tp_degree"]) c.tp_degree = static_cast<std::uint32_t>(positive(v, "run.tp_degree"));
  if (auto v = node["pp_degree"]) c.pp_degree = static_cast<std::uint32_t>(positive(v, "run.pp_degree"));
  if (auto v = node["interval_ms"]) {
    auto ms = integer(v, "run.interval_ms");
    if (ms < 1) bad_value("run.interval_ms", "must be >= 1" + line_of(v));
    c.interval_ms = static_cast<int>(ms);
  }
  if (auto v = node["price_usd_per_kwh"]) c.price_usd_per_kwh = non_negative(v, "run.price_usd_per_kwh");
  if (auto v = node["kg_co2_per_kwh"]) c.kg_co2_per_kwh = non_negative(v, "run.kg_co2_per_kwh");
  if (auto v = node["max_requests"]) c.max_requests = positive(v, "run.max_requests");
  if (auto v = node["max_duration_s"]) {
    c.max_duration_s = non_negative(v, "run.max_duration_s");
    if (*c.max_duration_s == 0) bad_value("run.max_duration_s", "must be > 0");
  }
  if (auto v = node["token_counter_cmd"]) c.token_counter_cmd = scalar<std::string>(v, "run.token_counter_cmd");
  if (auto v = node["dataset"]) {
    check_keys(v, "run.dataset", {"path", "format"});
    if (!v["path"]) throw Error(ErrorCode::MissingRequired, "run.dataset.path");
    DatasetSpec d;
    d.path = resolve(base, scalar<std::string>(v["path"], "run.dataset.path"));
    if (v["format"]) {
      d.format = scalar<std::string>(v["format"], "run.dataset.format");
    } else {
      d.format = d.path.extension().string();
      if (!d.format.empty()) d.format.erase(0, 1);
    }
    if (d.format != "csv" && d.format != "json" && d.format != "jsonl") {
      bad_value("run.dataset.format", "expected csv|json|jsonl");
    }
    c.dataset = std::move(d);
  }
  const auto sources = node["sources"];
  if (!sources.IsSequence()) bad_value("run.sources", "expected a list" + line_of(sources));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    c.sources.push_back(parse_source(sources[i], i, base));
  }
  validate_config(c);
  return c;
}

std::vector<SweepAxis> parse_axes(const YAML::Node& node) {
  check_keys(node, "sweep",
             {"batch_size", "context_bucket", "quantization", "tp_pp", "engine", "model_name"});
  std::vector<SweepAxis> axes;
  for (const auto& kv : node) {
    SweepAxis axis;
    axis.name = kv.first.as<std::string>();
    const std::string key = "sweep." + axis.name;
    if (!kv.second.IsSequence() || kv.second.size() == 0) {
      bad_value(key, "expected a non-empty list" + line_of(kv.second));
    }
    for (const auto& item : kv.second) {
      if (axis.name == "batch_size") {
        axis.values.emplace_back(positive(item, key));
      } else if (axis.name == "context_bucket") {
        axis.values.emplace_back(parse_bucket(item, key));
      } else if (axis.name == "tp_pp") {
        axis.values.emplace_back(parse_tp_pp(item, key));
      } else {
        axis.values.emplace_back(scalar<std::string>(item, key));
      }
    }
    axes.push_back(std::move(axis));
  }
  return axes;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ||
                    ch == '_';
    out += ok ? ch : '-';
  }
  return out;
}

void apply_axis(RunConfig& c, const std::string& axis, const AxisValue& v) {
  if (axis == "batch_size") {
    c.batch_size = std::get<std::uint64_t>(v);
  } else if (axis == "context_bucket") {
    c.context_bucket = std::get<ContextBucket>(v);
  } else if (axis == "quantization") {
    c.quantization = std::get<std::string>(v);
  } else if (axis == "tp_pp") {
    std::tie(c.tp_degree, c.pp_degree) = std::get<std::pair<std::uint32_t, std::uint32_t>>(v);
  } else if (axis == "engine") {
    c.engine = std::get<std::string>(v);
  } else if (axis == "model_name") {
    c.model_name = std::get<std::string>(v);
  }
}

}  // namespace

std::string axis_token(const std::string& axis, const AxisValue& v) {
  if (axis == "batch_size") return "bs" + std::to_string(std::get<std::uint64_t>(v));
  if (axis == "context_bucket") {
    const auto& b = std::get<ContextBucket>(v);
    return "ctx" + std::to_string(b.min_tokens) + "-" + std::to_string(b.max_tokens);
  }
  if (axis == "tp_pp") {
    const auto& [tp, pp] = std::get<std::pair<std::uint32_t, std::uint32_t>>(v);
    return "tp" + std::to_string(tp) + "pp" + std::to_string(pp);
  }
  return sanitize(std::get<std::string>(v));
}

void validate_config(const RunConfig& c) {
  if (c.run_id.empty()) bad_value("run.run_id", "must not be empty");
  if (c.run_id != sanitize(c.run_id)) bad_value("run.run_id", "use [A-Za-z0-9._-] only");
  if (c.batch_size < 1) bad_value("run.batch_size", "must be >= 1");
  if (c.context_bucket.min_tokens >= c.context_bucket.max_tokens) {
    bad_value("run.context_bucket", "min must be < max");
  }
  if (c.interval_ms < 1) bad_value("run.interval_ms", "must be >= 1");
  if (c.sources.empty()) throw Error(ErrorCode::MissingRequired, "run.sources: at least one source");
  std::set<std::string> ids;
  int nodes = 0;
  for (const auto& s : c.sources) {
    if (s.source_id.empty()) bad_value("run.sources", "empty id");
    if (s.source_id.find_first_of(",\n\r") != std::string::npos) {
      bad_value("run.sources", "id '" + s.source_id + "' contains a separator");
    }
    if (!ids.insert(s.source_id).second) bad_value("run.sources", "duplicate id '" + s.source_id + "'");
    nodes += s.domain == Domain::NODE;
  }
  if (nodes > 1) bad_value("run.sources", "at most one NODE source per node");
}

SweepPlan expand_sweep(const RunConfig& base, std::vector<SweepAxis> axes) {
  SweepPlan plan;
  plan.base = base;
  plan.axes = std::move(axes);
  std::vector<std::pair<RunConfig, std::string>> acc{{base, base.run_id}};
  for (const auto& axis : plan.axes) {
    std::vector<std::pair<RunConfig, std::string>> next;
    for (const auto& [cfg, id] : acc) {
      for (const auto& v : axis.values) {
        RunConfig c = cfg;
        apply_axis(c, axis.name, v);
        next.emplace_back(std::move(c), id + "_" + axis_token(axis.name, v));
      }
    }
    acc = std::move(next);
  }
  std::set<std::string> seen;
  for (auto& [cfg, id] : acc) {
    cfg.run_id = id;
    if (!seen.insert(id).second) bad_value("sweep", "axis values produce duplicate run id " + id);
    validate_config(cfg);
    plan.runs.push_back(std::move(cfg));
  }
  return plan;
}

ParsedConfig parse_config_text(const std::string& text, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::ParseError,
                "line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw Error(ErrorCode::ParseError, "line 1: expected a table at top level");
  check_keys(root, "", {"run", "sweep"});
  if (!root["run"]) throw Error(ErrorCode::MissingRequired, "run");
  RunConfig base = parse_run(root["run"], base_dir);
  if (!root["sweep"]) return base;
  if (!base.max_requests && !base.max_duration_s) {
    throw Error(ErrorCode::MissingRequired,
                "run.max_requests or run.max_duration_s (required for sweeps)");
  }
  return expand_sweep(base, parse_axes(root["sweep"]));
}

ParsedConfig parse_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigNotFound, "config not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace tpb
