#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "tpb/config.hpp"
#include "tpb/error.hpp"
#include "tpb/report.hpp"
#include "tpb/runner.hpp"
#include "tpb/synth.hpp"
#include "tpb/trace.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageExit = 2;
constexpr int kRuntimeExit = 4;

std::string default_out() {
  const char* v = std::getenv("TPB_OUT");
  return v && *v ? v : "runs";
}

std::string num(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return buf;
}

void print_summary(const tpb::RunArtifacts& a) {
  const auto& m = a.metrics;
  std::cout << m.run_id << ": total_j=" << num(m.total_j)
            << " j_per_token=" << num(m.joules_per_generated_token)
            << " peak_w=" << num(m.peak_power_w) << " requests=" << m.counts.complete << "/"
            << m.counts.requests << " truncated: " << (m.truncated ? "true" : "false") << "\n";
}

tpb::RunOptions run_options(const std::string& out, const std::optional<double>& price,
                            const std::optional<double>& carbon) {
  tpb::RunOptions o;
  o.out_dir = out;
  o.price_usd_per_kwh = price;
  o.kg_co2_per_kwh = carbon;
  o.progress = [](const std::string& msg) { std::cout << msg << std::endl; };
  std::error_code ec;
  const auto self = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) o.template_vars["synth_driver"] = (self.parent_path() / "tpb_synth_driver").string();
  return o;
}

[[noreturn]] void usage(const std::string& msg) {
  throw tpb::Error(tpb::ErrorCode::BadValue, msg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tpb: phase-aligned power and energy benchmarking for LLM inference"};
  app.require_subcommand(1);

  std::string out = default_out();
  std::optional<double> price;
  std::optional<double> carbon;
  auto rate_flags = [&](CLI::App* cmd) {
    cmd->add_option("--price", price, "Electricity price, USD per kWh (overrides config)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--carbon", carbon, "Carbon factor, kg CO2 per kWh (overrides config)")
        ->check(CLI::NonNegativeNumber);
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "Execute one measured run");
  run->add_option("config", config_path, "Run config (YAML)")->required();
  run->add_option("-o,--out", out, "Output directory (default $TPB_OUT or ./runs)");
  rate_flags(run);

  auto* sweep = app.add_subcommand("sweep", "Execute every run of a sweep config");
  sweep->add_option("config", config_path, "Sweep config (YAML)")->required();
  sweep->add_option("-o,--out", out, "Output directory (default $TPB_OUT or ./runs)");
  rate_flags(sweep);

  std::string trace_path;
  std::string events_path;
  std::optional<std::string> replay_config;
  auto* replay = app.add_subcommand("replay", "Analyze a recorded trace and event log offline");
  replay->add_option("trace", trace_path, "trace.csv")->required();
  replay->add_option("events", events_path, "events.ndjson")->required();
  replay->add_option("-o,--out", out, "Directory for ledger.json and metrics.json");
  replay->add_option("--config", replay_config, "Run config to echo and take source domains from");
  rate_flags(replay);

  std::string spec_path;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario");
  synth->add_option("spec", spec_path, "Scenario spec (YAML)")->required();
  synth->add_option("-o,--out", out, "Directory for trace.csv, events.ndjson, expected_ledger.json");

  std::vector<std::string> dirs;
  auto* report = app.add_subcommand("report", "Aggregate run directories into a sweep table");
  report->add_option("dirs", dirs, "Run artifact directories");
  report->add_option("-o,--out", out, "Directory for sweep.csv and sweep.json");

  std::string run_dir;
  auto* plot = app.add_subcommand("plot", "Write plot-ready CSV files for a run");
  plot->add_option("run_dir", run_dir, "Run artifact directory")->required();
  plot->add_option("-o,--out", out, "Output directory (default <run_dir>/plot)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageExit;
  }

  try {
    if (*run) {
      auto parsed = tpb::parse_config(config_path);
      auto* cfg = std::get_if<tpb::RunConfig>(&parsed);
      if (!cfg) usage(config_path + " describes a sweep; use 'tpb sweep'");
      print_summary(tpb::execute_run(*cfg, run_options(out, price, carbon)));
    } else if (*sweep) {
      auto parsed = tpb::parse_config(config_path);
      tpb::SweepPlan plan;
      if (auto* cfg = std::get_if<tpb::RunConfig>(&parsed)) {
        plan = tpb::expand_sweep(*cfg, {});
      } else {
        plan = std::get<tpb::SweepPlan>(parsed);
      }
      const auto res = tpb::run_sweep(plan, run_options(out, price, carbon));
      for (const auto& a : res.runs) print_summary(a);
      std::cout << "sweep: " << res.runs.size() << " runs, table " << res.csv_path.string() << "\n";
    } else if (*replay) {
      std::optional<tpb::RunConfig> cfg;
      if (replay_config) {
        auto parsed = tpb::parse_config(*replay_config);
        auto* rc = std::get_if<tpb::RunConfig>(&parsed);
        if (!rc) usage(*replay_config + " describes a sweep; replay needs a run config");
        cfg = *rc;
      }
      print_summary(tpb::replay(trace_path, events_path, out, cfg, run_options(out, price, carbon)));
    } else if (*synth) {
      const auto sc = tpb::generate(tpb::parse_scenario_file(spec_path));
      fs::create_directories(out);
      tpb::record_trace(sc.trace, fs::path(out) / "trace.csv");
      tpb::write_events(sc.events, fs::path(out) / "events.ndjson");
      tpb::emit_json(sc.expected_ledger, fs::path(out) / "expected_ledger.json");
      std::cout << "synth: " << sc.events.size() << " events, " << sc.trace.size()
                << " samples, expected total_j=" << num(sc.expected_ledger.totals.total_j) << " in "
                << out << "\n";
    } else if (*report) {
      if (dirs.empty()) usage("report needs at least one run directory");
      std::vector<fs::path> paths(dirs.begin(), dirs.end());
      const auto table = tpb::aggregate_runs(paths);
      fs::create_directories(out);
      tpb::emit_csv(table, fs::path(out) / "sweep.csv");
      tpb::emit_json(table, fs::path(out) / "sweep.json");
      std::cout << "report: " << table.rows.size() << " runs -> " << (fs::path(out) / "sweep.csv").string()
                << "\n";
    } else if (*plot) {
      const fs::path dest = plot->count("--out") ? fs::path(out) : fs::path(run_dir) / "plot";
      for (const auto& p : tpb::emit_plot_data(run_dir, dest)) std::cout << p.string() << "\n";
    }
  } catch (const tpb::Error& e) {
    std::cerr << "error: " << e.what() << " [" << tpb::to_string(e.code()) << "]\n";
    return tpb::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
  return 0;
}
