#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>
#include <thread>

#include "support.hpp"
#include "tpb/error.hpp"
#include "tpb/sampler.hpp"
#include "tpb/trace.hpp"

using namespace tpb;
using tpbtest::TempDir;

namespace {

SourceSpec synthetic(const std::string& id, std::map<std::string, std::string> params) {
  return {id, Domain::GPU, Backend::Synthetic, std::move(params)};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("counter arithmetic") {
  CHECK(counter_delta_uj(1'000'000, 2'000'000, 1ULL << 32) == 1'000'000);
  const std::uint64_t wrap = 262'143'328'850ULL;
  CHECK(counter_delta_uj(wrap - 500'000, 500'000, wrap) == 1'000'000);
  CHECK(counter_watts({0, 1'000'000, wrap}, {1'000'000'000, 2'000'000, wrap}) == doctest::Approx(1.0));
  CHECK(counter_watts({0, wrap - 500'000, wrap}, {1'000'000'000, 500'000, wrap}) ==
        doctest::Approx(1.0));
}

TEST_CASE("wraparound delta lies strictly inside (0, wrap_max)") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 100'000; ++i) {
    const std::uint64_t wrap = 2 + rng() % (1ULL << 40);
    const std::uint64_t prev = 1 + rng() % (wrap - 1);
    const std::uint64_t curr = rng() % prev;  // forces a wrap
    const auto d = counter_delta_uj(prev, curr, wrap);
    REQUIRE(d > 0);
    REQUIRE(d < wrap);
    REQUIRE((prev + d) % wrap == curr);
  }
}

TEST_CASE("synthetic constant source reads its value") {
  auto h = open_source(synthetic("gpu0", {{"wave", "constant"}, {"watts", "100"}}));
  for (std::int64_t ts : {0LL, 123'456LL, 9'000'000'000LL}) {
    const auto s = sample_once(*h, ts);
    CHECK(s.watts == 100.0);
    CHECK(s.ts_ns == ts);
    CHECK(s.source_id == "gpu0");
  }
}

TEST_CASE("synthetic waves") {
  auto sq = open_source(synthetic(
      "sq", {{"wave", "square"}, {"low", "10"}, {"high", "20"}, {"period_ms", "1000"}, {"duty", "0.25"}}));
  CHECK(sample_once(*sq, 100'000'000).watts == 20.0);
  CHECK(sample_once(*sq, 600'000'000).watts == 10.0);
  auto ramp = open_source(synthetic("r", {{"wave", "ramp"}, {"start", "0"}, {"slope", "10"}}));
  CHECK(sample_once(*ramp, 2'000'000'000).watts == 20.0);
  CHECK(code_of([] { open_source(synthetic("x", {{"wave", "zigzag"}})); }) == ErrorCode::BadParams);
}

TEST_CASE("open_source probes sensors up front") {
  TempDir tmp;
  CHECK(code_of([&] {
          open_source({"cpu", Domain::CPU, Backend::EnergyCounterFile, {{"path", (tmp / "nope").string()}}});
        }) == ErrorCode::SensorUnavailable);
  CHECK(code_of([&] {
          open_source({"t", Domain::GPU, Backend::TraceReplay, {{"path", (tmp / "none.csv").string()}}});
        }) == ErrorCode::SensorUnavailable);
  CHECK(code_of([] { open_source({"cpu", Domain::CPU, Backend::EnergyCounterFile, {}}); }) ==
        ErrorCode::BadParams);
  CHECK(code_of([&] {
          open_source({"g", Domain::GPU, Backend::GpuTelemetry,
                       {{"milliwatts_file", (tmp / "missing").string()}}});
        }) == ErrorCode::SensorUnavailable);
}

TEST_CASE("energy counter source needs two readings and corrects wraparound") {
  TempDir tmp;
  const auto dir = tmp / "intel-rapl:0";
  std::filesystem::create_directories(dir);
  tpbtest::write_file(dir / "max_energy_range_uj", "10000000\n");
  tpbtest::write_file(dir / "energy_uj", "9500000\n");
  auto h = open_source({"cpu", Domain::CPU, Backend::EnergyCounterFile, {{"path", dir.string()}}});
  CHECK(code_of([&] { sample_once(*h, 0); }) == ErrorCode::FirstReadNoDelta);
  tpbtest::write_file(dir / "energy_uj", "500000\n");
  CHECK(sample_once(*h, 1'000'000'000).watts == doctest::Approx(1.0));
  tpbtest::write_file(dir / "energy_uj", "2500000\n");
  CHECK(sample_once(*h, 1'500'000'000).watts == doctest::Approx(4.0));
}

TEST_CASE("unreadable counter is PermissionDenied") {
  if (::geteuid() == 0) return;  // root reads anything
  TempDir tmp;
  tpbtest::write_file(tmp / "energy_uj", "1\n");
  std::filesystem::permissions(tmp / "energy_uj", std::filesystem::perms::none);
  CHECK(code_of([&] {
          open_source({"cpu", Domain::CPU, Backend::EnergyCounterFile,
                       {{"energy_file", (tmp / "energy_uj").string()}, {"wrap_max_uj", "100"}}});
        }) == ErrorCode::PermissionDenied);
}

TEST_CASE("gpu telemetry converts milliwatts") {
  TempDir tmp;
  tpbtest::write_file(tmp / "mw", "251500\n");
  auto h = open_source({"gpu0", Domain::GPU, Backend::GpuTelemetry, {{"milliwatts_file", (tmp / "mw").string()}}});
  CHECK(sample_once(*h, 5).watts == 251.5);
}

TEST_CASE("baseboard output parsing") {
  CHECK(parse_node_power_reading("    Instantaneous power reading:                   412 Watts\n"
                                 "    Minimum during sampling period:                 95 Watts\n") == 412.0);
  CHECK(parse_node_power_reading("355.5\n") == 355.5);
  CHECK_FALSE(parse_node_power_reading("no reading here").has_value());
  auto h = open_source({"node", Domain::NODE, Backend::BaseboardPoll, {{"command", "echo 'Instantaneous power reading: 640 Watts'"}}});
  CHECK(sample_once(*h, 1).watts == 640.0);
  CHECK(code_of([] {
          open_source({"node", Domain::NODE, Backend::BaseboardPoll, {{"command", "echo garbage"}}});
        }) == ErrorCode::SensorUnavailable);
}

TEST_CASE("sample_once never emits negative or non-finite watts") {
  TempDir tmp;
  tpbtest::write_file(tmp / "mw", "-5000\n");
  auto h = open_source({"gpu0", Domain::GPU, Backend::GpuTelemetry, {{"milliwatts_file", (tmp / "mw").string()}}});
  CHECK(code_of([&] { sample_once(*h, 1); }) == ErrorCode::ReadFailed);
}

TEST_CASE("sampling loop cadence over one second") {
  std::vector<SourceHandle> hs;
  hs.push_back(open_source(synthetic("a", {{"watts", "100"}})));
  hs.push_back(open_source(synthetic("b", {{"watts", "50"}})));
  CollectingSink sink;
  SamplingOptions opt;
  opt.interval_ms = 100;
  opt.epoch_ns = monotonic_now_ns();
  opt.duration_ns = 1'000'000'000;
  const auto summary = run_sampling_loop(hs, opt, sink);
  REQUIRE(summary.sources.size() == 2);
  for (const auto& s : summary.sources) {
    CHECK(s.samples >= 9);
    CHECK(s.dropped == 0);
    CHECK(s.max_jitter_ns >= 0);
  }
  const auto samples = sink.take();
  std::map<std::string, std::int64_t> last;
  for (const auto& s : samples) {
    if (last.count(s.source_id)) CHECK(s.ts_ns > last[s.source_id]);
    last[s.source_id] = s.ts_ns;
  }
}

TEST_CASE("a failing handle is dropped while the loop continues") {
  std::vector<SourceHandle> hs;
  hs.push_back(open_source(synthetic("ok", {{"watts", "100"}})));
  hs.push_back(open_source(synthetic("flaky", {{"watts", "10"}, {"fail_every", "1"}})));
  CollectingSink sink;
  SamplingOptions opt;
  opt.interval_ms = 10;
  opt.epoch_ns = monotonic_now_ns();
  opt.duration_ns = 200'000'000;
  const auto summary = run_sampling_loop(hs, opt, sink);
  CHECK(summary.dropped() > 0);
  for (const auto& s : summary.sources) {
    if (s.source_id == "ok") CHECK(s.samples > 0);
    if (s.source_id == "flaky") CHECK(s.samples == 0);
  }
}

TEST_CASE("all sources failing aborts the loop") {
  std::vector<SourceHandle> hs;
  hs.push_back(open_source(synthetic("f1", {{"watts", "1"}, {"fail_every", "1"}})));
  hs.push_back(open_source(synthetic("f2", {{"watts", "1"}, {"fail_every", "1"}})));
  CollectingSink sink;
  SamplingOptions opt;
  opt.interval_ms = 10;
  opt.epoch_ns = monotonic_now_ns();
  opt.duration_ns = 1'000'000'000;
  CHECK(code_of([&] { run_sampling_loop(hs, opt, sink); }) == ErrorCode::AllSourcesFailed);
}

TEST_CASE("trace replay delivers the recorded samples in order") {
  TempDir tmp;
  // Independent fixture text, parsed here by hand.
  std::string text = "ts_ns,source_id,watts\n";
  std::vector<std::pair<std::int64_t, double>> want;
  for (int i = 0; i < 10; ++i) {
    want.emplace_back(i * 5'000'000LL, 100.0 + i * 0.25);
    text += std::to_string(i * 5'000'000LL) + ",gpu0," + std::to_string(100.0 + i * 0.25) + "\n";
  }
  tpbtest::write_file(tmp / "t.csv", text);
  std::vector<SourceHandle> hs;
  hs.push_back(open_source({"gpu0", Domain::GPU, Backend::TraceReplay, {{"path", (tmp / "t.csv").string()}}}));
  CollectingSink sink;
  SamplingOptions opt;
  opt.interval_ms = 1;
  opt.epoch_ns = monotonic_now_ns();
  opt.duration_ns = 5'000'000'000;
  run_sampling_loop(hs, opt, sink);
  const auto got = sink.take();
  REQUIRE(got.size() == 10);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].ts_ns == want[i].first);
    CHECK(got[i].watts == want[i].second);
  }
}

TEST_CASE("sink accepts concurrent producers") {
  CollectingSink sink;
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t) {
    ts.emplace_back([&, t] {
      for (int i = 0; i < 1000; ++i) sink.consume({i, "s" + std::to_string(t), 1.0});
    });
  }
  for (auto& t : ts) t.join();
  CHECK(sink.size() == 4000);
}
