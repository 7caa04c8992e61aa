#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "support.hpp"
#include "tpb/config.hpp"
#include "tpb/dataset.hpp"
#include "tpb/error.hpp"

using namespace tpb;
using tpbtest::TempDir;

namespace {

const char* kMinimal = R"(
run:
  run_id: mini
  workload_cmd: "true"
  sources:
    - id: gpu0
      domain: GPU
      backend: synthetic
      params: {wave: constant, watts: "100"}
)";

std::string with_run_line(const std::string& line) {
  std::string s = kMinimal;
  const auto at = s.find("  sources:");
  return s.insert(at, "  " + line + "\n");
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

TEST_CASE("minimal config takes defaults") {
  const auto parsed = parse_config_text(kMinimal);
  const auto& c = std::get<RunConfig>(parsed);
  CHECK(c.run_id == "mini");
  CHECK(c.interval_ms == 100);
  CHECK(c.batch_size == 1);
  CHECK(c.tp_degree == 1);
  CHECK(c.pp_degree == 1);
  CHECK(c.quantization == "fp16");
  REQUIRE(c.sources.size() == 1);
  CHECK(c.sources[0].backend == Backend::Synthetic);
  CHECK(c.sources[0].backend_params.at("watts") == "100");
  CHECK_FALSE(c.price_usd_per_kwh.has_value());
}

TEST_CASE("sweep expands to the product of its axes") {
  const std::string text = std::string(kMinimal).insert(std::string(kMinimal).find("  sources:"), "  max_requests: 4\n") +
                           "sweep:\n  batch_size: [32, 256, 1024]\n  quantization: [fp16, fp8]\n";
  const auto plan = std::get<SweepPlan>(parse_config_text(text));
  REQUIRE(plan.runs.size() == 6);
  CHECK(plan.runs[0].run_id == "mini_bs32_fp16");
  CHECK(plan.runs[1].run_id == "mini_bs32_fp8");
  CHECK(plan.runs[5].run_id == "mini_bs1024_fp8");
  CHECK(plan.runs[5].batch_size == 1024);
  CHECK(plan.runs[5].quantization == "fp8");
  // Same text, same plan.
  const auto again = std::get<SweepPlan>(parse_config_text(text));
  for (std::size_t i = 0; i < plan.runs.size(); ++i) CHECK(again.runs[i] == plan.runs[i]);
}

TEST_CASE("every sweep axis") {
  std::string text = with_run_line("max_duration_s: 10");
  text += R"(sweep:
  context_bucket: [[0, 2000], [2000, 5000], [5000, 10000]]
  tp_pp: [[1, 1], [2, 1]]
  engine: [vllm, "tensorrt llm"]
  model_name: [llama-1b]
)";
  const auto plan = std::get<SweepPlan>(parse_config_text(text));
  REQUIRE(plan.runs.size() == 12);
  CHECK(plan.runs[0].run_id == "mini_ctx0-2000_tp1pp1_vllm_llama-1b");
  CHECK(plan.runs[3].run_id == "mini_ctx0-2000_tp2pp1_tensorrt-llm_llama-1b");
  CHECK(plan.runs[3].tp_degree == 2);
  CHECK(plan.runs[11].context_bucket == ContextBucket{5000, 10000});
}

TEST_CASE("sweeps need a stop condition") {
  const std::string text = std::string(kMinimal) + "sweep:\n  batch_size: [1, 2]\n";
  CHECK(code_of([&] { parse_config_text(text); }) == ErrorCode::MissingRequired);
}

TEST_CASE("config errors") {
  CHECK(code_of([] { parse_config_text(with_run_line("interval_ms: -5")); }) == ErrorCode::BadValue);
  CHECK(code_of([] { parse_config_text(with_run_line("batch_size: 0")); }) == ErrorCode::BadValue);
  CHECK(code_of([] { parse_config_text(with_run_line("context_bucket: [10, 5]")); }) == ErrorCode::BadValue);
  CHECK(code_of([] { parse_config_text(with_run_line("price_usd_per_kwh: -1")); }) == ErrorCode::BadValue);
  CHECK(code_of([] { parse_config_text(with_run_line("colour: blue")); }) == ErrorCode::UnknownKey);
  CHECK(code_of([] { parse_config_text("run:\n  run_id: x\n  sources: []\n"); }) == ErrorCode::MissingRequired);
  CHECK(code_of([] { parse_config_text("run: [unclosed\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_config_text(std::string(kMinimal) + "extra: 1\n"); }) == ErrorCode::UnknownKey);
  CHECK(code_of([] { parse_config("/nonexistent/config.yaml"); }) == ErrorCode::ConfigNotFound);
  std::string two_nodes = kMinimal;
  two_nodes += "    - {id: n1, domain: NODE, backend: synthetic, params: {watts: \"1\"}}\n"
               "    - {id: n2, domain: NODE, backend: synthetic, params: {watts: \"1\"}}\n";
  CHECK(code_of([&] { parse_config_text(two_nodes); }) == ErrorCode::BadValue);
  std::string dup = kMinimal;
  dup += "    - {id: gpu0, domain: GPU, backend: synthetic, params: {watts: \"1\"}}\n";
  CHECK(code_of([&] { parse_config_text(dup); }) == ErrorCode::BadValue);
}

TEST_CASE("parse errors carry a line number") {
  try {
    parse_config_text("run:\n  run_id: x\n  workload_cmd: [\n");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
  try {
    parse_config_text(with_run_line("colour: blue"));
    FAIL("expected UnknownKey");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }
}

TEST_CASE("relative paths resolve against the config file") {
  TempDir tmp;
  std::filesystem::create_directories(tmp / "cfg");
  tpbtest::write_file(tmp / "cfg" / "run.yaml",
                      "run:\n  run_id: p\n  workload_cmd: \"true\"\n  dataset: {path: data/p.csv}\n"
                      "  sources:\n    - {id: t, backend: trace_replay, params: {path: traces/t.csv}}\n");
  const auto c = std::get<RunConfig>(parse_config(tmp / "cfg" / "run.yaml"));
  CHECK(c.dataset->path == tmp / "cfg" / "data" / "p.csv");
  CHECK(c.dataset->format == "csv");
  CHECK(c.sources[0].backend_params.at("path") == (tmp / "cfg" / "traces" / "t.csv").string());
}

TEST_CASE("load_prompts formats") {
  TempDir tmp;
  tpbtest::write_file(tmp / "p.csv", "id,prompt\n1,hello world\n2,\"a, quoted \"\"one\"\"\"\n3,\"multi\nline\"\n");
  CHECK(load_prompts(tmp / "p.csv", "csv") ==
        std::vector<std::string>{"hello world", "a, quoted \"one\"", "multi\nline"});
  tpbtest::write_file(tmp / "p.json", R"(["first", "second"])");
  CHECK(load_prompts(tmp / "p.json", "json") == std::vector<std::string>{"first", "second"});
  tpbtest::write_file(tmp / "o.json", R"([{"prompt": "x", "id": 1}, {"prompt": "y"}])");
  CHECK(load_prompts(tmp / "o.json", "json") == std::vector<std::string>{"x", "y"});
  tpbtest::write_file(tmp / "p.jsonl", "{\"prompt\": \"one\"}\n\"two\"\n\n");
  CHECK(load_prompts(tmp / "p.jsonl", "jsonl") == std::vector<std::string>{"one", "two"});
}

TEST_CASE("load_prompts errors") {
  TempDir tmp;
  tpbtest::write_file(tmp / "nocol.csv", "id,text\n1,hello\n");
  CHECK(code_of([&] { load_prompts(tmp / "nocol.csv", "csv"); }) == ErrorCode::MissingColumn);
  tpbtest::write_file(tmp / "bad.json", "{not json");
  CHECK(code_of([&] { load_prompts(tmp / "bad.json", "json"); }) == ErrorCode::ParseError);
  tpbtest::write_file(tmp / "ragged.csv", "id,prompt\n1,a,extra\n");
  CHECK(code_of([&] { load_prompts(tmp / "ragged.csv", "csv"); }) == ErrorCode::ParseError);
  CHECK(code_of([&] { load_prompts(tmp / "missing.csv", "csv"); }) == ErrorCode::ConfigNotFound);
}

TEST_CASE("bucketing with the context-length ranges 0-2K, 2K-5K, 5K-10K") {
  const std::vector<ContextBucket> buckets{{0, 2000}, {2000, 5000}, {5000, 10000}};
  auto words = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += "w ";
    return s;
  };
  const auto b = bucket_prompts({words(100), words(3000), words(8000)}, buckets);
  REQUIRE(b.buckets.size() == 3);
  for (const auto& v : b.buckets) CHECK(v.size() == 1);
  CHECK(b.dropped == 0);
  const auto edge = bucket_prompts({words(2000)}, {{0, 2000}, {2000, 5000}});
  CHECK(edge.buckets[0].empty());
  CHECK(edge.buckets[1].size() == 1);
  const auto out = bucket_prompts({words(20000), words(10)}, buckets);
  CHECK(out.dropped == 1);
}

TEST_CASE("bucketing errors") {
  CHECK(code_of([] { bucket_prompts({}, {{0, 10}}); }) == ErrorCode::EmptyDataset);
  CHECK(code_of([] { bucket_prompts({"a"}, {{0, 10}, {5, 20}}); }) == ErrorCode::OverlappingBuckets);
}

TEST_CASE("bucketing partitions the dataset") {
  std::mt19937_64 rng(9);
  const std::vector<ContextBucket> buckets{{0, 20}, {20, 50}, {70, 100}};
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<std::string> prompts;
    const auto n = tpbtest::uniform(rng, 1, 40);
    for (int i = 0; i < n; ++i) {
      std::string p = "id" + std::to_string(i) + " ";
      const auto w = tpbtest::uniform(rng, 0, 120);
      for (int k = 0; k < w; ++k) p += "tok" + std::to_string(i) + "_" + std::to_string(k) + " ";
      prompts.push_back(p);
    }
    const auto b = bucket_prompts(prompts, buckets);
    std::size_t total = b.dropped;
    std::multiset<std::string> seen;
    for (const auto& v : b.buckets) {
      total += v.size();
      seen.insert(v.begin(), v.end());
    }
    CHECK(total == prompts.size());
    for (const auto& p : seen) CHECK(seen.count(p) == 1);
  }
}

TEST_CASE("an external counter agrees with the whitespace counter on a fixed corpus") {
  const std::vector<std::string> corpus{"one", "two words", "  padded   text here ",
                                        "tabs\tand\nnewlines too", std::string(2500, 'x') + " y"};
  const std::vector<ContextBucket> buckets{{0, 2}, {2, 4}, {4, 10}};
  const auto counter = command_token_counter("wc -w");
  for (const auto& p : corpus) CHECK(counter(p) == whitespace_token_count(p));
  const auto a = bucket_prompts(corpus, buckets);
  const auto b = bucket_prompts(corpus, buckets, counter);
  CHECK(a.buckets == b.buckets);
  CHECK(a.dropped == b.dropped);
}

TEST_CASE("prompts file round trip") {
  TempDir tmp;
  const std::vector<std::string> prompts{"a", "line\nbreak", "quote \""};
  write_prompts_file(prompts, tmp / "p.jsonl");
  CHECK(load_prompts(tmp / "p.jsonl", "jsonl") == prompts);
}
