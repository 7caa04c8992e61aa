#include "tpb/events.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "tpb/error.hpp"

namespace tpb {

using nlohmann::ordered_json;

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::RunStart: return "RunStart";
    case EventKind::RunEnd: return "RunEnd";
    case EventKind::PrefillStart: return "PrefillStart";
    case EventKind::PrefillEnd: return "PrefillEnd";
    case EventKind::DecodeStart: return "DecodeStart";
    case EventKind::DecodeEnd: return "DecodeEnd";
    case EventKind::RequestComplete: return "RequestComplete";
  }
  return "RunStart";
}

std::optional<EventKind> parse_event_kind(std::string_view text) noexcept {
  for (EventKind k : {EventKind::RunStart, EventKind::RunEnd, EventKind::PrefillStart,
                      EventKind::PrefillEnd, EventKind::DecodeStart, EventKind::DecodeEnd,
                      EventKind::RequestComplete}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedEvent, what);
}

std::optional<std::uint64_t> optional_count(const ordered_json& j, const char* key,
                                            std::uint64_t min) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) malformed(std::string(key) + " must be an integer");
  if (it->is_number_unsigned()) {
    auto v = it->get<std::uint64_t>();
    if (v < min) malformed(std::string(key) + " out of range");
    return v;
  }
  auto v = it->get<std::int64_t>();
  if (v < static_cast<std::int64_t>(min)) malformed(std::string(key) + " out of range");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

PhaseEvent parse_event_line(std::string_view line) {
  if (line.size() > kMaxEventLineBytes) malformed("line exceeds 64 KiB");
  ordered_json j = ordered_json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) malformed("not a JSON object");

  PhaseEvent e;
  auto ts = j.find("ts_ns");
  if (ts == j.end() || !ts->is_number_integer()) malformed("ts_ns missing or not an integer");
  e.ts_ns = ts->get<std::int64_t>();

  auto run = j.find("run_id");
  if (run == j.end() || !run->is_string()) malformed("run_id missing");
  e.run_id = run->get<std::string>();

  auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) malformed("kind missing");
  auto k = parse_event_kind(kind->get<std::string>());
  if (!k) malformed("unknown kind '" + kind->get<std::string>() + "'");
  e.kind = *k;

  if (!is_run_event(e.kind)) {
    auto req = j.find("request_id");
    if (req == j.end() || !req->is_string() || req->get<std::string>().empty()) {
      malformed("request_id missing");
    }
    e.request_id = req->get<std::string>();
  }
  e.prompt_tokens = optional_count(j, "prompt_tokens", 1);
  e.generated_tokens = optional_count(j, "generated_tokens", 0);

  if (e.kind == EventKind::RunStart) {
    if (auto it = j.find("phase_source"); it != j.end() && it->is_string()) {
      e.phase_source = it->get<std::string>();
    }
    if (auto it = j.find("started_at"); it != j.end() && it->is_string()) {
      e.started_at = it->get<std::string>();
    }
  }
  if (e.kind == EventKind::RunEnd) {
    if (auto it = j.find("truncated"); it != j.end() && it->is_boolean()) {
      e.truncated = it->get<bool>();
    }
  }
  return e;
}

std::string format_event_line(const PhaseEvent& e) {
  ordered_json j;
  j["ts_ns"] = e.ts_ns;
  j["run_id"] = e.run_id;
  j["kind"] = std::string(to_string(e.kind));
  if (!is_run_event(e.kind)) j["request_id"] = e.request_id;
  if (e.prompt_tokens) j["prompt_tokens"] = *e.prompt_tokens;
  if (e.generated_tokens) j["generated_tokens"] = *e.generated_tokens;
  if (e.phase_source) j["phase_source"] = *e.phase_source;
  if (e.started_at) j["started_at"] = *e.started_at;
  if (e.truncated) j["truncated"] = true;
  return j.dump();
}

void write_events(std::span<const PhaseEvent> events, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& e : events) out << format_event_line(e) << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<PhaseEvent> read_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<PhaseEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      events.push_back(parse_event_line(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return events;
}

void sort_events(std::vector<PhaseEvent>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const PhaseEvent& a, const PhaseEvent& b) { return a.ts_ns < b.ts_ns; });
}

}  // namespace tpb
