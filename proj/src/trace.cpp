#include "tpb/trace.hpp"

#include <charconv>
#include <cmath>

#include "tpb/error.hpp"

namespace tpb {

std::string format_watts(double watts) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), watts, std::chars_format::fixed, 3);
  std::string text(buf, res.ptr);
  if (auto dot = text.find('.'); dot != std::string::npos) {
    while (text.back() == '0') text.pop_back();
    if (text.back() == '.') text.pop_back();
  }
  if (text == "-0") text = "0";
  return text;
}

namespace {

void write_line(std::ostream& out, const PowerSample& s) {
  out << s.ts_ns << ',' << s.source_id << ',' << format_watts(s.watts) << '\n';
}

[[noreturn]] void trace_error(const std::filesystem::path& path, std::size_t line,
                              const std::string& what) {
  throw Error(ErrorCode::ParseError,
              path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

TraceWriter::TraceWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorCode::IoError, "cannot write trace " + path.string());
  out_ << kTraceHeader << '\n';
}

TraceWriter::~TraceWriter() {
  if (out_.is_open()) out_.close();
}

void TraceWriter::consume(const PowerSample& sample) {
  if (sample.source_id.find_first_of(",\n\r") != std::string::npos) {
    throw Error(ErrorCode::BadParams, "source_id not representable in trace: " +
                                          sample.source_id);
  }
  std::lock_guard lock(mu_);
  write_line(out_, sample);
}

void TraceWriter::close() {
  std::lock_guard lock(mu_);
  out_.flush();
  if (!out_) throw Error(ErrorCode::IoError, "write failed: " + path_.string());
  out_.close();
}

void record_trace(std::span<const PowerSample> samples,
                  const std::filesystem::path& path) {
  TraceWriter writer(path);
  for (const auto& s : samples) writer.consume(s);
  writer.close();
}

std::vector<PowerSample> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open trace " + path.string());

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kTraceHeader) {
    trace_error(path, line_no, "expected header '" + std::string(kTraceHeader) + "'");
  }

  std::vector<PowerSample> samples;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto c1 = line.find(',');
    auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      trace_error(path, line_no, "expected 3 fields");
    }
    PowerSample s;
    const char* first = line.data();
    auto [p1, ec1] = std::from_chars(first, first + c1, s.ts_ns);
    if (ec1 != std::errc{} || p1 != first + c1) trace_error(path, line_no, "bad ts_ns");
    s.source_id = line.substr(c1 + 1, c2 - c1 - 1);
    if (s.source_id.empty()) trace_error(path, line_no, "empty source_id");
    const char* wfirst = first + c2 + 1;
    const char* wlast = first + line.size();
    auto [p2, ec2] = std::from_chars(wfirst, wlast, s.watts);
    if (ec2 != std::errc{} || p2 != wlast || !std::isfinite(s.watts) || s.watts < 0) {
      trace_error(path, line_no, "bad watts");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace tpb
