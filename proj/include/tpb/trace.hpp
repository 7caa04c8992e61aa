#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "tpb/sampler.hpp"
#include "tpb/types.hpp"

namespace tpb {

inline constexpr std::string_view kTraceHeader = "ts_ns,source_id,watts";

/// Shortest decimal with at most 3 fractional digits ("100", "12.5").
std::string format_watts(double watts);

/// Streams samples into a trace CSV. Usable directly as a sampling sink.
class TraceWriter : public SampleSink {
 public:
  explicit TraceWriter(const std::filesystem::path& path);
  ~TraceWriter() override;

  void consume(const PowerSample& sample) override;
  void close();

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

/// Writes a complete trace. An empty stream still yields the header line.
void record_trace(std::span<const PowerSample> samples,
                  const std::filesystem::path& path);

/// Parses a trace file. Errors carry file:line.
std::vector<PowerSample> read_trace(const std::filesystem::path& path);

}  // namespace tpb
