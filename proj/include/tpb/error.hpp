#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpb {

enum class ErrorCode {
  // sampler
  SensorUnavailable,
  PermissionDenied,
  BadParams,
  ReadFailed,
  FirstReadNoDelta,
  AllSourcesFailed,
  IoError,
  // phase ingest
  BindFailed,
  MalformedEvent,
  MissingRunBoundary,
  OrderViolation,
  MissingTokenCount,
  DuplicateEvent,
  // attribution / metrics
  UnorderedSamples,
  EmptyTimeline,
  IdentityViolation,
  MismatchedRun,
  NonPositiveDuration,
  NoGpuSources,
  NegativeRate,
  // orchestrator
  ConfigNotFound,
  ParseError,
  UnknownKey,
  MissingRequired,
  BadValue,
  EmptyDataset,
  OverlappingBuckets,
  MissingColumn,
  WorkloadSpawnFailed,
  Timeout,
  NoEventsReceived,
  // report
  SchemaMismatch,
  MissingArtifact,
  EmptyTable,
  // synth
  InfeasibleSpec,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Failure class used for process exit codes: 2 usage/config, 3 data
/// validation, 4 runtime.
int exit_code_for(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tpb
