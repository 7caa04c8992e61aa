#include "tpb/error.hpp"

namespace tpb {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::SensorUnavailable: return "SensorUnavailable";
    case ErrorCode::PermissionDenied: return "PermissionDenied";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::ReadFailed: return "ReadFailed";
    case ErrorCode::FirstReadNoDelta: return "FirstReadNoDelta";
    case ErrorCode::AllSourcesFailed: return "AllSourcesFailed";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BindFailed: return "BindFailed";
    case ErrorCode::MalformedEvent: return "MalformedEvent";
    case ErrorCode::MissingRunBoundary: return "MissingRunBoundary";
    case ErrorCode::OrderViolation: return "OrderViolation";
    case ErrorCode::MissingTokenCount: return "MissingTokenCount";
    case ErrorCode::DuplicateEvent: return "DuplicateEvent";
    case ErrorCode::UnorderedSamples: return "UnorderedSamples";
    case ErrorCode::EmptyTimeline: return "EmptyTimeline";
    case ErrorCode::IdentityViolation: return "IdentityViolation";
    case ErrorCode::MismatchedRun: return "MismatchedRun";
    case ErrorCode::NonPositiveDuration: return "NonPositiveDuration";
    case ErrorCode::NoGpuSources: return "NoGpuSources";
    case ErrorCode::NegativeRate: return "NegativeRate";
    case ErrorCode::ConfigNotFound: return "ConfigNotFound";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::MissingRequired: return "MissingRequired";
    case ErrorCode::BadValue: return "BadValue";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::OverlappingBuckets: return "OverlappingBuckets";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::WorkloadSpawnFailed: return "WorkloadSpawnFailed";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::NoEventsReceived: return "NoEventsReceived";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::EmptyTable: return "EmptyTable";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ConfigNotFound:
    case ErrorCode::ParseError:
    case ErrorCode::UnknownKey:
    case ErrorCode::MissingRequired:
    case ErrorCode::BadValue:
    case ErrorCode::BadParams:
    case ErrorCode::NegativeRate:
    case ErrorCode::OverlappingBuckets:
    case ErrorCode::InfeasibleSpec:
      return 2;
    case ErrorCode::MalformedEvent:
    case ErrorCode::MissingRunBoundary:
    case ErrorCode::OrderViolation:
    case ErrorCode::MissingTokenCount:
    case ErrorCode::DuplicateEvent:
    case ErrorCode::UnorderedSamples:
    case ErrorCode::EmptyTimeline:
    case ErrorCode::MismatchedRun:
    case ErrorCode::NonPositiveDuration:
    case ErrorCode::NoGpuSources:
    case ErrorCode::EmptyDataset:
    case ErrorCode::MissingColumn:
    case ErrorCode::SchemaMismatch:
    case ErrorCode::MissingArtifact:
    case ErrorCode::EmptyTable:
    case ErrorCode::NoEventsReceived:
      return 3;
    default:
      return 4;
  }
}

}  // namespace tpb
