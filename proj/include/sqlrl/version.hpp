#pragma once

namespace sqlrl {

inline constexpr const char* kHarnessVersion = "0.1.0";

// Artifact schema versions, bumped independently of the harness.
inline constexpr int kTrajectorySchemaVersion = 1;
inline constexpr int kRlBatchSchemaVersion = 1;
inline constexpr int kSftSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr int kCassetteSchemaVersion = 1;

}  // namespace sqlrl
