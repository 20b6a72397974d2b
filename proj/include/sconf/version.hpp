#pragma once

namespace sconf {

inline constexpr const char* kToolName = "sconf";
inline constexpr const char* kToolVersion = "0.1.0";

// Schema version stamped into every CSV/JSON output.
inline constexpr int kReportFormatVersion = 1;

}  // namespace sconf
