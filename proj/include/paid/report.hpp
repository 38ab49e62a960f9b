#pragma once

// Report formats.
//
// CSV, one row per domain segment, fixed columns:
//
//   domain,severity,round,n,error,mean_loss,delta_m,delta_a,delta_s
//
// round is 1-based; error is empty for unlabeled streams; the geometry
// columns are the segment-end means over injected layers against the
// pre-trained weights.
//
// JSON: {"config": <echo>, "results": {...}, "metadata": {...}}. Only
// "metadata" holds run-dependent values (timestamps, wall time).

#include <filesystem>
#include <string>
#include <string_view>

#include "paid/adapt.hpp"
#include "paid/experiment.hpp"

namespace paid {

inline constexpr std::string_view kReportCsvHeader =
    "domain,severity,round,n,error,mean_loss,delta_m,delta_a,delta_s";

std::string report_csv(const AdaptReport& report);
Json report_results(const AdaptReport& report);
Json run_metadata(const AdaptReport& report);
Json report_json(const AdaptReport& report, const Json& config_echo);

// Creates parent directories. Throws IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace paid
