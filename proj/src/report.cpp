#include "paid/report.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <sstream>

#include "paid/errors.hpp"

namespace paid {

std::string report_csv(const AdaptReport& report) {
  std::string out(kReportCsvHeader);
  out += '\n';
  for (const SegmentReport& s : report.segments) {
    const std::string error = s.error_rate ? fmt::format("{:.6f}", *s.error_rate) : std::string();
    out += fmt::format("{},{},{},{},{},{:.6f},{:.6e},{:.6e},{:.6e}\n", s.domain, s.severity,
                       s.round + 1, s.n_samples, error, s.mean_loss, s.geometry.delta_m,
                       s.geometry.delta_a, s.geometry.delta_s);
  }
  return out;
}

Json report_results(const AdaptReport& report) {
  Json segments = Json::array();
  for (const SegmentReport& s : report.segments) {
    Json layers = Json::array();
    for (const LayerGeometry& g : s.geometry.layers) {
      layers.push_back({{"layer", g.layer},
                        {"delta_m", g.delta_m},
                        {"delta_a", g.delta_a},
                        {"delta_s", g.delta_s},
                        {"gram_deviation", g.gram_deviation}});
    }
    segments.push_back({
        {"domain", s.domain},
        {"severity", s.severity},
        {"round", s.round + 1},
        {"n", s.n_samples},
        {"n_batches", s.n_batches},
        {"error", s.error_rate ? Json(*s.error_rate) : Json(nullptr)},
        {"mean_loss", s.mean_loss},
        {"sigma_skipped_batches", s.sigma_skipped_batches},
        {"geometry",
         {{"delta_m", s.geometry.delta_m},
          {"delta_a", s.geometry.delta_a},
          {"delta_s", s.geometry.delta_s},
          {"max_delta_s", s.geometry.max_delta_s},
          {"max_gram_deviation", s.geometry.max_gram_deviation},
          {"layers", layers}}},
    });
  }
  return {
      {"segments", segments},
      {"mean_error", report.mean_error ? Json(*report.mean_error) : Json(nullptr)},
      {"round_mean_errors", report.round_mean_errors},
      {"loss_trace", report.loss_trace},
  };
}

Json run_metadata(const AdaptReport& report) {
  const auto now = std::chrono::system_clock::now();
  return {{"timestamp", fmt::format("{:%Y-%m-%dT%H:%M:%S}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)))},
          {"wall_time_s", report.wall_time_s}};
}

Json report_json(const AdaptReport& report, const Json& config_echo) {
  return {{"config", config_echo}, {"results", report_results(report)}, {"metadata", run_metadata(report)}};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace paid
