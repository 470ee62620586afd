#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stela/error.hpp"

namespace stela {

// Outcome of one experiment run. Metric fields are deterministic for a given
// config+seed; wall-clock timings are inherently not, so they are serialized
// to a separate sidecar file and never into report.json/report.csv.
struct RunReport {
  std::map<std::string, std::string> config_echo;
  bool failed = false;
  std::string failure_reason;

  std::vector<std::string> class_names;
  std::vector<double> per_class_iou;  // NaN where undefined
  double miou = 0.0;

  std::uint64_t flops_correlation = 0;
  std::uint64_t flops_aggregation = 0;
  std::uint64_t peak_memory_bytes = 0;  // analytic estimate

  std::vector<double> warmup_losses;  // per-epoch, attention warmup stage

  std::vector<std::pair<std::string, double>> stage_seconds;  // sidecar only
};

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config_echo;
  j["failed"] = r.failed;
  if (r.failed) j["failure_reason"] = r.failure_reason;
  j["miou"] = r.miou;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
    const std::string name =
        c < r.class_names.size() ? r.class_names[c] : "class_" + std::to_string(c);
    if (std::isnan(r.per_class_iou[c]))
      per_class[name] = nullptr;
    else
      per_class[name] = r.per_class_iou[c];
  }
  j["per_class_iou"] = per_class;
  j["flops"] = {{"correlation", r.flops_correlation}, {"aggregation", r.flops_aggregation}};
  j["peak_memory_bytes"] = r.peak_memory_bytes;
  j["warmup_losses"] = r.warmup_losses;
  return j;
}

inline void write_report_json(const std::filesystem::path& path,
                              const std::vector<RunReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const RunReport& r : reports) j.push_back(report_to_json(r));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline void write_report_csv(const std::filesystem::path& path,
                             const std::vector<RunReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "seed,k,n_past,aligned,use_stela,failed,miou,per_class_iou,"
         "flops_correlation,flops_aggregation,peak_memory_bytes\n";
  for (const RunReport& r : reports) {
    auto echo = [&r](const std::string& key) {
      auto it = r.config_echo.find(key);
      return it == r.config_echo.end() ? std::string() : it->second;
    };
    out << echo("seed") << ',' << echo("k") << ',' << echo("n_past") << ',' << echo("aligned")
        << ',' << echo("use_stela") << ',' << (r.failed ? 1 : 0) << ',' << r.miou << ',';
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
      if (c) out << ';';
      if (!std::isnan(r.per_class_iou[c])) out << r.per_class_iou[c];
    }
    out << ',' << r.flops_correlation << ',' << r.flops_aggregation << ','
        << r.peak_memory_bytes << '\n';
  }
}

inline void write_timings_csv(const std::filesystem::path& path,
                              const std::vector<RunReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "run,stage,seconds\n";
  for (std::size_t i = 0; i < reports.size(); ++i)
    for (const auto& [stage, seconds] : reports[i].stage_seconds)
      out << i << ',' << stage << ',' << seconds << '\n';
}

// Machine-checkable shape of report.json entries.
inline nlohmann::ordered_json report_schema() {
  return nlohmann::ordered_json::parse(R"({
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stela run report",
    "type": "array",
    "items": {
      "type": "object",
      "required": ["config", "failed", "miou", "per_class_iou", "flops",
                   "peak_memory_bytes", "warmup_losses"],
      "properties": {
        "config": {"type": "object"},
        "failed": {"type": "boolean"},
        "failure_reason": {"type": "string"},
        "miou": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "per_class_iou": {"type": "object"},
        "flops": {
          "type": "object",
          "required": ["correlation", "aggregation"],
          "properties": {
            "correlation": {"type": "integer", "minimum": 0},
            "aggregation": {"type": "integer", "minimum": 0}
          }
        },
        "peak_memory_bytes": {"type": "integer", "minimum": 0},
        "warmup_losses": {"type": "array", "items": {"type": "number"}}
      }
    }
  })");
}

inline void write_report_schema(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << report_schema().dump(2) << '\n';
}

// Validates a parsed report.json against the constraints report_schema()
// declares. Throws DataError on the first violation.
inline void validate_report_json(const nlohmann::json& reports) {
  if (!reports.is_array()) throw DataError("report: top level must be an array");
  for (const auto& j : reports) {
    for (const char* field :
         {"config", "failed", "miou", "per_class_iou", "flops", "peak_memory_bytes",
          "warmup_losses"})
      if (!j.contains(field)) throw DataError(std::string("report: missing field ") + field);
    if (!j["config"].is_object()) throw DataError("report: config must be an object");
    if (!j["failed"].is_boolean()) throw DataError("report: failed must be a boolean");
    const double miou = j["miou"].get<double>();
    if (!(miou >= 0.0 && miou <= 1.0)) throw DataError("report: miou outside [0, 1]");
    for (const char* field : {"correlation", "aggregation"})
      if (!j["flops"].contains(field) || !j["flops"][field].is_number_unsigned())
        throw DataError("report: flops counters must be nonnegative integers");
    if (!j["peak_memory_bytes"].is_number_unsigned())
      throw DataError("report: peak_memory_bytes must be a nonnegative integer");
    if (!j["warmup_losses"].is_array()) throw DataError("report: warmup_losses must be an array");
  }
}

}  // namespace stela
