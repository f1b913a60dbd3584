#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfod/adapt.hpp"
#include "sfod/metrics.hpp"

namespace sfod {

inline constexpr const char* kTraceHeader =
    "step,total_loss,rpn_cls,rpn_reg,roi_cls,roi_reg,num_pls,map,ap_class0,ap_class1,ap_class2";

nlohmann::json eval_to_json(const EvalResult& e);
EvalResult eval_from_json(const nlohmann::json& j);

/// One row per evaluation record; loss columns are window means.
void write_trace_csv(const AdaptTrace& trace, const std::filesystem::path& path);

struct TracePoint {
  int step = 0;
  double map = 0;
};
std::vector<TracePoint> read_trace_curve(const std::filesystem::path& path);

/// Run summary written next to the checkpoints of one adaptation run.
nlohmann::json make_run_report(const AdaptConfig& config, const AdaptResult& result, const std::string& trace_csv,
                               double wall_seconds);

struct NamedCurve {
  std::string name;
  std::vector<TracePoint> points;
};

/// Comparison table: one row per report with per-class AP50 and mAP of the
/// final model, plus the best-by-trace mAP and its step.
void write_report_csv(const std::vector<nlohmann::json>& reports, const std::vector<std::string>& names,
                      const std::filesystem::path& path);

/// mAP-versus-step line plot, one polyline per curve.
void write_curves_svg(const std::vector<NamedCurve>& curves, const std::filesystem::path& path);

}  // namespace sfod
