#include "sfod/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sfod/dataset_io.hpp"

namespace sfod {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(8);
  os << v;
  return os.str();
}

double ap_or_zero(const EvalResult& e, std::size_t k) { return k < e.per_class_ap.size() ? e.per_class_ap[k] : 0.0; }

}  // namespace

nlohmann::json eval_to_json(const EvalResult& e) {
  return {{"per_class_ap", e.per_class_ap}, {"gt_count", e.gt_count}, {"map", e.map}};
}

EvalResult eval_from_json(const nlohmann::json& j) {
  EvalResult e;
  e.per_class_ap = j.at("per_class_ap").get<std::vector<double>>();
  e.gt_count = j.value("gt_count", std::vector<int>{});
  e.map = j.at("map").get<double>();
  return e;
}

void write_trace_csv(const AdaptTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trace '" + path.string() + "'");
  out << kTraceHeader << "\n";
  for (const auto& r : trace.evals) {
    const auto& l = r.mean_losses;
    out << r.step << "," << num(l.total) << "," << num(l.rpn_cls) << "," << num(l.rpn_reg) << "," << num(l.roi_cls) << ","
        << num(l.roi_reg) << "," << num(r.mean_num_pls) << "," << num(r.eval.map) << "," << num(ap_or_zero(r.eval, 0))
        << "," << num(ap_or_zero(r.eval, 1)) << "," << num(ap_or_zero(r.eval, 2)) << "\n";
  }
}

std::vector<TracePoint> read_trace_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing trace '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw DataError("trace '" + path.string() + "' has an unexpected header");
  std::vector<TracePoint> points;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 11) throw DataError("trace '" + path.string() + "' line " + std::to_string(n) + ": expected 11 columns");
    try {
      points.push_back({std::stoi(cells[0]), std::stod(cells[7])});
    } catch (const std::exception&) {
      throw DataError("trace '" + path.string() + "' line " + std::to_string(n) + ": not a number");
    }
  }
  return points;
}

nlohmann::json make_run_report(const AdaptConfig& config, const AdaptResult& result, const std::string& trace_csv,
                               double wall_seconds) {
  nlohmann::json j;
  j["config"] = adapt_config_to_json(config);
  j["seed"] = config.seed;
  j["initial"] = eval_to_json(result.initial_eval);
  j["final"] = eval_to_json(result.final_eval);
  j["final"]["step"] = result.trace.steps.size();
  j["best"] = eval_to_json(result.best_eval);
  j["best"]["step"] = result.best_step;
  j["trace_csv"] = trace_csv;
  j["wall_clock_seconds"] = wall_seconds;
  j["diverged"] = result.diverged;
  if (result.diverged) {
    j["diverged_step"] = result.diverged_step;
    j["divergence_message"] = result.divergence_message;
  }
  j["labeler_calls"] = result.labeling_steps.size();
  return j;
}

void write_report_csv(const std::vector<nlohmann::json>& reports, const std::vector<std::string>& names,
                      const std::filesystem::path& path) {
  if (reports.size() != names.size()) throw std::invalid_argument("write_report_csv: names and reports differ in length");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report '" + path.string() + "'");
  out << "run,strategy,seed,ap_class0,ap_class1,ap_class2,map,best_map,best_step\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const EvalResult fin = eval_from_json(r.at("final"));
    out << names[i] << "," << r.at("config").value("strategy", std::string("?")) << "," << r.value("seed", 0ULL) << ","
        << num(ap_or_zero(fin, 0)) << "," << num(ap_or_zero(fin, 1)) << "," << num(ap_or_zero(fin, 2)) << ","
        << num(fin.map) << "," << num(r.at("best").at("map").get<double>()) << "," << r.at("best").value("step", 0)
        << "\n";
  }
}

void write_curves_svg(const std::vector<NamedCurve>& curves, const std::filesystem::path& path) {
  constexpr double kW = 720, kH = 420, kLeft = 60, kRight = 170, kTop = 20, kBottom = 50;
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  int max_step = 1;
  for (const auto& c : curves) {
    for (const auto& p : c.points) max_step = std::max(max_step, p.step);
  }
  const auto sx = [&](double step) { return kLeft + plot_w * step / max_step; };
  const auto sy = [&](double map) { return kTop + plot_h * (1.0 - std::clamp(map, 0.0, 1.0)); };
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000", "#aec7e8"};

  std::ofstream out(path);
  if (!out) throw DataError("cannot write plot '" + path.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<g class=\"axes\" stroke=\"black\">\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\"" << kTop + plot_h << "\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h << "\"/>\n";
  out << "</g>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(sy(v) + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    const double s = max_step * t / 5.0;
    out << "<text x=\"" << num(sx(s)) << "\" y=\"" << kTop + plot_h + 16 << "\" text-anchor=\"middle\">"
        << static_cast<long>(std::lround(s)) << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">step</text>\n";
  out << "<text x=\"15\" y=\"" << kTop + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
      << kTop + plot_h / 2 << ")\">mAP (AP50)</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kColors[i % (sizeof kColors / sizeof *kColors)];
    out << "<polyline class=\"run\" data-run=\"" << curves[i].name << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < curves[i].points.size(); ++k) {
      if (k) out << " ";
      out << num(sx(curves[i].points[k].step)) << "," << num(sy(curves[i].points[k].map));
    }
    out << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(i) + 8;
    out << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kW - kRight + 35 << "\" y=\"" << ly + 4 << "\">" << curves[i].name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace sfod
