#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "sfod/dataset_io.hpp"
#include "sfod/report.hpp"

namespace fs = std::filesystem;

namespace sfod {
namespace {

class ReportFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sfod_report_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  fs::path dir_;
};

EvalResult eval_of(double a, double b, double c) {
  EvalResult e;
  e.per_class_ap = {a, b, c};
  e.gt_count = {3, 4, 5};
  e.map = (a + b + c) / 3;
  return e;
}

AdaptTrace sample_trace() {
  AdaptTrace t;
  for (int k = 0; k < 3; ++k) {
    AdaptEvalRecord r;
    r.step = 10 * k;
    r.mean_losses.total = 1.5 - 0.25 * k;
    r.mean_losses.rpn_cls = 0.5;
    r.mean_num_pls = 2.25 * k;
    r.eval = eval_of(0.1 * k, 0.2 * k, 0.3 * k);
    t.evals.push_back(r);
  }
  return t;
}

TEST(EvalJson, RoundTrip) {
  const EvalResult e = eval_of(0.5, 0.25, 1.0);
  const EvalResult back = eval_from_json(nlohmann::json::parse(eval_to_json(e).dump()));
  EXPECT_EQ(back.per_class_ap, e.per_class_ap);
  EXPECT_EQ(back.gt_count, e.gt_count);
  EXPECT_DOUBLE_EQ(back.map, e.map);
}

using TraceCsv = ReportFiles;

TEST_F(TraceCsv, OneRowPerEvalRecord) {
  write_trace_csv(sample_trace(), dir_ / "trace.csv");
  std::istringstream lines(slurp(dir_ / "trace.csv"));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, kTraceHeader);
  std::getline(lines, line);
  EXPECT_EQ(line, "0,1.5,0.5,0,0,0,0,0,0,0,0");
  std::getline(lines, line);
  EXPECT_EQ(line, "10,1.25,0.5,0,0,0,2.25,0.2,0.1,0.2,0.3");

  const auto curve = read_trace_curve(dir_ / "trace.csv");
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[2].step, 20);
  EXPECT_NEAR(curve[2].map, 0.4, 1e-7);
}

TEST_F(TraceCsv, MalformedFilesAreRejected) {
  EXPECT_THROW(read_trace_curve(dir_ / "absent.csv"), DataError);
  std::ofstream(dir_ / "bad_header.csv") << "step,map\n1,0.5\n";
  EXPECT_THROW(read_trace_curve(dir_ / "bad_header.csv"), DataError);
  std::ofstream(dir_ / "short.csv") << kTraceHeader << "\n1,2,3\n";
  EXPECT_THROW(read_trace_curve(dir_ / "short.csv"), DataError);
  std::ofstream(dir_ / "nan.csv") << kTraceHeader << "\nx,0,0,0,0,0,0,0,0,0,0\n";
  EXPECT_THROW(read_trace_curve(dir_ / "nan.csv"), DataError);
}

TEST(RunReport, CarriesFinalBestAndConfig) {
  AdaptConfig config = strategy_preset("sf_ut");
  config.seed = 7;
  AdaptResult result;
  result.initial_eval = eval_of(0.1, 0.1, 0.1);
  result.final_eval = eval_of(0.6, 0.6, 0.6);
  result.best_eval = eval_of(0.7, 0.7, 0.7);
  result.best_step = 30;
  result.trace.steps.resize(40);
  result.labeling_steps = {1, 2};
  const auto j = make_run_report(config, result, "trace.csv", 1.5);
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["final"]["step"], 40);
  EXPECT_EQ(j["best"]["step"], 30);
  EXPECT_DOUBLE_EQ(j["best"]["map"].get<double>(), 0.7);
  EXPECT_EQ(j["config"]["strategy"], "sf_ut");
  EXPECT_EQ(j["labeler_calls"], 2);
  EXPECT_FALSE(j["diverged"].get<bool>());
  EXPECT_FALSE(j.contains("diverged_step"));
}

using ReportCsv = ReportFiles;

TEST_F(ReportCsv, OneRowPerRun) {
  AdaptResult result;
  result.final_eval = eval_of(0.5, 0.25, 0.75);
  result.best_eval = eval_of(0.9, 0.9, 0.9);
  result.best_step = 12;
  const auto a = make_run_report(strategy_preset("sf_ut"), result, "trace.csv", 0);
  const auto b = make_run_report(strategy_preset("sf_pl"), result, "trace.csv", 0);
  write_report_csv({a, b}, {"run_a", "run_b"}, dir_ / "t.csv");
  std::istringstream lines(slurp(dir_ / "t.csv"));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "run,strategy,seed,ap_class0,ap_class1,ap_class2,map,best_map,best_step");
  std::getline(lines, line);
  EXPECT_EQ(line, "run_a,sf_ut,0,0.5,0.25,0.75,0.5,0.9,12");
  std::getline(lines, line);
  EXPECT_EQ(line.substr(0, 12), "run_b,sf_pl,");
  EXPECT_THROW(write_report_csv({a}, {}, dir_ / "u.csv"), std::invalid_argument);
}

using CurvesSvg = ReportFiles;

TEST_F(CurvesSvg, OnePolylinePerCurveWithPointsInsideThePlot) {
  const std::vector<NamedCurve> curves{{"first", {{0, 0.0}, {50, 0.5}, {100, 1.0}}}, {"second", {{0, 0.2}, {100, 0.3}}}};
  write_curves_svg(curves, dir_ / "c.svg");
  const std::string svg = slurp(dir_ / "c.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);

  const std::regex poly("<polyline class=\"run\" data-run=\"([a-z]+)\"[^>]*points=\"([^\"]*)\"");
  std::vector<std::string> names;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it) {
    names.push_back((*it)[1]);
    std::istringstream pts((*it)[2].str());
    std::string pair;
    int count = 0;
    while (pts >> pair) {
      const auto comma = pair.find(',');
      const double x = std::stod(pair.substr(0, comma)), y = std::stod(pair.substr(comma + 1));
      EXPECT_GE(x, 0);
      EXPECT_LE(x, 720);
      EXPECT_GE(y, 0);
      EXPECT_LE(y, 420);
      ++count;
    }
    EXPECT_EQ(count, names.back() == "first" ? 3 : 2);
  }
  EXPECT_EQ(names, (std::vector<std::string>{"first", "second"}));
  // Higher mAP draws higher on the page.
  const std::regex first_pts("data-run=\"first\"[^>]*points=\"[^,]+,([^ ]+) [^,]+,([^ ]+) [^,]+,([^\"]+)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, first_pts));
  EXPECT_GT(std::stod(m[1]), std::stod(m[2]));
  EXPECT_GT(std::stod(m[2]), std::stod(m[3]));
}

}  // namespace
}  // namespace sfod
