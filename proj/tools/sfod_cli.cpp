// sfod: dataset generation, source training, source-free adaptation,
// evaluation and reporting.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sfod/adapt.hpp"
#include "sfod/checkpoint.hpp"
#include "sfod/config.hpp"
#include "sfod/dataset_io.hpp"
#include "sfod/report.hpp"
#include "sfod/training.hpp"

namespace fs = std::filesystem;
using namespace sfod;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kDiverged = 4 };

struct Failure {
  ExitCode code;
  std::string message;
};

[[noreturn]] void fail(ExitCode code, const std::string& message) { throw Failure{code, message}; }

// A benchmark root holds split directories; a split directory holds a manifest.
fs::path split_dir(const fs::path& data, const std::string& split) {
  if (fs::exists(data / split / "manifest.json")) return data / split;
  if (fs::exists(data / "manifest.json")) return data;
  fail(kData, "no split '" + split + "' under '" + data.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

// --- make-data --------------------------------------------------------------

struct MakeDataArgs {
  std::string spec, out;
  std::uint64_t seed = 0;
};

int run_make_data(const MakeDataArgs& a) {
  const BenchmarkSpec spec = a.spec.empty() ? BenchmarkSpec::defaults() : benchmark_from_config(Config::load(a.spec));
  make_benchmark(spec, a.seed, a.out);
  write_text(fs::path(a.out) / "benchmark.cfg", benchmark_to_config(spec).dump());
  std::cout << "wrote " << spec.source_train << "/" << spec.source_test << "/" << spec.target_train << "/"
            << spec.target_test << " scenes (source train/test, target train/test) to " << a.out << "\n";
  return kOk;
}

// --- train-source -----------------------------------------------------------

struct TrainArgs {
  std::string data, out;
  SourceTrainConfig config;
};

int run_train_source(const TrainArgs& a) {
  const auto scenes = read_dataset(split_dir(a.data, kSourceTrain));
  const ArchDescriptor arch;
  const fs::path loss_path = fs::path(a.out).concat(".losses.csv");
  std::ofstream losses(loss_path);
  if (!losses) throw DataError("cannot write '" + loss_path.string() + "'");
  losses << "step,total_loss,rpn_cls,rpn_reg,roi_cls,roi_reg\n";
  const auto log = [&](int step, const LossBreakdown& l) {
    losses << step + 1 << "," << l.total << "," << l.rpn_cls << "," << l.rpn_reg << "," << l.roi_cls << "," << l.roi_reg
           << "\n";
    if ((step + 1) % 250 == 0) std::cerr << "step " << step + 1 << " loss " << l.total << "\n";
  };
  SourceTrainResult result;
  try {
    result = train_source(scenes, arch, a.config, log);
  } catch (const NumericalError& e) {
    fail(kDiverged, e.what());
  }
  Checkpoint ckpt{result.model,
                  {{"kind", "source"},
                   {"step", a.config.steps},
                   {"seed", a.config.seed},
                   {"lr", a.config.lr},
                   {"batch_size", a.config.batch_size},
                   {"config_hash", config_hash(std::to_string(a.config.steps) + "/" + std::to_string(a.config.lr) + "/" +
                                               std::to_string(a.config.seed))}}};
  save_checkpoint(ckpt, a.out);
  std::cout << "saved " << a.out << " after " << a.config.steps << " steps\n";
  return kOk;
}

// --- adapt ------------------------------------------------------------------

struct AdaptArgs {
  std::string source_ckpt, data, strategy = "sf_ut", out, config_file;
  std::optional<float> alpha, tau, lr;
  std::optional<int> steps, eval_period, batch_size;
  std::optional<std::string> teacher_bn;
  bool mosaic = false, no_reg = false;
  std::optional<std::uint64_t> seed;
};

AdaptConfig resolve_adapt_config(const AdaptArgs& a) {
  AdaptConfig c;
  try {
    c = strategy_preset(a.strategy);
  } catch (const std::out_of_range& e) {
    fail(kUsage, e.what());
  }
  if (!a.config_file.empty()) {
    const Config file = Config::load(a.config_file);
    const std::vector<std::string> known{"alpha", "tau", "lr", "momentum", "steps", "eval_period", "batch_size",
                                         "seed", "mosaic", "include_reg", "weak_strong", "fixed_pls", "adabn_first",
                                         "teacher_bn", "score_floor", "nms_iou", "strong.jitter_prob",
                                         "strong.grayscale_prob", "strong.blur_prob", "strong.cutout_prob"};
    if (const auto unknown = file.unknown_keys(known); !unknown.empty()) {
      throw ConfigError("unknown adaptation config key '" + unknown.front() + "'");
    }
    c.alpha = static_cast<float>(file.get_double("alpha", c.alpha));
    c.tau = static_cast<float>(file.get_double("tau", c.tau));
    c.lr = static_cast<float>(file.get_double("lr", c.lr));
    c.momentum = static_cast<float>(file.get_double("momentum", c.momentum));
    c.max_steps = static_cast<int>(file.get_int("steps", c.max_steps));
    c.eval_period = static_cast<int>(file.get_int("eval_period", c.eval_period));
    c.batch_size = static_cast<int>(file.get_int("batch_size", c.batch_size));
    c.seed = static_cast<std::uint64_t>(file.get_int("seed", static_cast<long long>(c.seed)));
    c.mosaic = file.get_bool("mosaic", c.mosaic);
    c.include_reg = file.get_bool("include_reg", c.include_reg);
    c.weak_strong = file.get_bool("weak_strong", c.weak_strong);
    c.fixed_pls = file.get_bool("fixed_pls", c.fixed_pls);
    c.adabn_first = file.get_bool("adabn_first", c.adabn_first);
    const std::string bn = file.get_string("teacher_bn", c.teacher_bn == BNMode::Eval ? "eval" : "train");
    if (bn != "eval" && bn != "train") throw ConfigError("teacher_bn must be 'eval' or 'train'");
    c.teacher_bn = bn == "eval" ? BNMode::Eval : BNMode::Train;
    c.inference.score_floor = static_cast<float>(file.get_double("score_floor", c.inference.score_floor));
    c.inference.nms_iou = static_cast<float>(file.get_double("nms_iou", c.inference.nms_iou));
    c.strong.jitter_prob = static_cast<float>(file.get_double("strong.jitter_prob", c.strong.jitter_prob));
    c.strong.grayscale_prob = static_cast<float>(file.get_double("strong.grayscale_prob", c.strong.grayscale_prob));
    c.strong.blur_prob = static_cast<float>(file.get_double("strong.blur_prob", c.strong.blur_prob));
    c.strong.cutout_prob = static_cast<float>(file.get_double("strong.cutout_prob", c.strong.cutout_prob));
  }
  if (a.alpha) c.alpha = *a.alpha;
  if (a.tau) c.tau = *a.tau;
  if (a.lr) c.lr = *a.lr;
  if (a.steps) c.max_steps = *a.steps;
  if (a.eval_period) c.eval_period = *a.eval_period;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.seed) c.seed = *a.seed;
  if (a.mosaic) c.mosaic = true;
  if (a.no_reg) c.include_reg = false;
  if (a.teacher_bn) c.teacher_bn = *a.teacher_bn == "train" ? BNMode::Train : BNMode::Eval;
  if (c.strategy == "adabn" && c.max_steps != 0) fail(kUsage, "the adabn strategy takes no training steps");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    fail(kUsage, e.what());
  }
  return c;
}

int run_adapt(const AdaptArgs& a) {
  const AdaptConfig config = resolve_adapt_config(a);
  const Checkpoint source = load_checkpoint(a.source_ckpt);
  const auto target_train = read_dataset(split_dir(a.data, kTargetTrain));
  const auto target_test = read_dataset(split_dir(a.data, kTargetTest));

  const fs::path out(a.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create '" + out.string() + "': " + ec.message());

  AdaptHooks hooks;
  hooks.on_eval = [](const AdaptEvalRecord& r) {
    std::cerr << "step " << r.step << " loss " << r.mean_losses.total << " pls/batch " << r.mean_num_pls << " mAP "
              << r.eval.map << "\n";
  };
  const auto start = std::chrono::steady_clock::now();
  const AdaptResult result = adapt(source.model, target_train, target_test, config, hooks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const nlohmann::json meta{{"kind", "adapted"},
                            {"strategy", config.strategy},
                            {"seed", config.seed},
                            {"source_checkpoint", a.source_ckpt},
                            {"config_hash", config_hash(adapt_config_to_json(config).dump())}};
  auto final_meta = meta, best_meta = meta;
  final_meta["step"] = result.trace.steps.size();
  best_meta["step"] = result.best_step;
  save_checkpoint({result.final_model, final_meta}, out / "final.ckpt");
  save_checkpoint({result.best_model, best_meta}, out / "best.ckpt");
  write_trace_csv(result.trace, out / "trace.csv");
  const auto report = make_run_report(config, result, "trace.csv", seconds);
  write_text(out / "report.json", report.dump(2) + "\n");

  std::cout << "strategy " << config.strategy << " alpha " << config.alpha << " tau " << config.tau << " include_reg "
            << (config.include_reg ? "true" : "false") << "\n";
  std::cout << "initial mAP " << result.initial_eval.map << "  final mAP " << result.final_eval.map << "  best mAP "
            << result.best_eval.map << " (step " << result.best_step << ")\n";
  if (result.diverged) {
    fail(kDiverged, "non-finite loss at step " + std::to_string(result.diverged_step) + ": " + result.divergence_message);
  }
  return kOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, split = kTargetTest;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const auto scenes = read_dataset(split_dir(a.data, a.split));
  const EvalResult r = evaluate_model(ckpt.model, scenes);
  if (a.json) {
    std::cout << eval_to_json(r).dump() << "\n";
    return kOk;
  }
  for (std::size_t k = 0; k < r.per_class_ap.size(); ++k) {
    std::printf("ap_class%zu %.6f (%d objects)\n", k, r.per_class_ap[k], r.gt_count[k]);
  }
  std::printf("map %.6f\n", r.map);
  return kOk;
}

// --- report -----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<nlohmann::json> reports;
  std::vector<std::string> names;
  std::vector<NamedCurve> curves;
  for (const auto& dir : a.runs) {
    const fs::path report_path = fs::path(dir) / "report.json";
    std::ifstream in(report_path);
    if (!in) fail(kData, "missing run report '" + report_path.string() + "'");
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(kData, "corrupt run report '" + report_path.string() + "': " + e.what());
    }
    std::string name = fs::path(dir).filename().string();
    if (name.empty()) name = fs::path(dir).parent_path().filename().string();
    names.push_back(name);
    curves.push_back({name, read_trace_curve(fs::path(dir) / r.value("trace_csv", std::string("trace.csv")))});
    reports.push_back(std::move(r));
  }
  const std::string ext = fs::path(a.out).extension().string();
  if (ext == ".csv") {
    write_report_csv(reports, names, a.out);
  } else if (ext == ".svg") {
    write_curves_svg(curves, a.out);
  } else {
    fail(kUsage, "--out must end in .csv or .svg");
  }
  std::cout << "wrote " << a.out << " (" << reports.size() << " runs)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free object detection adaptation lab"};
  app.require_subcommand(1);

  MakeDataArgs make_args;
  auto* make = app.add_subcommand("make-data", "Generate the synthetic source/target benchmark");
  make->add_option("--spec", make_args.spec, "Benchmark config file (key = value)")->check(CLI::ExistingFile);
  make->add_option("--out", make_args.out, "Output directory")->required();
  make->add_option("--seed", make_args.seed, "Generation seed");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train-source", "Supervised training on the labeled source split");
  train->add_option("--data", train_args.data, "Benchmark root or split directory")->required();
  train->add_option("--out", train_args.out, "Checkpoint path")->required();
  train->add_option("--steps", train_args.config.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", train_args.config.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", train_args.config.batch_size, "Images per step")->check(CLI::PositiveNumber);
  train->add_option("--momentum", train_args.config.momentum, "SGD momentum");
  train->add_option("--seed", train_args.config.seed, "Initialization and sampling seed");

  AdaptArgs adapt_args;
  auto* adapt_cmd = app.add_subcommand("adapt", "Source-free adaptation of a source checkpoint");
  adapt_cmd->add_option("--source-ckpt", adapt_args.source_ckpt, "Source checkpoint")->required();
  adapt_cmd->add_option("--data", adapt_args.data, "Benchmark root")->required();
  adapt_cmd->add_option("--strategy", adapt_args.strategy, "Strategy preset");
  adapt_cmd->add_option("--out", adapt_args.out, "Run output directory")->required();
  adapt_cmd->add_option("--config", adapt_args.config_file, "Adaptation config file")->check(CLI::ExistingFile);
  adapt_cmd->add_option("--alpha", adapt_args.alpha, "Teacher EMA rate");
  adapt_cmd->add_option("--tau", adapt_args.tau, "Pseudo-label confidence threshold");
  adapt_cmd->add_option("--lr", adapt_args.lr, "Learning rate");
  adapt_cmd->add_option("--steps", adapt_args.steps, "Optimizer steps");
  adapt_cmd->add_option("--eval-period", adapt_args.eval_period, "Steps between target-test evaluations");
  adapt_cmd->add_option("--batch-size", adapt_args.batch_size, "Images per step");
  adapt_cmd->add_option("--teacher-bn", adapt_args.teacher_bn, "Teacher BN mode when labeling")
      ->check(CLI::IsMember({"eval", "train"}));
  adapt_cmd->add_flag("--mosaic", adapt_args.mosaic, "Train on 2x2 mosaics");
  adapt_cmd->add_flag("--no-reg", adapt_args.no_reg, "Drop the box-regression losses");
  adapt_cmd->add_option("--seed", adapt_args.seed, "Sampling and augmentation seed");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "AP50 of a checkpoint on one split");
  eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required();
  eval->add_option("--data", eval_args.data, "Benchmark root or split directory")->required();
  eval->add_option("--split", eval_args.split, "Split name");
  eval->add_flag("--json", eval_args.json, "Print JSON");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Merge adaptation runs into a CSV table or SVG plot");
  report->add_option("--runs", report_args.runs, "Run directories")->required();
  report->add_option("--out", report_args.out, "Output .csv or .svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERR_USAGE: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*make) return run_make_data(make_args);
    if (*train) return run_train_source(train_args);
    if (*adapt_cmd) return run_adapt(adapt_args);
    if (*eval) return run_eval(eval_args);
    if (*report) return run_report(report_args);
  } catch (const Failure& f) {
    static const char* kPrefix[] = {"OK", "ERR_INTERNAL", "ERR_USAGE", "ERR_DATA", "ERR_DIVERGED"};
    std::cerr << kPrefix[f.code] << ": " << f.message << "\n";
    return f.code;
  } catch (const ConfigError& e) {
    std::cerr << "ERR_USAGE: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "ERR_DATA: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "ERR_DATA: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "ERR_DIVERGED: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "ERR_INTERNAL: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
