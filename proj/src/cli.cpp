#include "driftguard/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "driftguard/error.hpp"
#include "driftguard/features.hpp"
#include "driftguard/kernels.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/monitor.hpp"
#include "driftguard/scorer.hpp"
#include "driftguard/synth.hpp"

namespace driftguard {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kUserError = 2;
constexpr int kNumericalError = 3;

std::vector<std::size_t> parse_k_grid(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw ParameterError("--k-grid expects A..B, got '" + text + "'");
  auto number = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (s.empty() || pos != s.size() || s.front() == '-') {
      throw ParameterError("--k-grid expects positive integers A..B, got '" + text + "'");
    }
    return static_cast<std::size_t>(v);
  };
  const std::size_t a = number(text.substr(0, dots));
  const std::size_t b = number(text.substr(dots + 2));
  if (a < 1 || b < a) throw ParameterError("--k-grid needs 1 <= A <= B, got '" + text + "'");
  std::vector<std::size_t> grid;
  for (std::size_t k = a; k <= b; ++k) grid.push_back(k);
  return grid;
}

FeatureFormat parse_format(const std::string& s) {
  if (s == "vfmf") return FeatureFormat::Vfmf;
  if (s == "csv") return FeatureFormat::Csv;
  throw ParameterError("unknown format '" + s + "' (expected vfmf or csv)");
}

FeatureMatrix load(const std::string& path, const std::string& format) {
  return read_features(path, parse_format(format)).first;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

// Writes to `path` when given, otherwise to the report stream.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::string scores_csv(const ScoreSet& s, const std::vector<SampleLabel>* labels = nullptr) {
  std::string text = labels ? "index,score,label\n" : "index,score\n";
  char buf[64];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g", i, s.scores[i]);
    text += buf;
    if (labels) text += (*labels)[i] == SampleLabel::Id ? ",id" : ",ood";
    text += '\n';
  }
  return text;
}

std::string model_reference(const fs::path& model, const fs::path& monitor_file) {
  const fs::path base = fs::absolute(monitor_file).parent_path();
  const fs::path rel = fs::proximate(fs::absolute(model), base);
  return rel.generic_string();
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json error_json(const std::string& kind, const std::string& message, int code) {
  return {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature-space out-of-distribution monitor"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  const std::vector<std::string> formats = {"vfmf", "csv"};

  // fit
  std::string fit_method, fit_features, fit_out, fit_norm, fit_kgrid = "1..10", fit_grid,
              fit_format = "vfmf", fit_report, fit_selection = "mean-score";
  std::uint64_t fit_seed = 0;
  auto* fit = app.add_subcommand("fit", "Fit a scorer on monitor features");
  fit->add_option("--method", fit_method, "aps, mfs, ocsvm, gmm or nf")
      ->required()
      ->check(CLI::IsMember({"aps", "mfs", "ocsvm", "gmm", "nf"}));
  fit->add_option("--features", fit_features, "Monitor feature file")->required();
  fit->add_option("--out", fit_out, "Model file to write")->required();
  fit->add_option("--seed", fit_seed, "Random seed");
  fit->add_option("--normalize", fit_norm, "Feature normalisation (default: l2 for gmm/nf)")
      ->check(CLI::IsMember({"none", "l2"}));
  fit->add_option("--k-grid", fit_kgrid, "GMM component range A..B");
  fit->add_option("--grid", fit_grid, "Hyperparameter grid (default: full for ocsvm, minimal for nf)")
      ->check(CLI::IsMember({"full", "minimal"}));
  fit->add_option("--format", fit_format, "Input format")->check(CLI::IsMember(formats));
  fit->add_option("--selection", fit_selection, "OC-SVM grid selection: mean-score or held-out")
      ->check(CLI::IsMember({"mean-score", "held-out"}));
  fit->add_option("--report", fit_report, "Write the fit report here instead of stdout");

  // score
  std::string sc_model, sc_features, sc_out, sc_format = "vfmf";
  auto* score = app.add_subcommand("score", "Score features with a fitted model");
  score->add_option("--model", sc_model, "Model file")->required();
  score->add_option("--features", sc_features, "Feature file")->required();
  score->add_option("--out", sc_out, "CSV output (default stdout)");
  score->add_option("--format", sc_format, "Input format")->check(CLI::IsMember(formats));

  // eval
  std::string ev_model, ev_id, ev_ood, ev_out, ev_curve, ev_format = "vfmf";
  auto* eval = app.add_subcommand("eval", "AUROC, AUPR and FPR95 on labelled ID/OOD files");
  eval->add_option("--model", ev_model, "Model file")->required();
  eval->add_option("--id", ev_id, "ID feature file")->required();
  eval->add_option("--ood", ev_ood, "OOD feature file")->required();
  eval->add_option("--out", ev_out, "Report output (default stdout)");
  eval->add_option("--curve", ev_curve, "Also write ROC/PR curve points as CSV");
  eval->add_option("--format", ev_format, "Input format")->check(CLI::IsMember(formats));

  // calibrate
  std::string cal_model, cal_id, cal_ood, cal_out, cal_format = "vfmf";
  double cal_target = 0.95;
  auto* cal = app.add_subcommand("calibrate", "Choose a decision threshold");
  cal->add_option("--model", cal_model, "Model file")->required();
  cal->add_option("--id", cal_id, "ID calibration features")->required();
  cal->add_option("--ood", cal_ood, "Optional OOD calibration features");
  cal->add_option("--target-tpr", cal_target, "Fraction of calibration ID samples to accept");
  cal->add_option("--out", cal_out, "Monitor file to write")->required();
  cal->add_option("--format", cal_format, "Input format")->check(CLI::IsMember(formats));

  // decide
  std::string de_model, de_features, de_out, de_format = "vfmf";
  auto* dec = app.add_subcommand("decide", "Label features as ID or OOD with a calibrated monitor");
  dec->add_option("--model", de_model, "Monitor file written by calibrate")->required();
  dec->add_option("--features", de_features, "Feature file")->required();
  dec->add_option("--out", de_out, "CSV output (default stdout)");
  dec->add_option("--format", de_format, "Input format")->check(CLI::IsMember(formats));

  // filter
  std::string fi_model, fi_features, fi_out, fi_level = "none", fi_format = "vfmf";
  auto* fil = app.add_subcommand("filter", "Retain the highest-scoring fraction of inputs");
  fil->add_option("--model", fi_model, "Model file")->required();
  fil->add_option("--features", fi_features, "Feature file")->required();
  fil->add_option("--level", fi_level, "none, low, medium or high")
      ->check(CLI::IsMember({"none", "low", "medium", "high"}));
  fil->add_option("--out", fi_out, "Report output (default stdout)");
  fil->add_option("--format", fi_format, "Input format")->check(CLI::IsMember(formats));

  // synth
  std::string sy_preset, sy_scenario, sy_out, sy_format = "vfmf";
  std::optional<std::uint64_t> sy_seed;
  auto* syn = app.add_subcommand("synth", "Write a synthetic ID/OOD scenario as feature files");
  auto* preset_opt = syn->add_option("--preset", sy_preset, "covariate-mild, covariate-strong, semantic or joint");
  auto* scenario_opt = syn->add_option("--scenario", sy_scenario, "Scenario JSON file");
  preset_opt->excludes(scenario_opt);
  syn->add_option("--seed", sy_seed, "Override the scenario seed");
  syn->add_option("--out", sy_out, "Output directory")->required();
  syn->add_option("--format", sy_format, "Output format")->check(CLI::IsMember(formats));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("UsageError", e.what(), kUserError).dump() << '\n';
    return kUserError;
  }

  try {
    kernels::apply_thread_env();
    const auto t0 = std::chrono::steady_clock::now();

    if (*fit) {
      const Method method = parse_method(fit_method);
      FitOptions options = default_fit_options(method);
      options.seed = fit_seed;
      if (!fit_norm.empty()) options.normalization = parse_normalization(fit_norm);
      options.k_grid = parse_k_grid(fit_kgrid);
      if (!fit_grid.empty()) options.grid = fit_grid == "full" ? GridSize::Full : GridSize::Minimal;
      options.svm_selection = fit_selection == "held-out" ? GridSelection::HeldOutQuantile
                                                          : GridSelection::MeanTrainingScore;
      const FeatureMatrix train = load(fit_features, fit_format);
      auto outcome = fit_scorer(train, options);
      save_scorer(outcome.scorer, fit_out);
      json report = {{"command", "fit"},
                     {"method", method_name(method)},
                     {"normalize", normalization_name(options.normalization)},
                     {"model", fit_out},
                     {"n", train.rows()},
                     {"d", train.cols()},
                     {"seed", fit_seed},
                     {"elapsed_seconds", elapsed_since(t0)},
                     {"diagnostics", std::move(outcome.diagnostics)}};
      if (method == Method::Gmm) report["k_grid"] = options.k_grid;
      if (method == Method::OcSvm || method == Method::Flow) {
        report["grid"] = options.grid == GridSize::Full ? "full" : "minimal";
      }
      emit(fit_report, report.dump(2) + "\n", out);
    } else if (*score) {
      const Scorer scorer = load_scorer(sc_model);
      const ScoreSet s = scorer.score(load(sc_features, sc_format));
      emit(sc_out, scores_csv(s), out);
    } else if (*eval) {
      const Scorer scorer = load_scorer(ev_model);
      const ScoreSet id = scorer.score(load(ev_id, ev_format));
      const ScoreSet ood = scorer.score(load(ev_ood, ev_format));
      const ScoreSet joined = labelled_scores(id.scores, ood.scores, id.orientation);
      const EvalReport r = evaluate(joined, !ev_curve.empty());
      json report = to_json(r);
      report = {{"command", "eval"}, {"method", method_name(scorer.method())}, {"metrics", report}};
      if (r.curve) {
        write_text(ev_curve, curve_csv(*r.curve));
        report["curve"] = ev_curve;
      }
      report["elapsed_seconds"] = elapsed_since(t0);
      emit(ev_out, report.dump(2) + "\n", out);
    } else if (*cal) {
      Scorer scorer = load_scorer(cal_model);
      std::optional<FeatureMatrix> ood;
      if (!cal_ood.empty()) ood = load(cal_ood, cal_format);
      const Monitor m = calibrate(std::move(scorer), load(cal_id, cal_format), ood, cal_target);
      const std::string ref = model_reference(cal_model, cal_out);
      save_monitor(m, cal_out, ref);
      json report = monitor_envelope(m, ref);
      report["command"] = "calibrate";
      report["out"] = cal_out;
      emit("", report.dump(2) + "\n", out);
    } else if (*dec) {
      const Monitor m = load_monitor(de_model);
      const ScoreSet s = m.scorer.score(load(de_features, de_format));
      const auto labels = decide_scores(m.threshold, s);
      emit(de_out, scores_csv(s, &labels), out);
    } else if (*fil) {
      const Scorer scorer = load_scorer(fi_model);
      const FilterLevel level = parse_filter_level(fi_level);
      const ScoreSet s = scorer.score(load(fi_features, fi_format));
      const auto kept = filter(s, level);
      const auto oriented = oriented_scores(s);
      double mean = 0.0;
      for (auto i : kept) mean += oriented[i];
      mean /= static_cast<double>(kept.size());
      json report = {{"command", "filter"},
                     {"level", filter_level_name(level)},
                     {"retention", retention(level)},
                     {"n", s.size()},
                     {"count", kept.size()},
                     {"mean_score", mean},
                     {"indices", kept}};
      emit(fi_out, report.dump(2) + "\n", out);
    } else if (*syn) {
      ShiftScenario scenario;
      if (!sy_scenario.empty()) {
        scenario = load_scenario(sy_scenario);
      } else if (!sy_preset.empty()) {
        scenario = preset_scenario(sy_preset);
      } else {
        throw ParameterError("synth needs --preset or --scenario");
      }
      if (sy_seed) scenario.seed = *sy_seed;
      const GeneratedData data = generate(scenario);
      const fs::path dir(sy_out);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create directory '" + sy_out + "': " + ec.message());
      const bool csv = parse_format(sy_format) == FeatureFormat::Csv;
      const std::string ext = csv ? ".csv" : ".vfmf";
      json files = json::object();
      auto write_split = [&](const std::string& split, const FeatureMatrix& m) {
        const fs::path p = dir / (split + ext);
        if (csv) {
          std::string text;
          char buf[32];
          for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t c = 0; c < m.cols(); ++c) {
              std::snprintf(buf, sizeof buf, c ? ",%.17g" : "%.17g", m(r, c));
              text += buf;
            }
            text += '\n';
          }
          write_text(p.string(), text);
        } else {
          write_features(m, FeatureSetMetadata{scenario.name + "/" + split, m.cols(),
                                               Normalization::None, "synth"},
                         p);
        }
        files[split] = p.string();
      };
      write_split("monitor", data.monitor);
      write_split("id", data.id);
      write_split("ood", data.ood);
      const json spec = to_json(scenario);
      write_text((dir / "scenario.json").string(), spec.dump(2) + "\n");
      json report = {{"command", "synth"}, {"scenario", scenario.name}, {"seed", scenario.seed},
                     {"files", files}};
      emit("", report.dump(2) + "\n", out);
    }
    return kOk;
  } catch (const Error& e) {
    const int code = is_numerical_failure(e.kind()) ? kNumericalError : kUserError;
    err << error_json(std::string(error_kind_name(e.kind())), e.what(), code).dump() << '\n';
    return code;
  } catch (const std::bad_alloc&) {
    err << error_json("NumericalError", "out of memory", kNumericalError).dump() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << error_json("IoError", e.what(), kUserError).dump() << '\n';
    return kUserError;
  }
}

}  // namespace driftguard
