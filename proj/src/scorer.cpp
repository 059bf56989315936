#include "driftguard/scorer.hpp"

#include "driftguard/error.hpp"
#include "driftguard/model_io.hpp"

namespace driftguard {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

nlohmann::json kernel_json(const KernelSpec& k) { return describe(k); }

nlohmann::json optional_failure(const std::optional<std::string>& f) {
  return f ? nlohmann::json(*f) : nlohmann::json(nullptr);
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::Aps: return "aps";
    case Method::Mfs: return "mfs";
    case Method::OcSvm: return "ocsvm";
    case Method::Gmm: return "gmm";
    case Method::Flow: return "nf";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "aps") return Method::Aps;
  if (name == "mfs") return Method::Mfs;
  if (name == "ocsvm") return Method::OcSvm;
  if (name == "gmm") return Method::Gmm;
  if (name == "nf") return Method::Flow;
  throw ParameterError("unknown method '" + name + "' (expected aps, mfs, ocsvm, gmm or nf)");
}

Normalization default_normalization(Method m) {
  return (m == Method::Aps || m == Method::Mfs) ? Normalization::None : Normalization::L2;
}

Method Scorer::method() const { return static_cast<Method>(model.index()); }

std::size_t Scorer::dimension() const {
  return std::visit(Overloaded{
                        [](const ApsModel& m) { return m.reference.cols(); },
                        [](const MfsModel& m) { return m.mean_vector.size(); },
                        [](const OcSvmModel& m) { return m.support_vectors.cols(); },
                        [](const GmmModel& m) { return m.dimension; },
                        [](const FlowModel& m) { return m.dimension; },
                    },
                    model);
}

ScoreSet Scorer::score(const FeatureMatrix& query) const {
  if (query.cols() != dimension()) {
    throw ShapeError("feature dimension " + std::to_string(query.cols()) +
                     " does not match model dimension " + std::to_string(dimension()));
  }
  const FeatureMatrix x = apply_normalization(query, normalization);
  return std::visit(Overloaded{
                        [&](const ApsModel& m) { return score_aps(m, x); },
                        [&](const MfsModel& m) { return score_mfs(m, x); },
                        [&](const OcSvmModel& m) { return score_ocsvm(m, x); },
                        [&](const GmmModel& m) { return score_gmm(m, x); },
                        [&](const FlowModel& m) { return score_flow(m, x); },
                    },
                    model);
}

void save_scorer(const Scorer& scorer, const std::filesystem::path& path) {
  ModelArchive archive;
  std::visit([&](const auto& m) { to_archive(m, archive); }, scorer.model);
  archive.header["method"] = method_name(scorer.method());
  archive.header["normalize"] = normalization_name(scorer.normalization);
  write_archive(archive, path);
}

Scorer load_scorer(const std::filesystem::path& path) {
  const ModelArchive archive = read_archive(path);
  Scorer s;
  try {
    s.normalization = parse_normalization(header_field<std::string>(archive, "normalize"));
  } catch (const ParameterError& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  const auto name = header_field<std::string>(archive, "method");
  Method m;
  try {
    m = parse_method(name);
  } catch (const ParameterError& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  switch (m) {
    case Method::Aps: s.model = aps_from_archive(archive); break;
    case Method::Mfs: s.model = mfs_from_archive(archive); break;
    case Method::OcSvm: s.model = ocsvm_from_archive(archive); break;
    case Method::Gmm: s.model = gmm_from_archive(archive); break;
    case Method::Flow: s.model = flow_from_archive(archive); break;
  }
  return s;
}

FitOptions default_fit_options(Method m) {
  FitOptions o;
  o.method = m;
  o.normalization = default_normalization(m);
  if (m == Method::OcSvm) o.grid = GridSize::Full;
  return o;
}

std::vector<GridPoint> ocsvm_minimal_grid() {
  std::vector<GridPoint> out;
  for (double nu : {0.01, 0.1, 0.5}) out.push_back({KernelSpec::rbf(GammaMode::Scale), nu});
  return out;
}

FitOutcome fit_scorer(const FeatureMatrix& train_raw, const FitOptions& options) {
  const FeatureMatrix train = apply_normalization(train_raw, options.normalization);
  FitOutcome out;
  out.scorer.normalization = options.normalization;
  auto& diag = out.diagnostics;
  diag = nlohmann::json::object();

  switch (options.method) {
    case Method::Aps:
      out.scorer.model = fit_aps(train);
      diag["reference_rows"] = train.rows();
      break;
    case Method::Mfs: {
      auto m = fit_mfs(train);
      diag["mean_norm"] = m.mean_norm;
      out.scorer.model = std::move(m);
      break;
    }
    case Method::OcSvm: {
      const auto points = options.grid == GridSize::Full ? ocsvm_grid() : ocsvm_minimal_grid();
      auto result = grid_search_ocsvm(train, points, options.svm, options.svm_selection);
      auto& trials = diag["trials"];
      trials = nlohmann::json::array();
      for (const auto& t : result.trials) {
        trials.push_back({{"kernel", kernel_json(t.kernel)},
                          {"nu", t.nu},
                          {"mean_score", t.failure ? nlohmann::json(nullptr) : nlohmann::json(t.mean_score)},
                          {"criterion", t.failure ? nlohmann::json(nullptr) : nlohmann::json(t.criterion)},
                          {"failure", optional_failure(t.failure)}});
      }
      diag["selection"] = options.svm_selection == GridSelection::MeanTrainingScore
                              ? "mean_training_score"
                              : "held_out_quantile";
      diag["best_index"] = result.best_index;
      diag["best_mean_score"] = result.best_mean_score;
      diag["support_vectors"] = result.best.support_vectors.rows();
      diag["iterations"] = result.best.iterations;
      out.scorer.model = std::move(result.best);
      break;
    }
    case Method::Gmm: {
      EmConfig em = options.em;
      em.seed = options.seed;
      auto sel = select_components(train, options.k_grid, em);
      auto& rows = diag["aic"];
      rows = nlohmann::json::array();
      for (const auto& r : sel.tested) {
        rows.push_back({{"components", r.components},
                        {"aic", r.failure ? nlohmann::json(nullptr) : nlohmann::json(r.aic)},
                        {"log_likelihood",
                         r.failure ? nlohmann::json(nullptr) : nlohmann::json(r.log_likelihood)},
                        {"failure", optional_failure(r.failure)}});
      }
      diag["selected_components"] = sel.selected_components;
      diag["iterations"] = sel.model.iterations;
      diag["converged"] = sel.model.converged;
      out.scorer.model = std::move(sel.model);
      break;
    }
    case Method::Flow: {
      TrainConfig cfg = options.train;
      cfg.seed = options.seed;
      const FlowGrid grid = options.grid == GridSize::Full ? FlowGrid::full() : FlowGrid::minimal();
      auto fit = fit_flow(train, cfg, grid);
      auto& trials = diag["trials"];
      trials = nlohmann::json::array();
      for (const auto& t : fit.trials) {
        trials.push_back({{"hidden", t.hidden},
                          {"steps", t.steps},
                          {"batch_size", t.batch_size},
                          {"epochs", t.epochs},
                          {"train_nll", t.train_nll},
                          {"validation_nll", t.validation_nll},
                          {"best_validation_nll",
                           t.failure ? nlohmann::json(nullptr) : nlohmann::json(t.best_validation_nll)},
                          {"failure", optional_failure(t.failure)}});
      }
      diag["best_index"] = fit.best_index;
      out.scorer.model = std::move(fit.model);
      break;
    }
  }
  return out;
}

}  // namespace driftguard
