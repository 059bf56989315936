#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "driftguard/features.hpp"
#include "driftguard/flow.hpp"
#include "driftguard/gmm.hpp"
#include "driftguard/ocsvm.hpp"
#include "driftguard/similarity.hpp"

namespace driftguard {

enum class Method { Aps, Mfs, OcSvm, Gmm, Flow };

std::string method_name(Method m);
Method parse_method(const std::string& name);

// None for the cosine scorers (already scale-free), L2 for the others.
Normalization default_normalization(Method m);

using ModelVariant = std::variant<ApsModel, MfsModel, OcSvmModel, GmmModel, FlowModel>;

// A trained model plus the feature normalisation applied before scoring.
// All five scorers report higher-is-ID scores.
struct Scorer {
  ModelVariant model;
  Normalization normalization = Normalization::None;

  Method method() const;
  std::size_t dimension() const;
  ScoreSet score(const FeatureMatrix& query) const;
};

void save_scorer(const Scorer& scorer, const std::filesystem::path& path);
Scorer load_scorer(const std::filesystem::path& path);

enum class GridSize { Minimal, Full };

struct FitOptions {
  Method method = Method::Gmm;
  Normalization normalization = Normalization::None;
  std::uint64_t seed = 0;
  std::vector<std::size_t> k_grid = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // Flow: one trial vs the 36-point grid. SVM: RBF/scale at three nus vs all 24 trials.
  GridSize grid = GridSize::Minimal;
  GridSelection svm_selection = GridSelection::MeanTrainingScore;
  EmConfig em;
  OcSvmConfig svm;
  TrainConfig train;
};

// Method-appropriate normalisation; the SVM defaults to its full grid.
FitOptions default_fit_options(Method m);

// The three RBF (gamma = scale) points at nu 0.01, 0.1 and 0.5.
std::vector<GridPoint> ocsvm_minimal_grid();

struct FitOutcome {
  Scorer scorer;
  nlohmann::json diagnostics;  // AIC table, grid trials or NLL curves
};

FitOutcome fit_scorer(const FeatureMatrix& train, const FitOptions& options);

}  // namespace driftguard
