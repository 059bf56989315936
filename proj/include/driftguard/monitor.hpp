#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftguard/features.hpp"
#include "driftguard/scorer.hpp"

namespace driftguard {

struct CalibrationMeta {
  double target_tpr = 0.95;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  double calibration_tpr = 0.0;
  std::optional<double> calibration_fpr;  // only with OOD samples
};

// A sample is ID iff its oriented score is strictly greater than `threshold`.
// A threshold of -infinity disables rejection entirely.
struct Monitor {
  Scorer scorer;
  double threshold = 0.0;
  Orientation orientation = Orientation::HigherIsId;
  CalibrationMeta meta;

  bool disabled() const;
};

// Threshold placed just below the lowest ID score that must still be accepted,
// so that ">" keeps exactly the ID scores the quantile rule counts.
double calibrate_threshold(std::span<const double> id_scores, double target_tpr);

Monitor calibrate(Scorer scorer, const FeatureMatrix& id_samples,
                  const std::optional<FeatureMatrix>& ood_samples, double target_tpr = 0.95);

std::vector<SampleLabel> decide_scores(double threshold, const ScoreSet& scores);
std::vector<SampleLabel> decide(const Monitor& monitor, const FeatureMatrix& query);

enum class FilterLevel { None, Low, Medium, High };

double retention(FilterLevel level);
std::string filter_level_name(FilterLevel level);
FilterLevel parse_filter_level(const std::string& name);

// Ascending indices of the ceil(retention * n) highest oriented scores; ties
// resolved in favour of the lower index.
std::vector<std::size_t> filter(const ScoreSet& scores, FilterLevel level);

nlohmann::json monitor_envelope(const Monitor& monitor, const std::string& model_reference);

// The envelope points at a model file; relative references resolve against
// the envelope's directory.
void save_monitor(const Monitor& monitor, const std::filesystem::path& path,
                  const std::string& model_reference);
Monitor load_monitor(const std::filesystem::path& path);

}  // namespace driftguard
