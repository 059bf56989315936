#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftguard/features.hpp"

namespace driftguard {

// ID is the positive class throughout. Every metric first orients scores so
// that higher means more ID, then requires both labels to be present.

// Mann-Whitney P(score_ID > score_OOD) + P(equal) / 2 via average ranks.
double auroc(const ScoreSet& scores);

// Average precision: sum over descending distinct thresholds of
// (recall_k - recall_{k-1}) * precision_k.
double aupr(const ScoreSet& scores);

struct FprAtTpr {
  double fpr = 0.0;
  double threshold = 0.0;
};

// threshold = largest t with #{ID >= t} / n_ID >= target; fpr = #{OOD >= t} / n_OOD.
FprAtTpr fpr_at_tpr(const ScoreSet& scores, double tpr_target = 0.95);

// Affine map taking the reference range onto [0, 1], clamped.
ScoreSet normalize_minmax(const ScoreSet& scores, const ScoreSet& reference);

struct CurvePoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// One point per distinct threshold (descending), subsampled by quantile to at
// most `max_points`.
std::vector<CurvePoint> curve_points(const ScoreSet& scores, std::size_t max_points = 10000);

struct EvalReport {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  double tpr95_threshold = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  std::optional<std::vector<CurvePoint>> curve;
};

EvalReport evaluate(const ScoreSet& scores, bool with_curve = false);

nlohmann::json to_json(const EvalReport& report);
std::string curve_csv(const std::vector<CurvePoint>& curve);

}  // namespace driftguard
