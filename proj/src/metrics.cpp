#include "driftguard/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "driftguard/error.hpp"

namespace driftguard {

namespace {

struct Labelled {
  std::vector<double> scores;  // higher is ID
  std::vector<bool> is_id;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

Labelled prepare(const ScoreSet& set) {
  validate(set);
  if (!set.labels) throw MetricError("metrics need labelled scores");
  Labelled out;
  out.scores = oriented_scores(set);
  out.is_id.reserve(set.size());
  for (auto l : *set.labels) {
    out.is_id.push_back(l == SampleLabel::Id);
    (l == SampleLabel::Id ? out.n_id : out.n_ood) += 1;
  }
  if (out.n_id == 0 || out.n_ood == 0) {
    throw MetricError("metrics need both ID and OOD samples (got " + std::to_string(out.n_id) +
                      " ID, " + std::to_string(out.n_ood) + " OOD)");
  }
  return out;
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(const std::vector<double>& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

// Cumulative (threshold, TP, FP) at every distinct score, descending.
struct SweepStep {
  double threshold;
  std::size_t tp;
  std::size_t fp;
};

std::vector<SweepStep> sweep(const Labelled& l) {
  const auto idx = descending(l.scores);
  std::vector<SweepStep> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    (l.is_id[idx[k]] ? tp : fp) += 1;
    if (k + 1 == idx.size() || l.scores[idx[k + 1]] != l.scores[idx[k]]) {
      steps.push_back({l.scores[idx[k]], tp, fp});
    }
  }
  return steps;
}

}  // namespace

double auroc(const ScoreSet& set) {
  const Labelled l = prepare(set);
  const std::size_t n = l.scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return l.scores[a] < l.scores[b]; });
  // Average 1-based ranks over ties.
  double id_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && l.scores[idx[j + 1]] == l.scores[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (l.is_id[idx[k]]) id_rank_sum += rank;
    }
    i = j + 1;
  }
  const double n_id = static_cast<double>(l.n_id);
  const double u = id_rank_sum - n_id * (n_id + 1.0) / 2.0;
  return u / (n_id * static_cast<double>(l.n_ood));
}

double aupr(const ScoreSet& set) {
  const Labelled l = prepare(set);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& s : sweep(l)) {
    const double recall = static_cast<double>(s.tp) / static_cast<double>(l.n_id);
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

FprAtTpr fpr_at_tpr(const ScoreSet& set, double tpr_target) {
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) {
    throw ParameterError("TPR target must lie in (0, 1]");
  }
  const Labelled l = prepare(set);
  std::vector<double> id_scores, ood_scores;
  for (std::size_t i = 0; i < l.scores.size(); ++i) {
    (l.is_id[i] ? id_scores : ood_scores).push_back(l.scores[i]);
  }
  std::sort(id_scores.begin(), id_scores.end(), std::greater<>());
  // Smallest count k of top ID scores with k / n_ID >= target.
  const double n_id = static_cast<double>(l.n_id);
  std::size_t k = static_cast<std::size_t>(std::ceil(tpr_target * n_id));
  k = std::clamp<std::size_t>(k, 1, l.n_id);
  while (k > 1 && static_cast<double>(k - 1) / n_id >= tpr_target) --k;
  while (k < l.n_id && static_cast<double>(k) / n_id < tpr_target) ++k;
  const double threshold = id_scores[k - 1];
  const auto passed = std::count_if(ood_scores.begin(), ood_scores.end(),
                                    [&](double s) { return s >= threshold; });
  FprAtTpr out;
  out.fpr = static_cast<double>(passed) / static_cast<double>(l.n_ood);
  // Report the threshold in the caller's orientation.
  out.threshold = set.orientation == Orientation::HigherIsOod ? -threshold : threshold;
  return out;
}

ScoreSet normalize_minmax(const ScoreSet& scores, const ScoreSet& reference) {
  validate(scores);
  validate(reference);
  if (reference.scores.empty()) throw DegenerateInputError("empty reference scores");
  const auto [lo, hi] = std::minmax_element(reference.scores.begin(), reference.scores.end());
  if (!(*hi > *lo)) throw DegenerateInputError("reference scores are constant");
  ScoreSet out = scores;
  const double span = *hi - *lo;
  for (auto& s : out.scores) s = std::clamp((s - *lo) / span, 0.0, 1.0);
  return out;
}

std::vector<CurvePoint> curve_points(const ScoreSet& set, std::size_t max_points) {
  const Labelled l = prepare(set);
  const auto steps = sweep(l);
  std::vector<CurvePoint> all;
  all.reserve(steps.size());
  const double sign = set.orientation == Orientation::HigherIsOod ? -1.0 : 1.0;
  for (const auto& s : steps) {
    const double tpr = static_cast<double>(s.tp) / static_cast<double>(l.n_id);
    const double fpr = static_cast<double>(s.fp) / static_cast<double>(l.n_ood);
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    all.push_back({sign * s.threshold, tpr, fpr, precision, tpr});
  }
  if (max_points == 0 || all.size() <= max_points) return all;
  std::vector<CurvePoint> out;
  out.reserve(max_points);
  for (std::size_t q = 0; q < max_points; ++q) {
    const std::size_t i = static_cast<std::size_t>(
        std::llround(static_cast<double>(q) * static_cast<double>(all.size() - 1) /
                     static_cast<double>(max_points - 1)));
    out.push_back(all[i]);
  }
  return out;
}

EvalReport evaluate(const ScoreSet& scores, bool with_curve) {
  EvalReport r;
  r.auroc = auroc(scores);
  r.aupr = aupr(scores);
  const auto f = fpr_at_tpr(scores, 0.95);
  r.fpr95 = f.fpr;
  r.tpr95_threshold = f.threshold;
  for (auto lab : *scores.labels) (lab == SampleLabel::Id ? r.n_id : r.n_ood) += 1;
  if (with_curve) r.curve = curve_points(scores);
  return r;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j = {
      {"auroc", report.auroc},   {"aupr", report.aupr}, {"fpr95", report.fpr95},
      {"tpr95_threshold", report.tpr95_threshold},      {"n_id", report.n_id},
      {"n_ood", report.n_ood},
  };
  if (report.curve) j["curve_points"] = report.curve->size();
  return j;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "threshold,tpr,fpr,precision,recall\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", p.threshold, p.tpr, p.fpr,
                  p.precision, p.recall);
    os << buf;
  }
  return os.str();
}

}  // namespace driftguard
