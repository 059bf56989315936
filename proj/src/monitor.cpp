#include "driftguard/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "driftguard/error.hpp"

namespace driftguard {

namespace {

constexpr double kDisabled = -std::numeric_limits<double>::infinity();

std::string orientation_name(Orientation o) {
  return o == Orientation::HigherIsId ? "higher_is_id" : "higher_is_ood";
}

Orientation parse_orientation(const std::string& s) {
  if (s == "higher_is_id") return Orientation::HigherIsId;
  if (s == "higher_is_ood") return Orientation::HigherIsOod;
  throw FormatError("unknown orientation '" + s + "'");
}

double accepted_fraction(double threshold, std::span<const double> oriented) {
  const auto n = std::count_if(oriented.begin(), oriented.end(),
                               [&](double s) { return s > threshold; });
  return static_cast<double>(n) / static_cast<double>(oriented.size());
}

}  // namespace

bool Monitor::disabled() const { return threshold == kDisabled; }

double calibrate_threshold(std::span<const double> id_scores, double target_tpr) {
  if (id_scores.empty()) throw ParameterError("calibration needs at least one ID sample");
  if (!(target_tpr > 0.0 && target_tpr <= 1.0)) {
    throw ParameterError("target TPR must lie in (0, 1]");
  }
  for (double s : id_scores) {
    if (!std::isfinite(s)) throw NumericalError("non-finite calibration score");
  }
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  const double nd = static_cast<double>(n);
  std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(target_tpr * nd)), 1, n);
  while (k > 1 && static_cast<double>(k - 1) / nd >= target_tpr) --k;
  while (k < n && static_cast<double>(k) / nd < target_tpr) ++k;
  const double must_accept = sorted[k - 1];
  // Largest ID score strictly below the acceptance boundary, if any.
  const auto below = std::find_if(sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end(),
                                  [&](double s) { return s < must_accept; });
  if (below != sorted.end()) return *below;
  return std::nextafter(must_accept, kDisabled);
}

Monitor calibrate(Scorer scorer, const FeatureMatrix& id_samples,
                  const std::optional<FeatureMatrix>& ood_samples, double target_tpr) {
  if (id_samples.empty()) throw ParameterError("calibration needs at least one ID sample");
  const ScoreSet id_set = scorer.score(id_samples);
  const auto id_oriented = oriented_scores(id_set);

  Monitor m;
  m.orientation = id_set.orientation;
  m.threshold = calibrate_threshold(id_oriented, target_tpr);
  m.meta.target_tpr = target_tpr;
  m.meta.n_id = id_samples.rows();
  m.meta.calibration_tpr = accepted_fraction(m.threshold, id_oriented);
  if (ood_samples) {
    const ScoreSet ood_set = scorer.score(*ood_samples);
    const auto ood_oriented = oriented_scores(ood_set);
    m.meta.n_ood = ood_samples->rows();
    m.meta.calibration_fpr = accepted_fraction(m.threshold, ood_oriented);
  }
  m.scorer = std::move(scorer);
  return m;
}

std::vector<SampleLabel> decide_scores(double threshold, const ScoreSet& scores) {
  validate(scores);
  std::vector<SampleLabel> out;
  out.reserve(scores.size());
  for (double s : oriented_scores(scores)) {
    out.push_back(s > threshold ? SampleLabel::Id : SampleLabel::Ood);
  }
  return out;
}

std::vector<SampleLabel> decide(const Monitor& monitor, const FeatureMatrix& query) {
  ScoreSet scores = monitor.scorer.score(query);
  if (scores.orientation != monitor.orientation) {
    throw ParameterError("scorer orientation does not match the calibrated monitor");
  }
  return decide_scores(monitor.threshold, scores);
}

double retention(FilterLevel level) {
  switch (level) {
    case FilterLevel::None: return 1.0;
    case FilterLevel::Low: return 0.75;
    case FilterLevel::Medium: return 0.5;
    case FilterLevel::High: return 0.25;
  }
  return 1.0;
}

std::string filter_level_name(FilterLevel level) {
  switch (level) {
    case FilterLevel::None: return "none";
    case FilterLevel::Low: return "low";
    case FilterLevel::Medium: return "medium";
    case FilterLevel::High: return "high";
  }
  return "none";
}

FilterLevel parse_filter_level(const std::string& name) {
  if (name == "none") return FilterLevel::None;
  if (name == "low") return FilterLevel::Low;
  if (name == "medium") return FilterLevel::Medium;
  if (name == "high") return FilterLevel::High;
  throw ParameterError("unknown filter level '" + name + "' (expected none, low, medium or high)");
}

std::vector<std::size_t> filter(const ScoreSet& scores, FilterLevel level) {
  validate(scores);
  const auto s = oriented_scores(scores);
  const std::size_t n = s.size();
  const auto keep = static_cast<std::size_t>(std::ceil(retention(level) * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(std::min(keep, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

nlohmann::json monitor_envelope(const Monitor& m, const std::string& model_reference) {
  nlohmann::json j = {
      {"format", "driftguard-monitor"},
      {"version", 1},
      {"model", model_reference},
      {"method", method_name(m.scorer.method())},
      {"threshold", m.disabled() ? nlohmann::json(nullptr) : nlohmann::json(m.threshold)},
      {"orientation", orientation_name(m.orientation)},
      {"target_tpr", m.meta.target_tpr},
      {"n_id", m.meta.n_id},
      {"n_ood", m.meta.n_ood},
      {"calibration_tpr", m.meta.calibration_tpr},
  };
  j["calibration_fpr"] =
      m.meta.calibration_fpr ? nlohmann::json(*m.meta.calibration_fpr) : nlohmann::json(nullptr);
  return j;
}

void save_monitor(const Monitor& monitor, const std::filesystem::path& path,
                  const std::string& model_reference) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << monitor_envelope(monitor, model_reference).dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Monitor load_monitor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open monitor file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("monitor file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  Monitor m;
  std::filesystem::path model_path;
  try {
    if (j.at("format").get<std::string>() != "driftguard-monitor") {
      throw FormatError("'" + path.string() + "' is not a monitor file");
    }
    model_path = j.at("model").get<std::string>();
    const auto& t = j.at("threshold");
    m.threshold = t.is_null() ? kDisabled : t.get<double>();
    m.orientation = parse_orientation(j.at("orientation").get<std::string>());
    m.meta.target_tpr = j.at("target_tpr").get<double>();
    m.meta.n_id = j.at("n_id").get<std::size_t>();
    m.meta.n_ood = j.at("n_ood").get<std::size_t>();
    m.meta.calibration_tpr = j.value("calibration_tpr", 0.0);
    if (j.contains("calibration_fpr") && !j["calibration_fpr"].is_null()) {
      m.meta.calibration_fpr = j["calibration_fpr"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("monitor file '" + path.string() + "': " + e.what());
  }
  if (model_path.is_relative()) model_path = path.parent_path() / model_path;
  m.scorer = load_scorer(model_path);
  return m;
}

}  // namespace driftguard
