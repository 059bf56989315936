#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "driftguard/error.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/monitor.hpp"
#include "driftguard/synth.hpp"
#include "test_util.hpp"

using namespace driftguard;

namespace {

std::size_t count_id(const std::vector<SampleLabel>& labels) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), SampleLabel::Id));
}

ScoreSet plain(std::vector<double> v) {
  ScoreSet s;
  s.scores = std::move(v);
  return s;
}

Scorer small_gmm_scorer(const FeatureMatrix& train) {
  auto opts = default_fit_options(Method::Gmm);
  opts.k_grid = {1, 2};
  return fit_scorer(train, opts).scorer;
}

}  // namespace

TEST_CASE("ID-only calibration on 1..100") {
  std::vector<double> id(100);
  std::iota(id.begin(), id.end(), 1.0);
  const double t = calibrate_threshold(id, 0.95);
  CHECK(t == 5.0);  // the fifth-lowest score
  const auto labels = decide_scores(t, plain(id));
  CHECK(count_id(labels) == 95);
  CHECK(static_cast<double>(count_id(labels)) / 100.0 >= 0.95);

  const double all = calibrate_threshold(id, 1.0);
  CHECK(all < 1.0);
  CHECK(all == std::nextafter(1.0, -INFINITY));
  CHECK(count_id(decide_scores(all, plain(id))) == 100);

  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{}, 0.95), ParameterError);
  CHECK_THROWS_AS(calibrate_threshold(id, 0.0), ParameterError);
  CHECK_THROWS_AS(calibrate_threshold(id, 1.01), ParameterError);
}

TEST_CASE("calibration meets the target TPR by construction") {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> id(n);
    const bool ties = t % 2 == 0;
    for (auto& v : id) v = ties ? static_cast<double>(rng.below(7)) : rng.normal();
    const double target = 0.05 + 0.95 * rng.uniform();
    const double thr = calibrate_threshold(id, target);
    const double tpr = static_cast<double>(count_id(decide_scores(thr, plain(id)))) / static_cast<double>(n);
    CHECK(tpr >= target);
    // No looser threshold inside the sample would still pass: the next ID
    // score up from the threshold would drop below the target.
    std::vector<double> above;
    for (double v : id)
      if (v > thr) above.push_back(v);
    const double lowest_accepted = *std::min_element(above.begin(), above.end());
    const double tighter =
        static_cast<double>(std::count_if(id.begin(), id.end(), [&](double v) { return v > lowest_accepted; })) /
        static_cast<double>(n);
    CHECK(tighter < target);
  }
}

TEST_CASE("decide uses a strict inequality") {
  const auto labels = decide_scores(2.0, plain({1.0, 2.0, 3.0}));
  CHECK(labels == std::vector<SampleLabel>{SampleLabel::Ood, SampleLabel::Ood, SampleLabel::Id});
  const double off = -std::numeric_limits<double>::infinity();
  CHECK(count_id(decide_scores(off, plain({-1e300, 0.0, 5.0}))) == 3);

  // Increasing transforms applied to scores and threshold alike change nothing.
  Rng rng(2);
  std::vector<double> s(200);
  for (auto& v : s) v = rng.normal();
  const double thr = 0.3;
  std::vector<double> warped(s);
  for (auto& v : warped) v = std::exp(v) * 2.0 + 1.0;
  CHECK(decide_scores(thr, plain(s)) == decide_scores(std::exp(thr) * 2.0 + 1.0, plain(warped)));

  ScoreSet flipped = plain({-1.0, -3.0});
  flipped.orientation = Orientation::HigherIsOod;
  CHECK(decide_scores(2.0, flipped) == std::vector<SampleLabel>{SampleLabel::Ood, SampleLabel::Id});
}

TEST_CASE("calibrated monitor on a separated scenario") {
  const auto data = generate(mean_shift_scenario(3.0, 11, 8));
  const Scorer scorer = small_gmm_scorer(data.monitor);
  const std::size_t half = data.id.rows() / 2;
  std::vector<std::size_t> first(half), second(data.id.rows() - half);
  std::iota(first.begin(), first.end(), std::size_t{0});
  std::iota(second.begin(), second.end(), half);
  const std::size_t ood_half = data.ood.rows() / 2;
  std::vector<std::size_t> ood_a(ood_half), ood_b(data.ood.rows() - ood_half);
  std::iota(ood_a.begin(), ood_a.end(), std::size_t{0});
  std::iota(ood_b.begin(), ood_b.end(), ood_half);

  const auto cal_id = data.id.select_rows(first);
  const auto cal_ood = data.ood.select_rows(ood_a);
  const Monitor with_ood = calibrate(scorer, cal_id, cal_ood, 0.95);
  const Monitor id_only = calibrate(scorer, cal_id, std::nullopt, 0.95);
  CHECK(with_ood.meta.calibration_tpr >= 0.95);
  REQUIRE(with_ood.meta.calibration_fpr);
  CHECK_FALSE(id_only.meta.calibration_fpr);
  CHECK(with_ood.meta.n_ood == cal_ood.rows());
  CHECK(with_ood.threshold == id_only.threshold);

  // Decisions agree with thresholding the raw scores.
  const auto held_ood = data.ood.select_rows(ood_b);
  const auto labels = decide(with_ood, held_ood);
  CHECK(labels == decide_scores(with_ood.threshold, scorer.score(held_ood)));
  const double fpr = static_cast<double>(count_id(labels)) / static_cast<double>(held_ood.rows());
  CHECK(fpr < 0.05);
  const auto held_id = data.id.select_rows(second);
  CHECK(static_cast<double>(count_id(decide(with_ood, held_id))) / held_id.rows() > 0.9);

  CHECK_THROWS_AS(calibrate(scorer, FeatureMatrix(), std::nullopt), ParameterError);
}

TEST_CASE("filter levels") {
  CHECK(retention(FilterLevel::None) == 1.0);
  CHECK(retention(FilterLevel::Low) == 0.75);
  CHECK(retention(FilterLevel::Medium) == 0.5);
  CHECK(retention(FilterLevel::High) == 0.25);
  for (auto l : {FilterLevel::None, FilterLevel::Low, FilterLevel::Medium, FilterLevel::High})
    CHECK(parse_filter_level(filter_level_name(l)) == l);
  CHECK_THROWS_AS(parse_filter_level("extreme"), ParameterError);

  CHECK(filter(plain({0.1, 0.9, 0.5, 0.7}), FilterLevel::Medium) == std::vector<std::size_t>{1, 3});
  CHECK(filter(plain({3, 1, 2}), FilterLevel::None) == std::vector<std::size_t>{0, 1, 2});
  // ceil(0.25 * 5) = 2; the tie at 4 goes to the lower index.
  CHECK(filter(plain({4, 1, 4, 4, 0}), FilterLevel::High) == std::vector<std::size_t>{0, 2});
  CHECK(filter(plain({7}), FilterLevel::High) == std::vector<std::size_t>{0});
  ScoreSet ood_high = plain({5, 1, 3, 2});
  ood_high.orientation = Orientation::HigherIsOod;
  CHECK(filter(ood_high, FilterLevel::Medium) == std::vector<std::size_t>{1, 3});
}

TEST_CASE("filter nesting and monotone retained mean on 500 score vectors") {
  Rng rng(500);
  const FilterLevel levels[] = {FilterLevel::None, FilterLevel::Low, FilterLevel::Medium, FilterLevel::High};
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> v(n);
    for (auto& x : v) x = t % 3 == 0 ? static_cast<double>(rng.below(5)) : rng.normal();
    const auto s = plain(v);
    std::vector<std::vector<std::size_t>> kept;
    std::vector<double> means;
    for (auto l : levels) {
      kept.push_back(filter(s, l));
      double m = 0;
      for (auto i : kept.back()) m += v[i];
      means.push_back(m / static_cast<double>(kept.back().size()));
      CHECK(kept.back().size() ==
            static_cast<std::size_t>(std::ceil(retention(l) * static_cast<double>(n))));
    }
    for (std::size_t l = 1; l < 4; ++l) {
      CHECK(std::includes(kept[l - 1].begin(), kept[l - 1].end(), kept[l].begin(), kept[l].end()));
      CHECK(means[l] >= means[l - 1] - 1e-12);
    }
  }
}

TEST_CASE("monitor envelope round trip") {
  testutil::TempDir dir;
  const auto train = testutil::gaussian_matrix(200, 3, 1);
  const Scorer scorer = small_gmm_scorer(train);
  save_scorer(scorer, dir / "model.dgm");
  Monitor m = calibrate(scorer, testutil::gaussian_matrix(100, 3, 2), testutil::gaussian_matrix(50, 3, 3, 1.0, 4.0));
  save_monitor(m, dir / "monitor.json", "model.dgm");
  const Monitor back = load_monitor(dir / "monitor.json");
  CHECK(back.threshold == m.threshold);
  CHECK(back.meta.calibration_fpr == m.meta.calibration_fpr);
  CHECK(back.meta.n_id == 100);
  const auto q = testutil::gaussian_matrix(40, 3, 9);
  CHECK(decide(back, q) == decide(m, q));

  m.threshold = -std::numeric_limits<double>::infinity();
  CHECK(m.disabled());
  const auto env = monitor_envelope(m, "model.dgm");
  CHECK(env.at("threshold").is_null());
  save_monitor(m, dir / "off.json", "model.dgm");
  CHECK(load_monitor(dir / "off.json").disabled());

  std::ofstream(dir / "junk.json") << "{not json";
  CHECK_THROWS_AS(load_monitor(dir / "junk.json"), FormatError);
  std::ofstream(dir / "other.json") << R"({"format":"something-else"})";
  CHECK_THROWS_AS(load_monitor(dir / "other.json"), FormatError);
  CHECK_THROWS_AS(load_monitor(dir / "missing.json"), IoError);
}
