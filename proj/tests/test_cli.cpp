#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "driftguard/cli.hpp"
#include "driftguard/features.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/scorer.hpp"
#include "test_util.hpp"

using namespace driftguard;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;

  json report() const { return json::parse(out); }
  json error() const { return json::parse(err).at("error"); }
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string write_matrix(const testutil::TempDir& dir, const std::string& name, const FeatureMatrix& m) {
  const auto p = dir / name;
  write_features(m, FeatureSetMetadata{name, m.cols(), Normalization::None, "test"}, p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<double> csv_scores(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) out.push_back(std::stod(line.substr(line.find(',') + 1)));
  return out;
}

}  // namespace

TEST_CASE("usage errors exit 2 with a JSON payload") {
  auto r = run({});
  CHECK(r.code == 2);
  CHECK(r.error().at("kind") == "UsageError");
  CHECK(r.error().at("exit_code") == 2);

  r = run({"fit", "--method", "gmm"});
  CHECK(r.code == 2);
  r = run({"frobnicate"});
  CHECK(r.code == 2);
  r = run({"filter", "--model", "m", "--features", "f", "--level", "extreme"});
  CHECK(r.code == 2);
  r = run({"fit", "--method", "gmm", "--features", "f", "--out", "m", "--normalize", "l3"});
  CHECK(r.code == 2);
  r = run({"fit", "--method", "svm", "--features", "f", "--out", "m"});
  CHECK(r.code == 2);
  CHECK(r.error().at("kind") == "UsageError");
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("synth writes the three splits") {
  testutil::TempDir dir;
  const auto r = run({"synth", "--preset", "covariate-mild", "--out", (dir / "s").string(), "--seed", "3"});
  REQUIRE(r.code == 0);
  const auto mon = read_features(dir / "s" / "monitor.vfmf").first;
  CHECK(mon.rows() == 2000);
  CHECK(mon.cols() == 16);
  CHECK(read_features(dir / "s" / "id.vfmf").first.rows() == 500);
  CHECK(read_features(dir / "s" / "ood.vfmf").first.rows() == 500);
  CHECK(std::filesystem::exists(dir / "s" / "scenario.json"));

  const auto c = run({"synth", "--preset", "semantic", "--out", (dir / "c").string(), "--format", "csv"});
  REQUIRE(c.code == 0);
  CHECK(read_features(dir / "c" / "id.csv", FeatureFormat::Csv).first.rows() == 500);
  CHECK(run({"synth", "--out", (dir / "x").string()}).code == 2);
  CHECK(run({"synth", "--preset", "nope", "--out", (dir / "x").string()}).code == 2);
}

TEST_CASE("fit, score, eval, calibrate, decide and filter") {
  testutil::TempDir dir;
  REQUIRE(run({"synth", "--preset", "covariate-strong", "--out", dir.path().string()}).code == 0);
  const std::string mon = (dir / "monitor.vfmf").string(), id = (dir / "id.vfmf").string(),
                    ood = (dir / "ood.vfmf").string(), gmm = (dir / "gmm.dgm").string();

  auto fit = run({"fit", "--method", "gmm", "--features", mon, "--out", gmm, "--k-grid", "1..6", "--seed", "1"});
  REQUIRE(fit.code == 0);
  const auto rep = fit.report();
  CHECK(rep.at("diagnostics").at("aic").size() == 6);
  CHECK(rep.at("method") == "gmm");
  CHECK(rep.at("elapsed_seconds").get<double>() >= 0.0);

  auto ev = run({"eval", "--model", gmm, "--id", id, "--ood", ood, "--curve", (dir / "curve.csv").string()});
  REQUIRE(ev.code == 0);
  CHECK(ev.report().at("metrics").at("auroc").get<double>() >= 0.99);
  CHECK(slurp((dir / "curve.csv").string()).rfind("threshold,", 0) == 0);

  auto self = run({"eval", "--model", gmm, "--id", id, "--ood", id});
  REQUIRE(self.code == 0);
  CHECK(std::abs(self.report().at("metrics").at("auroc").get<double>() - 0.5) <= 0.02);

  // score agrees with the library and is byte-identical across runs
  const std::string s1 = (dir / "s1.csv").string(), s2 = (dir / "s2.csv").string();
  REQUIRE(run({"score", "--model", gmm, "--features", id, "--out", s1}).code == 0);
  REQUIRE(run({"score", "--model", gmm, "--features", id, "--out", s2}).code == 0);
  CHECK(slurp(s1) == slurp(s2));
  const auto lib = load_scorer(gmm).score(read_features(id).first).scores;
  CHECK(csv_scores(slurp(s1)) == lib);

  const std::string monitor = (dir / "monitor.json").string();
  auto cal = run({"calibrate", "--model", gmm, "--id", id, "--ood", ood, "--target-tpr", "0.9", "--out", monitor});
  REQUIRE(cal.code == 0);
  CHECK(cal.report().at("calibration_tpr").get<double>() >= 0.9);
  CHECK(cal.report().at("model") == "gmm.dgm");
  auto dec = run({"decide", "--model", monitor, "--features", ood});
  REQUIRE(dec.code == 0);
  std::size_t flagged = 0;
  std::istringstream lines(dec.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "index,score,label");
  while (std::getline(lines, line)) flagged += line.ends_with(",ood");
  CHECK(flagged >= 490);

  // filter on the first 100 ID rows
  std::vector<std::size_t> first100(100);
  for (std::size_t i = 0; i < 100; ++i) first100[i] = i;
  const auto small = write_matrix(dir, "small.vfmf", read_features(id).first.select_rows(first100));
  std::vector<std::vector<std::size_t>> kept;
  for (const char* level : {"none", "low", "medium", "high"}) {
    auto f = run({"filter", "--model", gmm, "--features", small, "--level", level});
    REQUIRE(f.code == 0);
    kept.push_back(f.report().at("indices").get<std::vector<std::size_t>>());
    CHECK(f.report().at("count") == kept.back().size());
  }
  CHECK(kept[0].size() == 100);
  CHECK(kept[3].size() == 25);
  for (std::size_t l = 1; l < 4; ++l)
    CHECK(std::includes(kept[l - 1].begin(), kept[l - 1].end(), kept[l].begin(), kept[l].end()));
}

TEST_CASE("MFS scores of the training file lie in [-1, 1]") {
  testutil::TempDir dir;
  const auto train = write_matrix(dir, "t.vfmf", testutil::gaussian_matrix(300, 8, 4, 1.0, 0.5));
  REQUIRE(run({"fit", "--method", "mfs", "--features", train, "--out", (dir / "m.dgm").string()}).code == 0);
  const auto r = run({"score", "--model", (dir / "m.dgm").string(), "--features", train});
  REQUIRE(r.code == 0);
  const auto s = csv_scores(r.out);
  CHECK(s.size() == 300);
  for (double v : s) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("method-specific fit reports") {
  testutil::TempDir dir;
  const auto train = write_matrix(dir, "t.vfmf", testutil::gaussian_matrix(120, 4, 6));
  auto svm = run({"fit", "--method", "ocsvm", "--features", train, "--out", (dir / "s.dgm").string(), "--grid", "full"});
  REQUIRE(svm.code == 0);
  CHECK(svm.report().at("diagnostics").at("trials").size() == 24);
  CHECK(svm.report().at("normalize") == "l2");
  auto held = run({"fit", "--method", "ocsvm", "--features", train, "--out", (dir / "h.dgm").string(), "--grid",
                   "minimal", "--selection", "held-out", "--normalize", "none"});
  REQUIRE(held.code == 0);
  CHECK(held.report().at("diagnostics").at("trials").size() == 3);
  CHECK(held.report().at("diagnostics").at("selection") == "held_out_quantile");
  CHECK(held.report().at("normalize") == "none");

  auto aps = run({"fit", "--method", "aps", "--features", train, "--out", (dir / "a.dgm").string(), "--format", "vfmf"});
  REQUIRE(aps.code == 0);
  CHECK(load_scorer(dir / "a.dgm").method() == Method::Aps);

  const auto tiny = write_matrix(dir, "tiny.vfmf", testutil::gaussian_matrix(9, 2, 1));
  auto nf = run({"fit", "--method", "nf", "--features", tiny, "--out", (dir / "n.dgm").string()});
  CHECK(nf.code == 2);
  CHECK(nf.error().at("message").get<std::string>().find("insufficient samples") != std::string::npos);
  CHECK(run({"fit", "--method", "gmm", "--features", train, "--out", (dir / "g.dgm").string(), "--k-grid", "3..1"})
            .code == 2);
  CHECK(run({"fit", "--method", "gmm", "--features", train, "--out", (dir / "g.dgm").string(), "--k-grid", "x"})
            .code == 2);
}

TEST_CASE("input errors and numerical failures") {
  testutil::TempDir dir;
  const auto train = write_matrix(dir, "t.vfmf", testutil::gaussian_matrix(50, 4, 2));
  const auto other = write_matrix(dir, "o.vfmf", testutil::gaussian_matrix(50, 3, 2));
  const std::string model = (dir / "m.dgm").string();
  REQUIRE(run({"fit", "--method", "mfs", "--features", train, "--out", model}).code == 0);

  auto mismatch = run({"score", "--model", model, "--features", other});
  CHECK(mismatch.code == 2);
  CHECK(mismatch.error().at("kind") == "ShapeError");

  testutil::write_bytes(dir / "bad.vfmf", {'V', 'F', 'M', 'X', 1});
  auto bad = run({"eval", "--model", model, "--id", (dir / "bad.vfmf").string(), "--ood", train});
  CHECK(bad.code == 2);
  CHECK(bad.error().at("kind") == "FormatError");

  CHECK(run({"score", "--model", (dir / "missing.dgm").string(), "--features", train}).code == 2);

  const auto same = write_matrix(dir, "same.vfmf", FeatureMatrix::from_rows({{1, 2}, {1, 2}, {1, 2}, {1, 2}}));
  auto degenerate = run({"fit", "--method", "gmm", "--features", same, "--out", (dir / "g.dgm").string(),
                         "--k-grid", "1..1", "--normalize", "none"});
  CHECK(degenerate.code == 3);
  CHECK(degenerate.error().at("exit_code") == 3);

  ::setenv("DRIFTGUARD_THREADS", "many", 1);
  auto threads = run({"score", "--model", model, "--features", train});
  ::unsetenv("DRIFTGUARD_THREADS");
  CHECK(threads.code == 2);
  ::setenv("DRIFTGUARD_THREADS", "1", 1);
  CHECK(run({"score", "--model", model, "--features", train}).code == 0);
  ::unsetenv("DRIFTGUARD_THREADS");
}
