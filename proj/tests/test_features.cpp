#include <doctest.h>

#include <cmath>

#include "driftguard/error.hpp"
#include "driftguard/features.hpp"
#include "test_util.hpp"

using namespace driftguard;
using testutil::TempDir;

TEST_CASE("feature matrix enforces its invariants") {
  CHECK_THROWS_AS(FeatureMatrix(0, 3, {}), DataError);
  CHECK_THROWS_AS(FeatureMatrix(2, 0, {}), DataError);
  CHECK_THROWS_AS(FeatureMatrix(2, 2, {1, 2, 3}), DataError);
  CHECK_THROWS_AS(FeatureMatrix(1, 2, {1.0, std::nan("")}), DataError);
  CHECK_THROWS_AS(FeatureMatrix(1, 2, {1.0, INFINITY}), DataError);
  CHECK_THROWS_AS(FeatureMatrix::from_rows({{1, 2}, {3}}), DataError);

  const auto m = FeatureMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0);
  const std::vector<std::size_t> pick = {1, 1, 0};
  const auto s = m.select_rows(pick);
  CHECK(s.rows() == 3);
  CHECK(s(0, 0) == 4.0);
  CHECK(s(2, 0) == 1.0);
}

TEST_CASE("hand-built VFMF file decodes to the declared shape") {
  TempDir dir;
  const auto p = dir / "two_by_three.vfmf";
  testutil::write_bytes(p, testutil::vfmf_bytes(2, 3, {1, 2, 3, 4, 5, 6.5f}));
  const auto [m, meta] = read_features(p);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.5);
  CHECK(meta.name == "two_by_three");
  CHECK(meta.dimension == 3);
  CHECK(meta.normalization == Normalization::None);
}

TEST_CASE("malformed VFMF files are rejected with the right error") {
  TempDir dir;
  const auto p = dir / "bad.vfmf";

  SUBCASE("truncated payload") {
    testutil::write_bytes(p, testutil::vfmf_bytes(2, 3, {1, 2, 3, 4, 5}));
    CHECK_THROWS_AS(read_features(p), DataError);
  }
  SUBCASE("trailing bytes") {
    testutil::write_bytes(p, testutil::vfmf_bytes(1, 1, {1, 2}));
    CHECK_THROWS_AS(read_features(p), DataError);
  }
  SUBCASE("bad magic") {
    auto bytes = testutil::vfmf_bytes(1, 1, {1});
    bytes[0] = 'X';
    testutil::write_bytes(p, bytes);
    CHECK_THROWS_AS(read_features(p), FormatError);
  }
  SUBCASE("unknown version") {
    testutil::write_bytes(p, testutil::vfmf_bytes(1, 1, {1}, 0x02));
    CHECK_THROWS_AS(read_features(p), FormatError);
  }
  SUBCASE("short header") {
    testutil::write_bytes(p, "VFMF\x01\x01");
    CHECK_THROWS_AS(read_features(p), FormatError);
  }
  SUBCASE("empty declared shape") {
    testutil::write_bytes(p, testutil::vfmf_bytes(0, 4, {}));
    CHECK_THROWS_AS(read_features(p), DataError);
  }
  SUBCASE("non-finite payload") {
    testutil::write_bytes(p, testutil::vfmf_bytes(1, 2, {1.0f, NAN}));
    CHECK_THROWS_AS(read_features(p), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_features(dir / "absent.vfmf"), IoError);
  }
  SUBCASE("sidecar dimension disagrees") {
    testutil::write_bytes(p, testutil::vfmf_bytes(1, 2, {1, 2}));
    testutil::write_bytes(sidecar_path(p), R"({"dimension": 3})");
    CHECK_THROWS_AS(read_features(p), DataError);
  }
  SUBCASE("sidecar is not JSON") {
    testutil::write_bytes(p, testutil::vfmf_bytes(1, 2, {1, 2}));
    testutil::write_bytes(sidecar_path(p), "{not json");
    CHECK_THROWS_AS(read_features(p), FormatError);
  }
}

TEST_CASE("1x1 matrix occupies a 4-byte payload after the 13-byte header") {
  TempDir dir;
  const auto p = dir / "one.vfmf";
  write_features(FeatureMatrix(1, 1, {0.0}), {}, p);
  const auto bytes = testutil::read_bytes(p);
  CHECK(bytes.size() == 13 + 4);
  CHECK(bytes == testutil::vfmf_bytes(1, 1, {0.0f}));
}

TEST_CASE("write then read is bit-exact on float-representable matrices") {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = testutil::float_matrix(17, 5, seed);
    const auto p = dir / ("m" + std::to_string(seed) + ".vfmf");
    write_features(m, FeatureSetMetadata{"rt", 5, Normalization::L2, "unit-test"}, p);
    const auto [back, meta] = read_features(p);
    CHECK(back == m);
    CHECK(meta.name == "rt");
    CHECK(meta.normalization == Normalization::L2);
    CHECK(meta.source == "unit-test");
  }
}

TEST_CASE("writing rounds to binary32 and rejects overflow") {
  TempDir dir;
  const auto p = dir / "r.vfmf";
  write_features(FeatureMatrix(1, 2, {0.1, 1.0 / 3.0}), {}, p);
  const auto back = read_features(p).first;
  CHECK(back(0, 0) == static_cast<double>(0.1f));
  CHECK(back(0, 1) == static_cast<double>(1.0f / 3.0f));
  CHECK_THROWS_AS(write_features(FeatureMatrix(1, 1, {1e300}), {}, p), DataError);
  CHECK_THROWS_AS(write_features(FeatureMatrix(1, 2, {1, 2}), FeatureSetMetadata{"x", 3, {}, ""}, p),
                  DataError);
  CHECK_THROWS_AS(write_features(FeatureMatrix(1, 1, {1}), {}, dir / "no_such_dir" / "x.vfmf"),
                  IoError);
}

TEST_CASE("CSV ingestion") {
  TempDir dir;
  const auto p = dir / "f.csv";
  SUBCASE("well formed, with blank lines and CRLF") {
    testutil::write_bytes(p, "1.5, -2,3e2\r\n\n4,5,6\n");
    const auto m = read_features(p, FeatureFormat::Csv).first;
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(0, 0) == 1.5);
    CHECK(m(0, 1) == -2.0);
    CHECK(m(0, 2) == 300.0);
    CHECK(m(1, 2) == 6.0);
  }
  SUBCASE("ragged rows") {
    testutil::write_bytes(p, "1,2\n3\n");
    CHECK_THROWS_AS(read_features_csv(p), FormatError);
  }
  SUBCASE("junk") {
    testutil::write_bytes(p, "1,abc\n");
    CHECK_THROWS_AS(read_features_csv(p), FormatError);
  }
  SUBCASE("empty") {
    testutil::write_bytes(p, "\n\n");
    CHECK_THROWS_AS(read_features_csv(p), DataError);
  }
  SUBCASE("non-finite") {
    testutil::write_bytes(p, "1,inf\n");
    CHECK_THROWS_AS(read_features_csv(p), DataError);
  }
}

TEST_CASE("l2_normalize") {
  const auto m = l2_normalize(FeatureMatrix(1, 2, {3, 4}));
  CHECK(m(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(m(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  CHECK_THROWS_AS(l2_normalize(FeatureMatrix(2, 2, {1, 1, 0, 0})), DegenerateInputError);

  const auto r = testutil::gaussian_matrix(10, 8, 3);
  const auto n1 = l2_normalize(r);
  const auto n2 = l2_normalize(n1);
  for (std::size_t i = 0; i < r.rows(); ++i) {
    CHECK(std::abs(testutil::row_norm(n1.row(i)) - 1.0) < 1e-12);
    for (std::size_t j = 0; j < r.cols(); ++j) {
      CHECK(std::abs(n1(i, j) - n2(i, j)) < 1e-12);
      // Direction preserved: same sign and proportional to the input.
      CHECK(std::abs(n1(i, j) * testutil::row_norm(r.row(i)) - r(i, j)) < 1e-12);
    }
  }
  CHECK(apply_normalization(r, Normalization::None) == r);
}

TEST_CASE("score sets and normalisation names") {
  const std::vector<double> id = {3, 4}, ood = {1};
  const auto s = labelled_scores(id, ood, Orientation::HigherIsOod);
  REQUIRE(s.labels);
  CHECK(s.labels->size() == 3);
  CHECK((*s.labels)[2] == SampleLabel::Ood);
  CHECK(oriented_scores(s) == std::vector<double>{-3, -4, -1});

  ScoreSet bad{{1.0, NAN}, Orientation::HigherIsId, std::nullopt};
  CHECK_THROWS_AS(validate(bad), DataError);
  ScoreSet ragged{{1.0}, Orientation::HigherIsId, std::vector<SampleLabel>{}};
  CHECK_THROWS_AS(validate(ragged), ShapeError);

  CHECK(parse_normalization("l2") == Normalization::L2);
  CHECK(normalization_name(Normalization::None) == "none");
  CHECK_THROWS_AS(parse_normalization("l1"), ParameterError);
}
