#include "driftguard/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "driftguard/error.hpp"
#include "driftguard/kernels.hpp"

namespace driftguard {

namespace {

void require_dimension(std::size_t expected, const FeatureMatrix& query) {
  if (query.cols() != expected) {
    throw ShapeError("query dimension " + std::to_string(query.cols()) +
                     " does not match model dimension " + std::to_string(expected));
  }
}

void require_nonzero_rows(const FeatureMatrix& m, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    if (std::all_of(r.begin(), r.end(), [](double v) { return v == 0.0; })) {
      throw DegenerateInputError(std::string(what) + " row " + std::to_string(i) +
                                 " is the zero vector");
    }
  }
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different dimensions");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw DegenerateInputError("cosine of a zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

ApsModel fit_aps(const FeatureMatrix& train) {
  require_nonzero_rows(train, "training");
  ApsModel model{train, std::vector<double>(train.rows())};
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const auto r = train.row(i);
    double sq = 0.0;
    for (double v : r) sq += v * v;
    model.reference_norms[i] = std::sqrt(sq);
  }
  return model;
}

ScoreSet score_aps(const ApsModel& model, const FeatureMatrix& query) {
  require_dimension(model.reference.cols(), query);
  require_nonzero_rows(query, "query");
  ScoreSet out;
  out.scores.resize(query.rows());
  kernels::omp::mean_cosine(model.reference, model.reference_norms, query, out.scores);
  return out;
}

MfsModel fit_mfs(const FeatureMatrix& train) {
  MfsModel model;
  model.mean_vector.assign(train.cols(), 0.0);
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const auto r = train.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) model.mean_vector[j] += r[j];
  }
  double sq = 0.0;
  for (auto& v : model.mean_vector) {
    v /= static_cast<double>(train.rows());
    sq += v * v;
  }
  model.mean_norm = std::sqrt(sq);
  if (model.mean_norm == 0.0) throw DegenerateInputError("mean feature vector is zero");
  return model;
}

ScoreSet score_mfs(const MfsModel& model, const FeatureMatrix& query) {
  require_dimension(model.mean_vector.size(), query);
  require_nonzero_rows(query, "query");
  ScoreSet out;
  out.scores.resize(query.rows());
  kernels::omp::cosine_to(model.mean_vector, query, out.scores);
  return out;
}

void to_archive(const ApsModel& model, ModelArchive& archive) {
  archive.header["method"] = "aps";
  archive.header["dimension"] = model.reference.cols();
  archive.header["reference_rows"] = model.reference.rows();
  archive.put("reference", model.reference.rows(), model.reference.cols(),
              {model.reference.values().begin(), model.reference.values().end()});
  archive.put("reference_norms", model.reference.rows(), 1, model.reference_norms);
}

ApsModel aps_from_archive(const ModelArchive& archive) {
  const auto d = header_field<std::size_t>(archive, "dimension");
  const auto n = header_field<std::size_t>(archive, "reference_rows");
  const Block& ref = archive.get("reference", n, d);
  const Block& norms = archive.get("reference_norms", n, 1);
  ApsModel model{FeatureMatrix(n, d, ref.values), norms.values};
  for (double v : model.reference_norms) {
    if (!(v > 0.0)) throw FormatError("APS model has a non-positive reference norm");
  }
  return model;
}

void to_archive(const MfsModel& model, ModelArchive& archive) {
  archive.header["method"] = "mfs";
  archive.header["dimension"] = model.mean_vector.size();
  archive.header["mean_vector"] = model.mean_vector;
}

MfsModel mfs_from_archive(const ModelArchive& archive) {
  MfsModel model;
  model.mean_vector = header_field<std::vector<double>>(archive, "mean_vector");
  if (model.mean_vector.size() != header_field<std::size_t>(archive, "dimension")) {
    throw FormatError("MFS mean vector length does not match dimension");
  }
  double sq = 0.0;
  for (double v : model.mean_vector) sq += v * v;
  model.mean_norm = std::sqrt(sq);
  if (model.mean_norm == 0.0) throw FormatError("MFS mean vector is zero");
  return model;
}

}  // namespace driftguard
