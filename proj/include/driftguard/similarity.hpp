#pragma once

#include <span>
#include <vector>

#include "driftguard/features.hpp"
#include "driftguard/model_io.hpp"

namespace driftguard {

// Cosine similarity clamped to [-1, 1]. Throws DegenerateInputError on a zero
// vector and ShapeError on a dimension mismatch.
double cosine(std::span<const double> a, std::span<const double> b);

/// Average pairwise similarity: the full reference set with cached row norms.
struct ApsModel {
  FeatureMatrix reference;
  std::vector<double> reference_norms;
};

/// Mean feature similarity: only the mean training vector is kept.
struct MfsModel {
  std::vector<double> mean_vector;
  double mean_norm = 0.0;
};

ApsModel fit_aps(const FeatureMatrix& train);
ScoreSet score_aps(const ApsModel& model, const FeatureMatrix& query);

MfsModel fit_mfs(const FeatureMatrix& train);
ScoreSet score_mfs(const MfsModel& model, const FeatureMatrix& query);

void to_archive(const ApsModel& model, ModelArchive& archive);
ApsModel aps_from_archive(const ModelArchive& archive);
void to_archive(const MfsModel& model, ModelArchive& archive);
MfsModel mfs_from_archive(const ModelArchive& archive);

}  // namespace driftguard
