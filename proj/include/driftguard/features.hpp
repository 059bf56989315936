#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace driftguard {

// Dense n x d matrix of feature vectors, row-major, double precision.
// Every entry is finite and both dimensions are at least one.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  // Throws DataError on an empty shape, a size mismatch or a non-finite entry.
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }
  std::span<const double> values() const noexcept { return data_; }

  // Rows selected by index, in the given order.
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class SampleLabel { Id, Ood };

enum class Orientation { HigherIsId, HigherIsOod };

struct ScoreSet {
  std::vector<double> scores;
  Orientation orientation = Orientation::HigherIsId;
  std::optional<std::vector<SampleLabel>> labels;

  std::size_t size() const noexcept { return scores.size(); }
};

// Checks that scores are finite and that labels, when present, match in length.
void validate(const ScoreSet& set);

// Copy of the scores flipped, if needed, so that higher means more ID.
std::vector<double> oriented_scores(const ScoreSet& set);

// Joins ID and OOD scores (in that order) into a labelled set.
ScoreSet labelled_scores(std::span<const double> id_scores,
                         std::span<const double> ood_scores,
                         Orientation orientation = Orientation::HigherIsId);

enum class Normalization { None, L2 };

std::string normalization_name(Normalization n);
Normalization parse_normalization(const std::string& name);

struct FeatureSetMetadata {
  std::string name;
  std::size_t dimension = 0;
  Normalization normalization = Normalization::None;
  std::string source;
};

enum class FeatureFormat { Vfmf, Csv };

// Reads a VFMF interchange file plus its optional `<path>.meta.json` sidecar.
std::pair<FeatureMatrix, FeatureSetMetadata> read_features(
    const std::filesystem::path& path);

// Reads one sample per line of comma-separated decimals.
std::pair<FeatureMatrix, FeatureSetMetadata> read_features_csv(
    const std::filesystem::path& path);

std::pair<FeatureMatrix, FeatureSetMetadata> read_features(
    const std::filesystem::path& path, FeatureFormat format);

// Writes the VFMF file and the metadata sidecar. Values are stored as
// binary32, so only float-representable matrices round-trip bit-exactly.
void write_features(const FeatureMatrix& matrix, const FeatureSetMetadata& meta,
                    const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

FeatureMatrix l2_normalize(const FeatureMatrix& matrix);

FeatureMatrix apply_normalization(const FeatureMatrix& matrix, Normalization n);

}  // namespace driftguard
