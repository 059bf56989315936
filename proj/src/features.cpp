#include "driftguard/features.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "driftguard/error.hpp"

namespace driftguard {

namespace {

constexpr std::array<char, 4> kMagic = {'V', 'F', 'M', 'F'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::size_t kHeaderSize = 4 + 1 + 4 + 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

FeatureSetMetadata default_metadata(const std::filesystem::path& path, std::size_t d) {
  FeatureSetMetadata meta;
  meta.name = path.stem().string();
  meta.dimension = d;
  return meta;
}

FeatureSetMetadata read_sidecar(const std::filesystem::path& path, std::size_t d) {
  auto meta = default_metadata(path, d);
  const auto side = sidecar_path(path);
  if (!std::filesystem::exists(side)) return meta;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(side));
    if (j.contains("name")) meta.name = j.at("name").get<std::string>();
    if (j.contains("dimension")) meta.dimension = j.at("dimension").get<std::size_t>();
    if (j.contains("normalization"))
      meta.normalization = parse_normalization(j.at("normalization").get<std::string>());
    if (j.contains("source")) meta.source = j.at("source").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sidecar " + side.string() + ": " + e.what());
  }
  if (meta.dimension != d) {
    throw DataError("sidecar dimension " + std::to_string(meta.dimension) +
                    " does not match file dimension " + std::to_string(d));
  }
  return meta;
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows_ == 0 || cols_ == 0) {
    throw DataError("feature matrix must have n >= 1 and d >= 1");
  }
  if (data_.size() != rows_ * cols_) {
    throw DataError("feature matrix holds " + std::to_string(data_.size()) +
                    " values, expected " + std::to_string(rows_ * cols_));
  }
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw DataError("non-finite value at row " + std::to_string(k / cols_) +
                      ", column " + std::to_string(k % cols_));
    }
  }
}

FeatureMatrix FeatureMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("feature matrix must have n >= 1");
  const std::size_t d = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw DataError("ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return FeatureMatrix(rows.size(), d, std::move(data));
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  std::vector<double> data;
  data.reserve(indices.size() * cols_);
  for (auto i : indices) {
    auto r = row(i);
    data.insert(data.end(), r.begin(), r.end());
  }
  return FeatureMatrix(indices.size(), cols_, std::move(data));
}

void validate(const ScoreSet& set) {
  for (double s : set.scores) {
    if (!std::isfinite(s)) throw DataError("non-finite score");
  }
  if (set.labels && set.labels->size() != set.scores.size()) {
    throw ShapeError("labels length does not match scores length");
  }
}

std::vector<double> oriented_scores(const ScoreSet& set) {
  std::vector<double> out = set.scores;
  if (set.orientation == Orientation::HigherIsOod) {
    for (auto& s : out) s = -s;
  }
  return out;
}

ScoreSet labelled_scores(std::span<const double> id_scores,
                         std::span<const double> ood_scores,
                         Orientation orientation) {
  ScoreSet set;
  set.orientation = orientation;
  set.scores.assign(id_scores.begin(), id_scores.end());
  set.scores.insert(set.scores.end(), ood_scores.begin(), ood_scores.end());
  std::vector<SampleLabel> labels(id_scores.size(), SampleLabel::Id);
  labels.resize(id_scores.size() + ood_scores.size(), SampleLabel::Ood);
  set.labels = std::move(labels);
  return set;
}

std::string normalization_name(Normalization n) {
  return n == Normalization::L2 ? "l2" : "none";
}

Normalization parse_normalization(const std::string& name) {
  if (name == "none" || name == "None") return Normalization::None;
  if (name == "l2" || name == "L2") return Normalization::L2;
  throw ParameterError("unknown normalization '" + name + "'");
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

std::pair<FeatureMatrix, FeatureSetMetadata> read_features(
    const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kHeaderSize ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError(path.string() + ": missing VFMF magic header");
  }
  if (p[4] != kVersion) {
    throw FormatError(path.string() + ": unsupported VFMF version " +
                      std::to_string(int(p[4])));
  }
  const std::size_t n = get_u32(p + 5);
  const std::size_t d = get_u32(p + 9);
  if (n == 0 || d == 0) throw DataError(path.string() + ": header declares an empty matrix");
  const std::size_t expected = kHeaderSize + n * d * 4;
  if (bytes.size() < expected) {
    throw DataError(path.string() + ": truncated payload, " +
                    std::to_string((bytes.size() - kHeaderSize) / 4) + " of " +
                    std::to_string(n * d) + " values present");
  }
  if (bytes.size() > expected) {
    throw DataError(path.string() + ": trailing bytes after payload");
  }
  std::vector<double> data(n * d);
  for (std::size_t k = 0; k < n * d; ++k) {
    data[k] = std::bit_cast<float>(get_u32(p + kHeaderSize + 4 * k));
  }
  FeatureMatrix matrix(n, d, std::move(data));
  return {std::move(matrix), read_sidecar(path, d)};
}

std::pair<FeatureMatrix, FeatureSetMetadata> read_features_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> data;
  std::size_t d = 0, n = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t fields = 0;
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      while (cur < end && (*cur == ' ' || *cur == '\t')) ++cur;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cur, end, v);
      if (ec != std::errc()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": expected a decimal number");
      }
      data.push_back(v);
      ++fields;
      cur = ptr;
      while (cur < end && (*cur == ' ' || *cur == '\t')) ++cur;
      if (cur == end) break;
      if (*cur != ',') {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": unexpected character");
      }
      ++cur;
    }
    if (d == 0) d = fields;
    if (fields != d) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": row has " +
                        std::to_string(fields) + " columns, expected " + std::to_string(d));
    }
    ++n;
  }
  if (n == 0) throw DataError(path.string() + ": no samples");
  FeatureMatrix matrix(n, d, std::move(data));
  return {std::move(matrix), default_metadata(path, d)};
}

std::pair<FeatureMatrix, FeatureSetMetadata> read_features(
    const std::filesystem::path& path, FeatureFormat format) {
  return format == FeatureFormat::Csv ? read_features_csv(path) : read_features(path);
}

void write_features(const FeatureMatrix& matrix, const FeatureSetMetadata& meta,
                    const std::filesystem::path& path) {
  if (matrix.empty()) throw DataError("cannot write an empty feature matrix");
  if (matrix.rows() > std::numeric_limits<std::uint32_t>::max() ||
      matrix.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError("matrix too large for the VFMF header");
  }
  if (meta.dimension != 0 && meta.dimension != matrix.cols()) {
    throw DataError("metadata dimension does not match matrix");
  }
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(matrix.cols()));
  out.reserve(kHeaderSize + matrix.values().size() * 4);
  for (double v : matrix.values()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw DataError("value overflows binary32");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open " + path.string() + " for writing");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("write failed for " + path.string());
  }

  nlohmann::json j = {
      {"name", meta.name.empty() ? path.stem().string() : meta.name},
      {"dimension", matrix.cols()},
      {"normalization", normalization_name(meta.normalization)},
      {"source", meta.source},
  };
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw IoError("cannot write sidecar for " + path.string());
  side << j.dump(2) << '\n';
}

FeatureMatrix l2_normalize(const FeatureMatrix& matrix) {
  std::vector<double> data(matrix.values().begin(), matrix.values().end());
  const std::size_t d = matrix.cols();
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    double* r = data.data() + i * d;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += r[j] * r[j];
    if (sq == 0.0) {
      throw DegenerateInputError("row " + std::to_string(i) + " is the zero vector");
    }
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) r[j] /= norm;
  }
  return FeatureMatrix(matrix.rows(), d, std::move(data));
}

FeatureMatrix apply_normalization(const FeatureMatrix& matrix, Normalization n) {
  return n == Normalization::L2 ? l2_normalize(matrix) : matrix;
}

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Data: return "DataError";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::DegenerateInput: return "DegenerateInputError";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Parameter: return "ParameterError";
    case ErrorKind::Convergence: return "ConvergenceError";
    case ErrorKind::Numerical: return "NumericalError";
    case ErrorKind::DegenerateFit: return "DegenerateFitError";
    case ErrorKind::Selection: return "SelectionError";
    case ErrorKind::GridSearch: return "GridSearchError";
    case ErrorKind::Train: return "TrainError";
    case ErrorKind::Metric: return "MetricError";
  }
  return "Error";
}

bool is_numerical_failure(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Convergence:
    case ErrorKind::Numerical:
    case ErrorKind::DegenerateFit:
    case ErrorKind::Selection:
    case ErrorKind::GridSearch:
    case ErrorKind::Train:
      return true;
    default:
      return false;
  }
}

}  // namespace driftguard
