#pragma once

// Model container: magic `DGMD`, version byte, u32 header length, a UTF-8
// JSON header, then the binary blocks listed in header["blocks"] in order.
// Each block is rows * cols little-endian binary64 values, row-major.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace driftguard {

struct Block {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

struct ModelArchive {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Block> blocks;
  std::vector<std::string> order;  // block write order

  void put(const std::string& name, std::size_t rows, std::size_t cols,
           std::vector<double> values);
  // Throws FormatError when the block is missing or has the wrong shape.
  const Block& get(const std::string& name) const;
  const Block& get(const std::string& name, std::size_t rows, std::size_t cols) const;
};

void write_archive(const ModelArchive& archive, const std::filesystem::path& path);
ModelArchive read_archive(const std::filesystem::path& path);

// Reads a required header field, turning JSON errors into FormatError.
template <typename T>
T header_field(const ModelArchive& archive, const std::string& key);

}  // namespace driftguard

#include "driftguard/error.hpp"

namespace driftguard {

template <typename T>
T header_field(const ModelArchive& archive, const std::string& key) {
  try {
    return archive.header.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model header field '" + key + "': " + e.what());
  }
}

}  // namespace driftguard
