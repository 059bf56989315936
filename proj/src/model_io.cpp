#include "driftguard/model_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "driftguard/error.hpp"

namespace driftguard {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'M', 'D'};
constexpr std::uint8_t kVersion = 0x01;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

void ModelArchive::put(const std::string& name, std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw DataError("block '" + name + "' has " + std::to_string(values.size()) +
                    " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!blocks.contains(name)) order.push_back(name);
  blocks[name] = Block{rows, cols, std::move(values)};
}

const Block& ModelArchive::get(const std::string& name) const {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw FormatError("model is missing block '" + name + "'");
  return it->second;
}

const Block& ModelArchive::get(const std::string& name, std::size_t rows,
                               std::size_t cols) const {
  const Block& b = get(name);
  if (b.rows != rows || b.cols != cols) {
    throw FormatError("block '" + name + "' has shape " + std::to_string(b.rows) + "x" +
                      std::to_string(b.cols) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  return b;
}

void write_archive(const ModelArchive& archive, const std::filesystem::path& path) {
  nlohmann::json header = archive.header;
  header["blocks"] = nlohmann::json::array();
  for (const auto& name : archive.order) {
    const Block& b = archive.blocks.at(name);
    header["blocks"].push_back({{"name", name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  const std::string text = header.dump();

  std::string out(kMagic, kMagic + 4);
  out.push_back(static_cast<char>(kVersion));
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  for (const auto& name : archive.order) {
    for (double v : archive.blocks.at(name).values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path.string());
}

ModelArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = std::move(buf).str();
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 9 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a driftguard model file");
  }
  if (p[4] != kVersion) throw FormatError(path.string() + ": unsupported model version");
  const std::size_t len = std::size_t(p[5]) | (std::size_t(p[6]) << 8) |
                          (std::size_t(p[7]) << 16) | (std::size_t(p[8]) << 24);
  if (bytes.size() < 9 + len) throw FormatError(path.string() + ": truncated model header");

  ModelArchive archive;
  try {
    archive.header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed model header: " + e.what());
  }

  std::size_t offset = 9 + len;
  try {
    for (const auto& entry : archive.header.at("blocks")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      const std::size_t count = rows * cols;
      if (bytes.size() < offset + count * 8) {
        throw DataError(path.string() + ": truncated block '" + name + "'");
      }
      std::vector<double> values(count);
      for (std::size_t k = 0; k < count; ++k) {
        values[k] = std::bit_cast<double>(get_u64(p + offset + 8 * k));
      }
      offset += count * 8;
      archive.put(name, rows, cols, std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed block table: " + e.what());
  }
  if (offset != bytes.size()) throw DataError(path.string() + ": trailing bytes in model file");
  archive.header.erase("blocks");
  return archive;
}

}  // namespace driftguard
