#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "avf/dataio.hpp"
#include "avf/error.hpp"

namespace avf::data {

namespace {

constexpr char kMagic[4] = {'A', 'F', 'F', '1'};

std::uint32_t load_u32le(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

void store_u32le(std::uint32_t v, std::string& out) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

void FeatureSequence::validate() const {
  if (data.rows() < 1 || data.cols() < 1) {
    throw DataError("feature sequence must have at least one frame and one dimension");
  }
  if (!data.allFinite()) throw DataError("feature sequence contains a non-finite entry");
}

FeatureSequence read_feature_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = path.string() + ": ";

  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError(where + "bad magic (expected AFF1)");
  }
  const unsigned rank = p[4];
  if (rank != 1 && rank != 2) throw DataError(where + "unsupported rank " + std::to_string(rank));
  const std::size_t header = 5 + 4 * std::size_t{rank};
  if (bytes.size() < header) throw DataError(where + "truncated header");

  std::uint64_t rows = 1, cols = 0;
  if (rank == 1) {
    cols = load_u32le(p + 5);
  } else {
    rows = load_u32le(p + 5);
    cols = load_u32le(p + 9);
  }
  const std::uint64_t count = rows * cols;
  const std::uint64_t payload = bytes.size() - header;
  if (payload != count * 4) {
    throw DataError(where + "payload length mismatch: dims require " + std::to_string(count * 4) +
                    " bytes, found " + std::to_string(payload) +
                    (payload < count * 4 ? " (truncated)" : ""));
  }
  if (count == 0) throw DataError(where + "empty tensor");

  FeatureMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const unsigned char* src = p + header;
  for (std::uint64_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(load_u32le(src + 4 * i));
    if (!std::isfinite(v)) {
      throw DataError(where + "non-finite entry at flat index " + std::to_string(i));
    }
    m.data()[i] = v;
  }
  return FeatureSequence(std::move(m), static_cast<std::uint8_t>(rank));
}

void write_feature_tensor(const std::filesystem::path& path, const FeatureSequence& seq) {
  if (seq.rank != 1 && seq.rank != 2) throw DataError("rank must be 1 or 2");
  if (seq.rank == 1 && seq.frames() != 1) {
    throw DataError("rank-1 tensor must be stored as a single row");
  }
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(seq.rank));
  if (seq.rank == 2) store_u32le(static_cast<std::uint32_t>(seq.frames()), out);
  store_u32le(static_cast<std::uint32_t>(seq.dim()), out);
  out.reserve(out.size() + 4 * static_cast<std::size_t>(seq.data.size()));
  for (Eigen::Index i = 0; i < seq.data.size(); ++i) {
    store_u32le(std::bit_cast<std::uint32_t>(static_cast<float>(seq.data.data()[i])), out);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write tensor file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write on " + path.string());
}

}  // namespace avf::data
