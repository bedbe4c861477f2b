#ifndef CONTEXT_TRACKER_CWB_HPP
#define CONTEXT_TRACKER_CWB_HPP

// CWB weight bundle:
//   bytes 0-3   "CWB1"
//   bytes 4-7   header length L, uint32 little-endian
//   bytes 8..   L bytes of UTF-8 JSON: [{name, dtype:"f32", shape, offset, nbytes}, ...]
//   then raw little-endian float32 blobs, row-major; offsets are relative to
//   the first byte after the header.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "context_tracker/errors.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::cwb {

static_assert(std::endian::native == std::endian::little, "CWB I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'C', 'W', 'B', '1'};

struct Entry {
  std::string name;
  Tensor tensor;
};

inline void write(const std::filesystem::path& path, const std::vector<Entry>& entries) {
  nlohmann::json header = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    const std::uint64_t nbytes = e.tensor.size() * sizeof(float);
    header.push_back({{"name", e.name}, {"dtype", "f32"}, {"shape", e.tensor.shape()}, {"offset", offset},
                      {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError(LoadError::Kind::Io, "cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  unsigned char lenbuf[4] = {static_cast<unsigned char>(len & 0xff), static_cast<unsigned char>((len >> 8) & 0xff),
                             static_cast<unsigned char>((len >> 16) & 0xff),
                             static_cast<unsigned char>((len >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(lenbuf), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries) {
    os.write(reinterpret_cast<const char*>(e.tensor.ptr()), static_cast<std::streamsize>(e.tensor.size() * sizeof(float)));
  }
  if (!os) throw LoadError(LoadError::Kind::Io, "failed writing " + path.string());
}

inline std::vector<Entry> read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(LoadError::Kind::Io, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw LoadError(LoadError::Kind::Truncated, path.string() + ": file shorter than CWB preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw LoadError(LoadError::Kind::BadMagic, path.string() + ": bad magic");
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t len = static_cast<std::uint64_t>(u[4]) | (static_cast<std::uint64_t>(u[5]) << 8) |
                            (static_cast<std::uint64_t>(u[6]) << 16) | (static_cast<std::uint64_t>(u[7]) << 24);
  if (8 + len > bytes.size()) {
    throw LoadError(LoadError::Kind::Truncated, path.string() + ": header length " + std::to_string(len) +
                                                    " exceeds file size " + std::to_string(bytes.size()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::BadHeader, path.string() + ": header is not valid JSON: " + e.what());
  }
  if (!header.is_array()) throw LoadError(LoadError::Kind::BadHeader, path.string() + ": header must be a JSON array");

  const std::uint64_t data_start = 8 + len;
  const std::uint64_t data_size = bytes.size() - data_start;
  std::vector<Entry> out;
  for (const auto& item : header) {
    Entry e;
    Shape shape;
    std::uint64_t offset = 0, nbytes = 0;
    try {
      e.name = item.at("name").get<std::string>();
      if (item.at("dtype").get<std::string>() != "f32") {
        throw LoadError(LoadError::Kind::BadHeader, path.string() + ": entry '" + e.name + "' has unsupported dtype");
      }
      shape = item.at("shape").get<Shape>();
      offset = item.at("offset").get<std::uint64_t>();
      nbytes = item.at("nbytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError(LoadError::Kind::BadHeader, path.string() + ": malformed entry: " + ex.what());
    }
    if (shape.empty() || shape_size(shape) * sizeof(float) != nbytes) {
      throw LoadError(LoadError::Kind::BadHeader, path.string() + ": entry '" + e.name + "' nbytes disagrees with shape");
    }
    if (offset + nbytes > data_size) {
      throw LoadError(LoadError::Kind::Truncated, path.string() + ": blob '" + e.name + "' runs past end of file");
    }
    std::vector<float> data(shape_size(shape));
    std::memcpy(data.data(), bytes.data() + data_start + offset, nbytes);
    for (const float v : data) {
      if (!std::isfinite(v)) throw LoadError(LoadError::Kind::NonFinite, path.string() + ": blob '" + e.name + "' has NaN/Inf");
    }
    e.tensor = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace context_tracker::cwb

#endif  // CONTEXT_TRACKER_CWB_HPP
