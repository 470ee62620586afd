#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"

namespace stela {

// Parameter checkpoint container: version byte, then length-prefixed named
// tensors with u64 dims and float64 payloads, all little-endian.
inline constexpr std::uint8_t kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t s : shape) n *= s;
    return n;
  }
};

template <class S>
NamedTensor tensor_from_matrix(const std::string& name, const MatX<S>& m) {
  NamedTensor t;
  t.name = name;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<double>(m(r, c)));
  return t;
}

template <class S>
NamedTensor tensor_from_vector(const std::string& name, const VecX<S>& v) {
  NamedTensor t;
  t.name = name;
  t.shape = {static_cast<std::uint64_t>(v.size())};
  t.data.reserve(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<double>(v(i)));
  return t;
}

template <class S>
MatX<S> matrix_from_tensor(const NamedTensor& t) {
  if (t.shape.size() != 2) throw FormatError("tensor " + t.name + " is not 2-D");
  MatX<S> m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  std::size_t p = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(t.data[p++]);
  return m;
}

template <class S>
VecX<S> vector_from_tensor(const NamedTensor& t) {
  if (t.shape.size() != 1) throw FormatError("tensor " + t.name + " is not 1-D");
  VecX<S> v(static_cast<Eigen::Index>(t.shape[0]));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<S>(t.data[i]);
  return v;
}

inline std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::vector<char> bytes;
  bytes.push_back(static_cast<char>(kCheckpointFormatVersion));
  auto append = [&bytes](const void* src, std::size_t len) {
    const char* p = static_cast<const char*>(src);
    bytes.insert(bytes.end(), p, p + len);
  };
  const std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
  append(&count, 4);
  for (const NamedTensor& t : tensors) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(t.name.size());
    append(&name_len, 4);
    append(t.name.data(), t.name.size());
    const std::uint32_t ndim = static_cast<std::uint32_t>(t.shape.size());
    append(&ndim, 4);
    for (std::uint64_t dim : t.shape) append(&dim, 8);
    if (t.data.size() != t.element_count())
      throw UsageError("tensor " + t.name + ": payload does not match shape");
    append(t.data.data(), t.data.size() * 8);
  }
  return bytes;
}

inline std::vector<NamedTensor> decode_checkpoint(const char* data, std::size_t size) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t len) {
    if (pos + len > size) throw FormatError("checkpoint: truncated payload");
    std::memcpy(dst, data + pos, len);
    pos += len;
  };
  std::uint8_t version;
  take(&version, 1);
  if (version != kCheckpointFormatVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t count;
  take(&count, 4);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::uint32_t name_len;
    take(&name_len, 4);
    t.name.resize(name_len);
    take(t.name.data(), name_len);
    std::uint32_t ndim;
    take(&ndim, 4);
    t.shape.resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) take(&t.shape[d], 8);
    t.data.resize(t.element_count());
    take(t.data.data(), t.data.size() * 8);
    tensors.push_back(std::move(t));
  }
  if (pos != size) throw FormatError("checkpoint: trailing bytes");
  return tensors;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const std::vector<NamedTensor>& tensors) {
  const std::vector<char> bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes.data(), bytes.size());
}

// Name-indexed view over a decoded checkpoint.
class TensorMap {
 public:
  explicit TensorMap(std::vector<NamedTensor> tensors) : tensors_(std::move(tensors)) {}

  const NamedTensor& at(const std::string& name) const {
    for (const NamedTensor& t : tensors_)
      if (t.name == name) return t;
    throw FormatError("checkpoint: missing tensor " + name);
  }

  bool contains(const std::string& name) const {
    for (const NamedTensor& t : tensors_)
      if (t.name == name) return true;
    return false;
  }

 private:
  std::vector<NamedTensor> tensors_;
};

}  // namespace stela
