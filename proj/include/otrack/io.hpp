#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "otrack/tensor.hpp"

namespace otrack {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All binary containers are little-endian flat layouts.
static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

namespace io {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != sizeof(T)) throw FormatError(std::string("truncated payload: ") + what);
  return v;
}

inline void write_u16(std::ostream& os, uint16_t v) { write_pod(os, v); }
inline void write_u32(std::ostream& os, uint32_t v) { write_pod(os, v); }
inline void write_u64(std::ostream& os, uint64_t v) { write_pod(os, v); }
inline void write_i32(std::ostream& os, int32_t v) { write_pod(os, v); }
inline void write_f32(std::ostream& os, float v) { write_pod(os, v); }
inline void write_f64(std::ostream& os, double v) { write_pod(os, v); }
inline uint16_t read_u16(std::istream& is) { return read_pod<uint16_t>(is, "u16"); }
inline uint32_t read_u32(std::istream& is) { return read_pod<uint32_t>(is, "u32"); }
inline uint64_t read_u64(std::istream& is) { return read_pod<uint64_t>(is, "u64"); }
inline int32_t read_i32(std::istream& is) { return read_pod<int32_t>(is, "i32"); }
inline float read_f32(std::istream& is) { return read_pod<float>(is, "f32"); }
inline double read_f64(std::istream& is) { return read_pod<double>(is, "f64"); }

inline void write_magic(std::ostream& os, const char magic[5]) { os.write(magic, 4); }

inline void check_magic(std::istream& is, const char magic[5], const char* what) {
  char buf[4];
  is.read(buf, 4);
  if (is.gcount() != 4 || std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string(what) + ": magic mismatch");
}

template <typename T>
void write_array(std::ostream& os, std::span<const T> v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_array(std::istream& is, std::span<T> v, const char* what) {
  const std::streamsize bytes = static_cast<std::streamsize>(v.size() * sizeof(T));
  is.read(reinterpret_cast<char*>(v.data()), bytes);
  if (is.gcount() != bytes) throw FormatError(std::string("truncated payload: ") + what);
}

inline void write_f32_array(std::ostream& os, std::span<const float> v) { write_array(os, v); }
inline void write_u16_array(std::ostream& os, std::span<const uint16_t> v) { write_array(os, v); }
inline void write_i32_array(std::ostream& os, std::span<const int32_t> v) { write_array(os, v); }
inline void write_f64_array(std::ostream& os, std::span<const double> v) { write_array(os, v); }
inline void read_f32_array(std::istream& is, std::span<float> v, const char* what) {
  read_array(is, v, what);
}
inline void read_u16_array(std::istream& is, std::span<uint16_t> v, const char* what) {
  read_array(is, v, what);
}
inline void read_i32_array(std::istream& is, std::span<int32_t> v, const char* what) {
  read_array(is, v, what);
}
inline void read_f64_array(std::istream& is, std::span<double> v, const char* what) {
  read_array(is, v, what);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  const uint32_t len = read_u32(is);
  if (len > (1u << 24)) throw FormatError(std::string("implausible string length: ") + what);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (is.gcount() != static_cast<std::streamsize>(len))
    throw FormatError(std::string("truncated payload: ") + what);
  return s;
}

}  // namespace io

// debugging dump: shape header + row-major payload, little-endian
template <typename S>
void write_tensor(const std::string& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("write_tensor: cannot open " + path);
  io::write_magic(os, "OTEN");
  io::write_u32(os, 1);
  io::write_u32(os, sizeof(S));
  io::write_u32(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) io::write_u32(os, static_cast<uint32_t>(t.dim(i)));
  io::write_array(os, t.data());
}

template <typename S>
Tensor<S> read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_tensor: cannot open " + path);
  io::check_magic(is, "OTEN", "tensor");
  if (io::read_u32(is) != 1) throw FormatError("read_tensor: unsupported version");
  if (io::read_u32(is) != sizeof(S)) throw FormatError("read_tensor: scalar width mismatch");
  const uint32_t rank = io::read_u32(is);
  if (rank > 8) throw FormatError("read_tensor: implausible rank");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int>(io::read_u32(is));
  std::vector<S> data(static_cast<size_t>(shape_numel(shape)));
  io::read_array(is, std::span<S>(data), "tensor payload");
  return Tensor<S>::from(std::move(shape), std::move(data));
}

}  // namespace otrack
