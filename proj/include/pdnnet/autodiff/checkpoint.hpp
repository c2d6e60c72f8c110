#pragma once

// Checkpoint container:
//   PDNF1\n
//   <count>\n
//   then per entry: "<name> f64 <ndim> <d0> ... <dn-1>\n" followed by
//   numel * 8 bytes of little-endian IEEE doubles and a '\n'.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "../common.hpp"
#include "tensor.hpp"

namespace pdn::ad {

inline constexpr const char* kCheckpointMagic = "PDNF1";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

inline void put_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline double get_f64(const char* b) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedArray>& arrays) {
  std::ostringstream os;
  os << kCheckpointMagic << '\n' << arrays.size() << '\n';
  for (const auto& a : arrays) {
    if (a.name.empty() || a.name.find_first_of(" \t\n") != std::string::npos)
      throw DataError("checkpoint: bad parameter name '" + a.name + "'");
    if (numel(a.shape) != a.values.size()) throw DataError("checkpoint: shape/value mismatch for " + a.name);
    os << a.name << " f64 " << a.shape.size();
    for (auto d : a.shape) os << ' ' << d;
    os << '\n';
    for (double v : a.values) detail::put_f64(os, v);
    os << '\n';
  }
  return os.str();
}

inline std::vector<NamedArray> decode_checkpoint(const std::string& buf) {
  std::size_t pos = 0;
  auto line = [&]() {
    const auto nl = buf.find('\n', pos);
    if (nl == std::string::npos) throw DataError("checkpoint: truncated header");
    std::string s = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return s;
  };
  if (line() != kCheckpointMagic) throw DataError("checkpoint: missing PDNF1 header");
  std::size_t count = 0;
  {
    std::istringstream is(line());
    if (!(is >> count)) throw DataError("checkpoint: bad entry count");
  }
  std::vector<NamedArray> out;
  for (std::size_t k = 0; k < count; ++k) {
    NamedArray a;
    std::istringstream is(line());
    std::string dtype;
    std::size_t ndim = 0;
    if (!(is >> a.name >> dtype >> ndim) || dtype != "f64") throw DataError("checkpoint: bad entry header");
    a.shape.resize(ndim);
    for (auto& d : a.shape)
      if (!(is >> d)) throw DataError("checkpoint: bad shape for " + a.name);
    const std::size_t n = numel(a.shape);
    if (pos + n * 8 + 1 > buf.size()) throw DataError("checkpoint: truncated data for " + a.name);
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.values[i] = detail::get_f64(buf.data() + pos + 8 * i);
    pos += n * 8;
    if (buf[pos++] != '\n') throw DataError("checkpoint: corrupt entry " + a.name);
    out.push_back(std::move(a));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << encode_checkpoint(arrays);
  if (!f) throw DataError("write failed: " + path);
}

inline std::vector<NamedArray> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace pdn::ad
