#include "bdl/bdtf.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace bdl {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("bdtf: truncated header");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_bdtf(std::ostream& os, const Tensor& tensor) {
  if (tensor.rank() > 255) throw FormatError("bdtf: rank above 255");
  os.write("BDTF", 4);
  os.put(static_cast<char>(kBdtfVersion));
  os.put(0);
  os.put(static_cast<char>(tensor.rank()));
  for (auto e : tensor.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("bdtf: extent exceeds u32");
    put_u32(os, static_cast<std::uint32_t>(e));
  }
  for (float v : tensor.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw FormatError("bdtf: write failed");
}

Tensor read_bdtf(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || std::memcmp(magic.data(), "BDTF", 4) != 0) throw FormatError("bdtf: bad magic");
  const int version = is.get();
  const int dtype = is.get();
  const int rank = is.get();
  if (!is) throw FormatError("bdtf: truncated header");
  if (version != kBdtfVersion) throw FormatError("bdtf: unsupported version " + std::to_string(version));
  if (dtype != 0) throw FormatError("bdtf: unsupported dtype " + std::to_string(dtype));
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const auto e = get_u32(is);
    if (e == 0) throw FormatError("bdtf: zero extent");
    shape.push_back(e);
  }
  std::vector<float> data(shape_numel(shape));
  std::vector<unsigned char> bytes(data.size() * 4);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError("bdtf: truncated payload");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const unsigned char* b = bytes.data() + 4 * i;
    const std::uint32_t u = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
                            (std::uint32_t{b[3]} << 24);
    data[i] = std::bit_cast<float>(u);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_bdtf(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("bdtf: cannot open " + path.string() + " for writing");
  write_bdtf(os, tensor);
}

Tensor load_bdtf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("bdtf: cannot open " + path.string());
  return read_bdtf(is);
}

}  // namespace bdl
