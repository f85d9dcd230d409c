#pragma once

#include <filesystem>
#include <iosfwd>

#include "bdl/tensor.hpp"

namespace bdl {

// Portable tensor file:
//   "BDTF" | version u8 (=1) | dtype u8 (0 = f32) | rank u8 | rank x u32 LE extents | f32 LE payload

inline constexpr unsigned char kBdtfVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_bdtf(std::ostream& os, const Tensor& tensor);
Tensor read_bdtf(std::istream& is);

void save_bdtf(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_bdtf(const std::filesystem::path& path);

}  // namespace bdl
