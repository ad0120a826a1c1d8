#pragma once

// Dense array files: 4-byte magic "UDA1", uint32 rank, rank x uint64 dims,
// then prod(dims) little-endian float64 values in row-major order.

#include "urbandit/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace urbandit {

struct DenseArray {
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

void write_array(const std::filesystem::path& path, const std::vector<std::uint64_t>& shape, const double* data);
DenseArray read_array(const std::filesystem::path& path);

/// 2-D convenience wrappers.
void write_matrix(const std::filesystem::path& path, const Mat& m);
Mat read_matrix(const std::filesystem::path& path);

}  // namespace urbandit
