#include "urbandit/array_io.hpp"

#include <array>
#include <fstream>
#include <numeric>

namespace urbandit {

namespace {
constexpr std::array<char, 4> kMagic{'U', 'D', 'A', '1'};
}

std::uint64_t DenseArray::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

void write_array(const std::filesystem::path& path, const std::vector<std::uint64_t>& shape, const double* data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open array file for writing: " + path.string());
  const auto rank = static_cast<std::uint32_t>(shape.size());
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  out.write(reinterpret_cast<const char*>(shape.data()), static_cast<std::streamsize>(shape.size() * sizeof(std::uint64_t)));
  const std::uint64_t n = std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw Error("failed writing array file: " + path.string());
}

DenseArray read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open array file: " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("not a dense array file (bad magic): " + path.string());
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof rank);
  if (!in || rank == 0 || rank > 8) throw Error("corrupt array header: " + path.string());
  DenseArray a;
  a.shape.resize(rank);
  in.read(reinterpret_cast<char*>(a.shape.data()), static_cast<std::streamsize>(rank * sizeof(std::uint64_t)));
  a.data.resize(a.element_count());
  in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  if (!in) throw Error("truncated array file: " + path.string());
  return a;
}

void write_matrix(const std::filesystem::path& path, const Mat& m) {
  write_array(path, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, m.data());
}

Mat read_matrix(const std::filesystem::path& path) {
  DenseArray a = read_array(path);
  if (a.shape.size() != 2) throw Error("expected a 2-D array in " + path.string());
  Mat m(static_cast<Index>(a.shape[0]), static_cast<Index>(a.shape[1]));
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

}  // namespace urbandit
