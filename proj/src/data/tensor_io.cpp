#include "rstan/data/tensor_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <limits>

#include "rstan/core/binary_io.hpp"
#include "rstan/core/errors.hpp"

namespace rstan::data {

namespace {

constexpr std::array<char, 8> kMagic{'R', 'S', 'T', 'N', 'T', 'N', 'S', 'R'};
constexpr std::uint64_t kVersion = 1;
constexpr std::uint64_t kMaxRank = 16;

[[noreturn]] void fail(const std::filesystem::path& path, std::uint64_t offset, const std::string& what) {
  throw FormatError(path.string() + ": " + what + " at byte " + std::to_string(offset));
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContractError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  binary_io::write_u64(os, kVersion);
  binary_io::write_u64(os, t.rank());
  for (std::size_t d : t.shape()) binary_io::write_u64(os, d);
  binary_io::write_f64(os, t.data());
  if (!os) throw ContractError("write failed for " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size())) fail(path, std::uint64_t(is.gcount()), "truncated magic");
  if (magic != kMagic) fail(path, 0, "bad magic");
  std::uint64_t offset = magic.size();
  std::uint64_t version = 0, rank = 0;
  if (!binary_io::read_u64(is, version)) fail(path, offset, "truncated version");
  if (version != kVersion) fail(path, offset, "unsupported version " + std::to_string(version));
  offset += 8;
  if (!binary_io::read_u64(is, rank)) fail(path, offset, "truncated rank");
  if (rank > kMaxRank) fail(path, offset, "implausible rank " + std::to_string(rank));
  offset += 8;
  Shape shape(rank);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint64_t d = 0;
    if (!binary_io::read_u64(is, d)) fail(path, offset, "truncated dimension " + std::to_string(i));
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / 8 / d)
      fail(path, offset, "dimension overflow");
    shape[i] = d;
    count *= d;
    offset += 8;
  }
  const std::uint64_t file_size = std::filesystem::file_size(path);
  if (file_size < offset + 8 * count)
    fail(path, file_size, "truncated payload (" + std::to_string((file_size - offset) / 8) + " of " +
                              std::to_string(count) + " values)");
  std::vector<double> values(count);
  const std::size_t got = binary_io::read_f64(is, values);
  if (got != count)
    fail(path, offset + 8 * got, "truncated payload (" + std::to_string(got) + " of " + std::to_string(count) +
                                     " values)");
  if (is.peek() != std::ifstream::traits_type::eof()) fail(path, offset + 8 * count, "trailing bytes");
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace rstan::data
