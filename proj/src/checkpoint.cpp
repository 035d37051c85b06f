#include <fstream>

#include "binary_io.hpp"
#include "rppg/graph.hpp"

namespace rppg::graph {

namespace {
constexpr std::uint32_t kVersion = 1;
}

// Layout: "PLCK", u32 version, then per parameter:
//   u32 name length, name bytes, u32 rank, u64 extents[rank], f64 values.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write("PLCK", 4);
  io::write_le<std::uint32_t>(os, kVersion);
  for (const auto& p : params) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) io::write_le<std::uint64_t>(os, e);
    for (double v : p.value.data()) io::write_le<double>(os, v);
  }
  if (!os) throw Error("failed writing " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::expect_magic(is, "PLCK", path.string());
  const auto version = io::read_le<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw FormatError(path.string() + ": unsupported PLCK version " + std::to_string(version));
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = io::read_le<std::uint32_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated file while reading name");
    const auto rank = io::read_le<std::uint32_t>(is, "rank");
    if (rank > 5) throw FormatError(path.string() + ": rank " + std::to_string(rank) + " > 5");
    Shape shape(rank);
    for (auto& e : shape) e = io::read_le<std::uint64_t>(is, "extent");
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = io::read_le<double>(is, "values of " + name);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

}  // namespace rppg::graph
