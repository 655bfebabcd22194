// SPDX-License-Identifier: Apache-2.0
#include "tdae/checkpoint.hpp"

#include <array>
#include <fstream>

#include "binary_io.hpp"

namespace tdae {

namespace {

using detail::get_le;
using detail::get_string;
using detail::put_le;

constexpr std::array<char, 8> kMagic{'T', 'D', 'A', 'E', 'C', 'K', 'P', 'T'};

}  // namespace

template <typename Scalar>
void write_checkpoint(const std::filesystem::path& path, const ParameterSet<Scalar>& params,
                      const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (Index d : p.value.shape()) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < p.value.size(); ++i) put_le<double>(os, static_cast<double>(p.value[i]));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ConfigError("not a checkpoint file: " + path.string());
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.metadata = get_string(is, get_le<std::uint32_t>(is));
  const auto count = get_le<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = get_string(is, get_le<std::uint32_t>(is));
    const auto rank = get_le<std::uint32_t>(is);
    if (rank > 8) throw ConfigError("checkpoint tensor '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(get_le<std::uint64_t>(is)));
    Tensor<double> t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = get_le<double>(is);
    ck.params.add(std::move(name), std::move(t));
  }
  return ck;
}

template void write_checkpoint<double>(const std::filesystem::path&, const ParameterSet<double>&, const std::string&);
template void write_checkpoint<float>(const std::filesystem::path&, const ParameterSet<float>&, const std::string&);

}  // namespace tdae
