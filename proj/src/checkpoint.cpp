#include "roifuse/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace roifuse::tensor {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  }
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& os, const ParameterSet& params) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.items()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
             static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, params);
}

std::vector<Parameter> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("not a parameter checkpoint (bad magic)");
  }
  const auto version = take<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = take<std::uint32_t>(is, "parameter count");
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated in parameter name");
    const auto rank = take<std::uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(is, "dimension");
    std::vector<double> values(numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint truncated in values of " + name);
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

std::vector<Parameter> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return read_checkpoint(is);
}

void assign_parameters(ParameterSet& params, const std::vector<Parameter>& values) {
  for (const auto& v : values) {
    if (!params.contains(v.name)) throw std::invalid_argument("checkpoint has unexpected parameter " + v.name);
  }
  for (auto& p : params.items()) {
    const Parameter* src = nullptr;
    for (const auto& v : values) {
      if (v.name == p.name) src = &v;
    }
    if (src == nullptr) throw std::invalid_argument("checkpoint is missing parameter " + p.name);
    if (src->tensor.shape() != p.tensor.shape()) {
      throw std::invalid_argument("parameter " + p.name + " has shape " + to_string(src->tensor.shape()) +
                                  " in checkpoint but " + to_string(p.tensor.shape()) + " in the model");
    }
    std::memcpy(p.tensor.mutable_data().data(), src->tensor.data().data(), p.tensor.size() * sizeof(double));
  }
}

}  // namespace roifuse::tensor
