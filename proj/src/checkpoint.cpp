#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "igpn/model.hpp"

namespace igpn {

namespace {

constexpr char kMagic[8] = {'I', 'G', 'P', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& path) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw IoError("truncated checkpoint " + path);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& path) {
  const auto n = get<std::uint64_t>(in, path);
  if (n > (1ull << 32)) throw IoError("corrupt string length in " + path);
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint " + path);
  return s;
}

template <typename T>
void put_tensor(std::ostream& out, const Tensor<T>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  for (T v : t.data()) put<T>(out, v);
}

template <typename T>
Tensor<T> get_tensor(std::istream& in, const std::string& path) {
  const auto rank = get<std::uint32_t>(in, path);
  if (rank > 8) throw IoError("corrupt tensor rank in " + path);
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint64_t>(in, path);
  const std::size_t n = element_count(shape);
  if (n > (1ull << 31)) throw IoError("corrupt tensor size in " + path);
  std::vector<T> data(n);
  for (auto& v : data) v = get<T>(in, path);
  return Tensor<T>(shape, std::move(data));
}

std::ifstream open_checkpoint(const std::string& path, std::uint32_t& scalar_bytes, std::string& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path + " is not an IGPN checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  scalar_bytes = get<std::uint32_t>(in, path);
  config = get_string(in, path);
  return in;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, sizeof(T));
  put_string(out, model.config().to_json());
  const auto& params = model.params();
  put<std::uint64_t>(out, params.names().size());
  for (const auto& name : params.names()) {
    put_string(out, name);
    put<std::uint8_t>(out, params.kind(name) == ParamKind::norm ? 1 : 0);
    put_tensor(out, params.value(name));
  }
  put<std::uint64_t>(out, params.state_names().size());
  for (const auto& name : params.state_names()) {
    put_string(out, name);
    put_tensor(out, params.state(name));
  }
  out.flush();
  if (!out) throw IoError("failed writing checkpoint " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::uint32_t scalar_bytes = 0;
  std::string config_text;
  auto in = open_checkpoint(path, scalar_bytes, config_text);
  if (scalar_bytes != sizeof(T)) {
    throw IoError("checkpoint " + path + " stores " + std::to_string(scalar_bytes * 8) + "-bit scalars, expected " +
                  std::to_string(sizeof(T) * 8));
  }
  const auto config = ModelConfig::from_json(config_text);
  ParameterSet<T> params;
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_string(in, path);
    const auto kind = get<std::uint8_t>(in, path) ? ParamKind::norm : ParamKind::weight;
    params.add(name, get_tensor<T>(in, path), kind);
  }
  const auto states = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < states; ++i) {
    auto name = get_string(in, path);
    params.add_state(name, get_tensor<T>(in, path));
  }
  return Model<T>::from_parameters(config, std::move(params));
}

ModelConfig read_checkpoint_config(const std::string& path) {
  std::uint32_t scalar_bytes = 0;
  std::string config_text;
  open_checkpoint(path, scalar_bytes, config_text);
  return ModelConfig::from_json(config_text);
}

std::size_t checkpoint_scalar_bytes(const std::string& path) {
  std::uint32_t scalar_bytes = 0;
  std::string config_text;
  open_checkpoint(path, scalar_bytes, config_text);
  return scalar_bytes;
}

template void save_checkpoint(const Model<float>&, const std::string&);
template void save_checkpoint(const Model<double>&, const std::string&);
template Model<float> load_checkpoint(const std::string&);
template Model<double> load_checkpoint(const std::string&);

}  // namespace igpn
