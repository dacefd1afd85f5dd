#include "blocknas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "blocknas/error.hpp"

namespace blocknas {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'B', 'N', 'A', 'S', 'C', 'K', 'P', 'T'};

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::ifstream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw DataError("checkpoint " + path + " truncated at offset " + std::to_string(static_cast<long long>(in.tellg())));
  return v;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name, TensorRole role) const {
  for (const auto& t : tensors)
    if (t.role == role && t.name == name) return &t;
  return nullptr;
}

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, std::vector<NamedTensor> auxiliary) {
  Checkpoint c;
  c.graph_hash = graph_hash(net.graph());
  for (const auto& p : net.store().params()) c.tensors.push_back({p.name, TensorRole::parameter, p.value.template cast<double>()});
  for (const auto& b : net.store().buffers()) c.tensors.push_back({b.name, TensorRole::buffer, b.value.template cast<double>()});
  for (auto& a : auxiliary) {
    a.role = TensorRole::auxiliary;
    c.tensors.push_back(std::move(a));
  }
  return c;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, ckpt.version);
    put<std::uint64_t>(out, ckpt.graph_hash);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.role));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
      for (auto d : t.value.shape()) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw DataError("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into place at " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("checkpoint " + path + " has a bad magic");
  Checkpoint c;
  c.version = get<std::uint32_t>(in, path);
  if (c.version != kCheckpointVersion)
    throw DataError("checkpoint " + path + " has unsupported version " + std::to_string(c.version));
  c.graph_hash = get<std::uint64_t>(in, path);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw DataError("checkpoint " + path + " has an implausible tensor name length");
    t.name.resize(len);
    in.read(t.name.data(), len);
    const auto role = get<std::uint8_t>(in, path);
    if (role > 2) throw DataError("checkpoint " + path + " has unknown tensor role for " + t.name);
    t.role = static_cast<TensorRole>(role);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw DataError("checkpoint " + path + " has implausible rank for " + t.name);
    Extents shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    std::vector<double> values(element_count(shape));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint " + path + " truncated inside tensor " + t.name);
    t.value = Tensor<double>(std::move(shape), std::move(values));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

template <typename T>
void restore_checkpoint(Network<T>& net, const Checkpoint& ckpt) {
  const std::uint64_t expected = graph_hash(net.graph());
  if (ckpt.graph_hash != expected)
    throw DataError("checkpoint graph hash " + std::to_string(ckpt.graph_hash) + " does not match network " +
                    std::to_string(expected));
  auto copy_into = [&](const std::string& name, TensorRole role, Tensor<T>& dst) {
    const NamedTensor* src = ckpt.find(name, role);
    if (!src) throw DataError("checkpoint is missing tensor " + name);
    if (src->value.shape() != dst.shape())
      throw DataError("checkpoint tensor " + name + " has shape " + format_extents(src->value.shape()) + ", expected " +
                      format_extents(dst.shape()));
    dst = src->value.template cast<T>();
  };
  for (auto& p : net.store().params()) copy_into(p.name, TensorRole::parameter, p.value);
  for (auto& b : net.store().buffers()) copy_into(b.name, TensorRole::buffer, b.value);
}

template Checkpoint make_checkpoint(const Network<float>&, std::vector<NamedTensor>);
template Checkpoint make_checkpoint(const Network<double>&, std::vector<NamedTensor>);
template void restore_checkpoint(Network<float>&, const Checkpoint&);
template void restore_checkpoint(Network<double>&, const Checkpoint&);

}  // namespace blocknas
