#pragma once

// Versioned binary container of named tensors:
//   "BNASCKPT" | u32 version | u64 graph hash | u32 count |
//   count x (u32 name length | name | u8 role | u32 rank | u64 dims[rank] | f64 values)
// Integers and doubles are little-endian. Roles: 0 parameter, 1 state
// buffer, 2 auxiliary (for example the input mean image).

#include <cstdint>
#include <string>
#include <vector>

#include "blocknas/network.hpp"
#include "blocknas/tensor.hpp"

namespace blocknas {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class TensorRole : std::uint8_t { parameter = 0, buffer = 1, auxiliary = 2 };

struct NamedTensor {
  std::string name;
  TensorRole role = TensorRole::parameter;
  Tensor<double> value;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t graph_hash = 0;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name, TensorRole role) const;
};

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, std::vector<NamedTensor> auxiliary = {});

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws DataError on a bad magic, unknown version or truncation.
Checkpoint read_checkpoint(const std::string& path);

// Copies parameters and buffers into `net`. Throws DataError when the
// graph hash differs or a tensor is missing or misshapen.
template <typename T>
void restore_checkpoint(Network<T>& net, const Checkpoint& ckpt);

}  // namespace blocknas
