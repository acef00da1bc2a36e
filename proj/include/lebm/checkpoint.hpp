#pragma once

// Versioned binary container. Layout, all integers little-endian:
//
//   u32 format version
//   u64 header length, then that many bytes of JSON
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 ndim, u64 extent per dim,
//     f64 payload in column-major order
//
// TrainState snapshots store network parameters, all three Adam states, and
// the persistent chain states, so a resumed run continues bit for bit.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lebm/config.hpp"
#include "lebm/data.hpp"
#include "lebm/trainer.hpp"

namespace lebm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;  // 1 or 2 extents
  Matrix value;                      // vectors are stored as a single column
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Io on a missing or truncated file, CheckpointVersion on a version mismatch.
Checkpoint read_checkpoint(const std::string& path);

/// Everything needed to resume training.
struct Snapshot {
  RunConfig config;  // with model dims resolved
  TrainState state;
  std::optional<Standardization> standardization;
};

Checkpoint to_checkpoint(const Snapshot& snap);
Snapshot from_checkpoint(const Checkpoint& ckpt);

void save_snapshot(const std::string& path, const Snapshot& snap);
Snapshot load_snapshot(const std::string& path);

}  // namespace lebm
