#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dnet/adam.hpp"
#include "dnet/model.hpp"

namespace dnet {

// Serializable training snapshot. `tensors` holds, in order: model parameters
// (build order), BN running stats, then Adam moments as adam.m.<param> and
// adam.v.<param>. The on-disk layout is
//   magic "DNCP" | u32 version
//   ModelSpec (name, in_channels, stem, blocks, compression)
//   u64 train_seed | u32 epoch | u32 batch_in_epoch | u64 batches_done
//   u64 adam_step
//   u32 tensor_count | per tensor: name, u8 dtype (0 = f64), u32 rank,
//     i32 extents..., u64 payload offset
//   u64 payload_bytes | raw IEEE-754 doubles
// with all scalars little-endian; identical state serializes to identical
// bytes.
struct Checkpoint {
  std::uint32_t version = 1;
  ModelSpec spec;
  std::uint64_t train_seed = 0;
  std::uint32_t epoch = 0;            // completed epochs before the cursor
  std::uint32_t batch_in_epoch = 0;   // batches consumed inside epoch `epoch`
  std::uint64_t batches_done = 0;     // cumulative optimizer steps
  std::int64_t adam_step = 0;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
};

Checkpoint snapshot(Model& model, const AdamState& adam, std::uint64_t train_seed,
                    std::uint32_t epoch, std::uint32_t batch_in_epoch,
                    std::uint64_t batches_done);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Rejects bad magic, unsupported version, or truncation, reporting the byte
// offset of the problem.
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the model/optimizer described by the checkpoint. Missing or
// mis-shaped entries are rejected by name.
Model restore_model(const Checkpoint& ckpt);
AdamState restore_adam(const Checkpoint& ckpt);

}  // namespace dnet
