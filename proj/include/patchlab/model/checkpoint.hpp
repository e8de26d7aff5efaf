#pragma once

#include <filesystem>
#include <string>

#include "patchlab/model/transformer.hpp"

namespace plab {

/// Binary layout (little-endian):
///   "PLAB" | u32 version | u64 n_layers n_heads d_model d_head vocab_size
///   max_seq_len d_mlp | u64 bits of rms_eps, rope_base | u32 section count |
///   per section: u32 name_len, name, u32 rank, u64 dims[rank], f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
/// Throws CheckpointFormat on bad magic, version, or section layout and
/// IoFailure if the file cannot be read.
TransformerModel load_checkpoint(const std::filesystem::path& path);

}  // namespace plab
