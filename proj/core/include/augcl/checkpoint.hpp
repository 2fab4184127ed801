#pragma once

#include <cstdint>
#include <filesystem>

#include "augcl/model.hpp"

namespace augcl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    std::uint32_t version = kCheckpointVersion;
    Arch arch = Arch::conv_s;
    InputGeometry input;
    std::uint64_t d_proj = 0;
    std::uint64_t d_feat = 0;
    std::uint64_t seed = 0;
    std::uint32_t task_index = 0;
    std::uint32_t dtype_size = 0;

    bool operator==(const CheckpointHeader&) const = default;
};

/// Writes header + named little-endian arrays (parameters, then batch-norm
/// running statistics). The file appears atomically.
template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const EncoderModel<T>& model, std::uint32_t task_index);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Rebuilds the encoder and restores every stored value bit for bit.
template <std::floating_point T>
EncoderModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

}  // namespace augcl
