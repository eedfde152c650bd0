#pragma once

#include <filesystem>

#include "mvt/model.hpp"

namespace mvt {

// Checkpoint container, all integers little-endian:
//
//   "MVTC"  u32 version (=1)
//   u32 length, UTF-8 JSON of the model configuration
//   u32 entry count
//   per entry (lexicographic name order):
//     u32 name length, name bytes
//     u8  dtype tag (1 = f32, 2 = f64)
//     u32 rank, rank × u64 extents
//     raw element data, little-endian
//   u32 CRC-32 of every preceding byte

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
std::string encode_checkpoint(const MVTConfig& config, const ParamStore<Scalar>& params);

/// Decodes into `Scalar`, converting element types when the stored tag differs.
template <typename Scalar>
MVTModel<Scalar> decode_checkpoint(std::string_view bytes, const std::string& context = "checkpoint");

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const MVTModel<Scalar>& model);

template <typename Scalar>
MVTModel<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Reads only the configuration block (after verifying the checksum).
MVTConfig peek_checkpoint_config(const std::filesystem::path& path);

}  // namespace mvt
