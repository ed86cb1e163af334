#pragma once

#include "ehrisk/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ehrisk {

/// Binary checkpoint layout (all integers little-endian):
///
///   magic         8 bytes  "EHRCKPT\n"
///   version       u32      kCheckpointVersion
///   header_len    u64
///   header        JSON: {"arch": {...}, "vocab": [...]}
///   tensor_count  u32
///   per tensor:   u32 name_len, name, u32 rank, rank x u64 dims, prod(dims) x f64
///
/// Tensors are the model parameters in ModelParams::for_each order, followed by
/// "norm.mean", "norm.sd" and "norm.age_mean".
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model &model);
/// Throws VersionError on a foreign version tag, InvalidInputError on any other corruption.
Model deserialize_checkpoint(std::string_view bytes);

/// Writes atomically (temporary file + rename). Throws StorageError on I/O failure.
void save_checkpoint(const Model &model, const std::filesystem::path &path);
/// Throws StorageError if unreadable, plus the errors of deserialize_checkpoint.
Model load_checkpoint(const std::filesystem::path &path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
/// Content hash of a checkpoint file; used as the model version.
std::string checkpoint_digest(const std::filesystem::path &path);

}  // namespace ehrisk
