#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "sfod/model.hpp"

namespace sfod {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelState model;
  nlohmann::json metadata = nlohmann::json::object();  // step, seed, config hash, ...

  bool operator==(const Checkpoint&) const = default;
};

/// Binary layout: "SFODCKPT", u32 version, u64 header length, JSON header
/// (architecture, array names/kinds/shapes in order, metadata), then the
/// arrays as little-endian float32.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws DataError on a malformed file, and also when `expected` is given
/// and the stored architecture differs from it.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ArchDescriptor>& expected = std::nullopt);

/// FNV-1a of a string, hex; used to tag checkpoints with their config.
std::string config_hash(const std::string& text);

}  // namespace sfod
