#ifndef EMOSYNTH_CHECKPOINT_HPP
#define EMOSYNTH_CHECKPOINT_HPP

// Binary checkpoint: every parameter store of a Model plus the training
// metadata. See docs/checkpoint_format.md for the byte layout.

#include "emosynth/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace emosynth {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError if the file is missing or malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a of the serialized bytes.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);

}  // namespace emosynth

#endif  // EMOSYNTH_CHECKPOINT_HPP
