#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "rkt/model.hpp"

namespace rkt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::string corruption_digest;
  std::string note;

  friend bool operator==(const CheckpointMetadata&, const CheckpointMetadata&) = default;
};

struct Checkpoint {
  Model model;
  CheckpointMetadata metadata;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout: "RKT1", uint32 LE header length, UTF-8 JSON architecture header,
/// then for every parameterized layer in declaration order its weight and
/// bias as little-endian IEEE-754 float32. Parameters on the float32 grid
/// (see round_to_storage) round-trip bit-exactly.
std::string encode_checkpoint(const Model& model, const CheckpointMetadata& meta = {});
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMetadata& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rkt
