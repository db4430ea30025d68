#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seqlevel/model.hpp"

namespace seqlevel {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_echo;  // key = value lines of the producing config
  std::uint64_t vocab_hash = 0;
  Params params;
  Params velocity;          // optimizer state, same layout as params
  std::uint64_t epoch = 0;
  std::string phase;        // "token" or "sequence"
  double lr = 0.0;
  std::vector<double> valid_history;

  bool operator==(const Checkpoint&) const = default;
};

// Little-endian binary: magic, version, header fields, then every tensor with
// its name and shape, for the parameters and the velocity.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);

// Verifies magic, version, tensor names and shapes; with expected_vocab_hash
// also the vocabulary.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);
Checkpoint deserialize_checkpoint(const std::string& bytes,
                                  std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

}  // namespace seqlevel
