#ifndef TPRL_CHECKPOINT_HPP_
#define TPRL_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tprl/mlp.hpp"
#include "tprl/optim.hpp"

namespace tprl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'T', 'P', 'R', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointNet {
  std::string name;
  Mlp net;
  Adam opt;
};

struct Checkpoint {
  std::string algo;
  std::uint64_t config_hash = 0;
  std::int64_t epoch = 0;
  std::vector<CheckpointNet> nets;
  std::string rng_state;

  const CheckpointNet& find(const std::string& name) const;
};

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tprl

#endif  // TPRL_CHECKPOINT_HPP_
