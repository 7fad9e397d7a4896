#ifndef TPRL_CONFIG_HPP_
#define TPRL_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tprl/ddqn.hpp"
#include "tprl/geometry.hpp"
#include "tprl/planner.hpp"
#include "tprl/ppo.hpp"
#include "tprl/rules.hpp"
#include "tprl/world.hpp"

namespace tprl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { kNoSkip, kPeriodSkip, kTprl };
enum class Algo { kPpo, kDdqn };

std::string to_string(Variant v);
std::string to_string(Algo a);
Variant parse_variant(const std::string& s);
Algo parse_algo(const std::string& s);

// Fixed affine scaling of the observation before it reaches a network.
struct ObsScale {
  double r_s = 5.0;
  double r_d = 0.8;
  double d_l = 0.8;
  double d_r = 0.8;
  double v = 1.0;
};

struct RunConfig {
  std::string train_map = "oval";
  std::string test_map = "cross";
  Algo algo = Algo::kPpo;
  Variant variant = Variant::kTprl;
  std::uint64_t seed = 1;
  int epochs = 200;
  std::int64_t steps_per_epoch = 20000;
  int period = 300;
  int train_laps = 5;
  int test_laps = 10;
  std::int64_t test_step_cap = 200000;
  int checkpoint_every = 10;
  bool self_check = false;

  PpoConfig ppo;
  DdqnConfig ddqn;
  ScenarioConfig scenario;
  PlannerConfig planner;
  RuleThresholds rules;
  OvalParams oval;
  double cross_lane_width = 0.8;
  ObsScale obs_scale;
};

void validate(const RunConfig& cfg);

nlohmann::json config_to_json(const RunConfig& cfg);
// Keys missing from `j` keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& cfg);
std::uint64_t fnv1a(const std::string& bytes);

TrackMap build_named_map(const std::string& name, const RunConfig& cfg);

}  // namespace tprl

#endif  // TPRL_CONFIG_HPP_
