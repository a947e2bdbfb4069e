#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mprobe/geometry.hpp"
#include "mprobe/imaging.hpp"

namespace mprobe {

// One condition: a built-in generator (kind + params) or an external
// endpoint ("tcp://host:port" or "exec:command").
struct ConditionSpec {
  std::string label;
  std::string kind;
  nlohmann::json params = nlohmann::json::object();
  std::string endpoint;

  bool external() const noexcept { return !endpoint.empty(); }
};

struct RunConfig {
  std::uint64_t seed = 0;            // basis, neighbors, resampling
  std::uint64_t generator_seed = 0;  // random weights of built-in generators

  std::uint64_t seed_start = 0;
  std::size_t seed_count = 100;
  std::vector<std::uint64_t> seed_list;  // overrides start/count when non-empty

  std::vector<ConditionSpec> conditions;

  std::size_t subspace_dim = 16;
  double fd_epsilon = 1e-3;
  FdScheme fd_scheme = FdScheme::forward;
  double neighbor_radius = 1e-2;
  std::size_t neighbor_count = 8;
  double rank_tolerance = 1e-12;
  double sis_floor = 1e-8;
  double degeneracy_tolerance = 1e-2;

  PhfeMode phfe_mode = PhfeMode::variance;
  double topk_floor = 1e-12;
  std::size_t heatmap_height = 0;  // 0: generator output height
  std::size_t heatmap_width = 0;
  Upsample upsample = Upsample::nearest;

  std::vector<ConditionSpec> trajectory_conditions;
  std::size_t steps = 20;
  std::size_t pairs = 100;
  std::uint64_t pair_seed_start = 0;
  double tortuosity_epsilon = 1e-8;
  std::size_t n_mc = 800;
  double fraction = 0.8;

  std::vector<std::pair<std::string, std::string>> metric_pairs;
  std::size_t subsample_n = 0;  // 0: whole pool
  std::size_t runs = 10;
  std::size_t n_boot = 1000;
  double ci_level = 0.95;
  double ratio_floor = 1e-12;

  std::filesystem::path output_dir = "mprobe-out";
  std::size_t jobs = 1;
  double timeout_seconds = 30.0;
  std::size_t pool_size = 4;

  // Sorted, de-duplicated sample seeds.
  std::vector<std::uint64_t> seeds() const;
};

RunConfig default_config();

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

// Throws ConfigError on invalid values.
void validate(const RunConfig& c);

// FNV-1a of the canonical config, execution settings excluded.
std::string config_hash(const RunConfig& c);

}  // namespace mprobe
