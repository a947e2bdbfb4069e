#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mprobe/geometry.hpp"
#include "mprobe/trajectory.hpp"

namespace mprobe {

using ojson = nlohmann::ordered_json;

inline constexpr std::array<double, 4> kTopkLevels = {5.0, 10.0, 15.0, 20.0};

struct GeometricRecord {
  std::uint64_t seed = 0;
  std::string condition;
  double ls = 0.0;  // -inf when the metric has no rank
  double lc = 0.0;
  double phfe = 0.0;
  double hfe = 0.0;
  double sis = 0.0;
  CouplingProfile coupling;
  std::array<double, 4> topk_hf{};  // Top5, Top10, Top15, Top20 of the image
  std::vector<std::string> flags;   // "degenerate", "rank_zero"

  bool has_flag(const std::string& f) const;
};

// A (seed, condition) cell whose generator failed.
struct FailedCell {
  std::uint64_t seed = 0;
  std::string condition;
  std::string kind;
  std::string message;
};

ojson to_json(const GeometricRecord& r);
ojson to_json(const FailedCell& f);
ojson to_json(const TrajectoryRecord& r);

GeometricRecord geometric_record_from_json(const nlohmann::json& j);
TrajectoryRecord trajectory_record_from_json(const nlohmann::json& j);

// Throw ContractError naming the violated invariant.
void validate(const GeometricRecord& r);
void validate(const TrajectoryRecord& r);

// Named numeric field: ls, lc, phfe, hfe, sis, top5, top10, top15, top20.
double metric_value(const GeometricRecord& r, const std::string& name);
const std::vector<std::string>& metric_names();

struct RecordSet {
  std::vector<GeometricRecord> records;
  std::vector<FailedCell> failures;

  // Labels in order of first appearance.
  std::vector<std::string> conditions() const;
};

// Validating JSONL reader.
RecordSet read_records(const std::filesystem::path& path);
std::vector<TrajectoryRecord> read_trajectories(const std::filesystem::path& path);

}  // namespace mprobe
