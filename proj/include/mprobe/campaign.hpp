#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mprobe/config.hpp"
#include "mprobe/generator.hpp"
#include "mprobe/geometry.hpp"
#include "mprobe/imaging.hpp"
#include "mprobe/records.hpp"
#include "mprobe/stats.hpp"
#include "mprobe/trajectory.hpp"

namespace mprobe {

inline constexpr const char* kToolVersion = "0.3.0";

struct ProbeOptions {
  double fd_epsilon = 1e-3;
  FdScheme scheme = FdScheme::forward;
  double neighbor_radius = 1e-2;
  std::size_t neighbor_count = 8;
  double rank_tolerance = 1e-12;
  double sis_floor = 1e-8;
  double degeneracy_tolerance = 1e-2;
  PhfeMode phfe_mode = PhfeMode::variance;
  double topk_floor = 1e-12;
  Decomposer decomposer;  // empty: eigendecompose
};

ProbeOptions probe_options(const RunConfig& c);

// Every pointwise descriptor of one latent sample. `neighbor_seed` drives the
// LC/SIS neighbor draw.
GeometricRecord probe_sample(const Generator& gen, const LatentPoint& z, const SubspaceBasis& basis,
                             const ProbeOptions& options, std::uint64_t neighbor_seed);

using GeneratorFactory = std::function<GeneratorPtr(const ConditionSpec&)>;

GeneratorPtr make_condition_generator(const ConditionSpec& spec, const RunConfig& c);

// Seeds used by the diagnose campaign for sample `seed`.
std::uint64_t neighbor_seed_for(const RunConfig& c, std::uint64_t seed);
std::size_t effective_subspace_dim(const RunConfig& c, std::size_t latent_dim);

struct DiagnoseOptions {
  // Stop after this many newly written records (simulates an interruption).
  std::size_t max_new_records = std::numeric_limits<std::size_t>::max();
  GeneratorFactory factory;  // empty: make_condition_generator
};

struct DiagnoseResult {
  std::size_t total = 0;
  std::size_t reused = 0;
  std::size_t written = 0;
  std::size_t failed = 0;
  bool complete = false;
  std::filesystem::path records;
  std::filesystem::path manifest;
};

// Writes records.jsonl and manifest.json under c.output_dir, resuming a
// matching earlier run.
DiagnoseResult run_diagnose(const RunConfig& c, const DiagnoseOptions& options = {});

struct CorrelationRow {
  std::string condition;
  std::string x;
  std::string y;
  std::size_t pool = 0;
  std::size_t excluded = 0;  // records with a non-finite value
  CorrelationSummary summary;
};

struct DropRow {
  std::string x;
  std::string y;
  std::string baseline;
  std::string condition;
  double rho_baseline = 0.0;
  double rho_condition = 0.0;
  std::optional<double> drop;
};

struct CorrelateResult {
  std::vector<CorrelationRow> rows;
  std::vector<DropRow> drops;
};

// subsample_n = 0 uses the whole pool of each condition.
CorrelateResult correlate_records(const RecordSet& set,
                                  const std::vector<std::pair<std::string, std::string>>& pairs,
                                  std::size_t subsample_n, std::size_t runs, std::uint64_t seed);
// correlations.csv, correlation_drops.csv, correlations.json
void write_correlate(const CorrelateResult& r, const std::filesystem::path& out_dir);

struct DetectionResult {
  std::string positive_label;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> conditions;
  std::vector<double> lc;
  std::vector<double> ls;
  std::vector<double> phfe;
  std::vector<double> scores;  // LC / PHFE
  std::vector<bool> labels;    // true for positive_label
  double auroc = 0.0;
  double auroc_lc = 0.0;
  double auroc_ls = 0.0;
};

// Empty positive label: "ood" when present, otherwise the last condition.
DetectionResult detect_ood(const RecordSet& set, const std::string& positive_label = "",
                           double floor = 1e-12);
// ood.json, ood_scores.csv
void write_detection(const DetectionResult& r, const std::filesystem::path& out_dir);

struct TrajectorySummaryRow {
  std::string metric;
  MonteCarloSummary mc;
  double frac = 0.0;
};

struct TrajectoryResult {
  std::string baseline;
  std::string condition;
  std::vector<TrajectoryRecord> records;  // pair-major, conditions in config order
  std::size_t failed_pairs = 0;
  std::vector<TrajectorySummaryRow> summary;
};

// Writes trajectories.jsonl, trajectory_pairs.csv and trajectory_summary.csv.
TrajectoryResult run_trajectory(const RunConfig& c, const GeneratorFactory& factory = {});

double trajectory_metric(const TrajectoryRecord& r, const std::string& name);

struct HeatmapResult {
  HeatMap jacobian;
  HeatMap laplacian;
  std::vector<std::filesystem::path> files;
};

// Writes <prefix>_jacobian.{png,csv} and <prefix>_laplacian.{png,csv}.
HeatmapResult run_heatmap(const RunConfig& c, std::uint64_t seed, const std::string& condition,
                          const std::filesystem::path& prefix, const GeneratorFactory& factory = {});

struct HfConditionRow {
  std::string condition;
  std::size_t n = 0;
  double phfe_median = 0.0;
  double hfe_median = 0.0;
  double eta_median = 0.0;      // median of per-record eta
  double eta_of_medians = 0.0;  // hfe_median / phfe_median
  std::array<double, 4> topk_median{};
};

struct HfDeltaRow {
  std::string baseline;
  std::string condition;
  std::size_t pairs = 0;
  double delta_eta = 0.0;  // mean paired eta(condition) - eta(baseline)
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

struct HfTransferResult {
  std::vector<HfConditionRow> rows;
  std::vector<HfDeltaRow> deltas;
};

// Throws PairingError listing orphan (seed, condition) cells.
HfTransferResult hf_transfer(const RecordSet& set, std::size_t n_boot, double level,
                             std::uint64_t seed, double floor = 1e-12);
// hf_transfer.csv, hf_transfer_delta.csv, hf_transfer.json
void write_hf_transfer(const HfTransferResult& r, const std::filesystem::path& out_dir);

}  // namespace mprobe
