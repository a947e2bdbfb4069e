#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mprobe/campaign.hpp"
#include "mprobe/error.hpp"
#include "mprobe/wire.hpp"

namespace fs = std::filesystem;
using namespace mprobe;

namespace {

struct Globals {
  std::string config;
  std::string out_dir;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
};

RunConfig load(const Globals& g) {
  RunConfig c = g.config.empty() ? default_config() : load_config(g.config);
  if (!g.out_dir.empty()) c.output_dir = g.out_dir;
  if (g.jobs) c.jobs = *g.jobs;
  if (g.seed) c.seed = *g.seed;
  validate(c);
  return c;
}

std::vector<std::pair<std::string, std::string>> parse_pairs(const std::vector<std::string>& items) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : items) {
    const auto colon = s.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
      throw ConfigError("metric pair '" + s + "' must look like x:y");
    out.emplace_back(s.substr(0, colon), s.substr(colon + 1));
  }
  return out;
}

fs::path records_path(const std::string& given, const RunConfig& c) {
  return given.empty() ? c.output_dir / "records.jsonl" : fs::path(given);
}

void check_metrics(const std::vector<std::pair<std::string, std::string>>& pairs) {
  const auto& names = metric_names();
  for (const auto& [x, y] : pairs)
    for (const auto* m : {&x, &y})
      if (std::find(names.begin(), names.end(), *m) == names.end())
        throw ContractError("records have no metric field '" + *m + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-geometry diagnostics for image generators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Globals g;
  app.add_option("--config", g.config, "JSON config file (defaults apply when omitted)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Campaign seed (basis, neighbors, resampling)");

  auto* diagnose = app.add_subcommand("diagnose", "Probe every (seed, condition) cell");
  diagnose->fallthrough();

  auto* correlate = app.add_subcommand("correlate", "Subsampled Spearman tables");
  correlate->fallthrough();
  std::string corr_records;
  std::vector<std::string> corr_pairs;
  std::optional<std::size_t> subsample_n, runs;
  correlate->add_option("records", corr_records, "records.jsonl (default: <out-dir>/records.jsonl)");
  correlate->add_option("--pairs", corr_pairs, "Metric pairs x:y")->delimiter(',');
  correlate->add_option("--subsample-n", subsample_n, "Subsample size (0: whole pool)");
  correlate->add_option("--runs", runs, "Subsampling runs")->check(CLI::PositiveNumber);

  auto* trajectory = app.add_subcommand("trajectory", "Paired interpolation trajectories");
  trajectory->fallthrough();
  std::optional<std::size_t> traj_pairs, traj_steps;
  trajectory->add_option("--pairs", traj_pairs, "Endpoint pairs")->check(CLI::PositiveNumber);
  trajectory->add_option("--steps", traj_steps, "Interpolation steps K")->check(CLI::PositiveNumber);

  auto* ood = app.add_subcommand("ood", "LC/PHFE detection AUROC");
  ood->fallthrough();
  std::string ood_records, positive;
  ood->add_option("records", ood_records, "records.jsonl (default: <out-dir>/records.jsonl)");
  ood->add_option("--positive", positive, "Condition label treated as positive");

  auto* heatmap = app.add_subcommand("heatmap", "Jacobian and Laplacian heatmaps of one sample");
  heatmap->fallthrough();
  std::uint64_t sample_seed = 0;
  std::string condition, out_prefix;
  heatmap->add_option("--sample", sample_seed, "Sample seed")->required();
  heatmap->add_option("--condition", condition, "Condition label")->required();
  heatmap->add_option("--out", out_prefix, "Output prefix (default: <out-dir>/heatmap_<condition>_<sample>)");

  auto* hf = app.add_subcommand("hf-transfer", "High-frequency transfer summary");
  hf->fallthrough();
  std::string hf_records;
  hf->add_option("records", hf_records, "records.jsonl (default: <out-dir>/records.jsonl)");

  auto* config = app.add_subcommand("config", "Config helpers");
  config->require_subcommand(1);
  auto* init = config->add_subcommand("init", "Write the default config with every key");
  init->fallthrough();
  std::string init_path;
  init->add_option("path", init_path, "Destination (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (init->parsed()) {
      RunConfig c = default_config();
      if (!g.out_dir.empty()) c.output_dir = g.out_dir;
      if (g.jobs) c.jobs = *g.jobs;
      if (g.seed) c.seed = *g.seed;
      const std::string text = config_to_json(c).dump(2) + "\n";
      if (init_path.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(init_path);
        if (!out) throw ConfigError("cannot write '" + init_path + "'");
        out << text;
      }
      return 0;
    }
    RunConfig c = load(g);
    if (diagnose->parsed()) {
      const auto r = run_diagnose(c);
      std::printf("%zu cells: %zu reused, %zu written, %zu failed -> %s\n", r.total, r.reused,
                  r.written, r.failed, r.records.string().c_str());
    } else if (correlate->parsed()) {
      const auto pairs = corr_pairs.empty() ? c.metric_pairs : parse_pairs(corr_pairs);
      check_metrics(pairs);
      const auto set = read_records(records_path(corr_records, c));
      const auto r = correlate_records(set, pairs, subsample_n.value_or(c.subsample_n),
                                       runs.value_or(c.runs), c.seed);
      fs::create_directories(c.output_dir);
      write_correlate(r, c.output_dir);
      for (const auto& row : r.rows)
        std::printf("%-12s rho(%s,%s) = %.4f +- %.4f\n", row.condition.c_str(), row.x.c_str(),
                    row.y.c_str(), row.summary.rho_mean, row.summary.rho_std);
    } else if (trajectory->parsed()) {
      if (traj_pairs) c.pairs = *traj_pairs;
      if (traj_steps) c.steps = *traj_steps;
      const auto r = run_trajectory(c);
      for (const auto& row : r.summary)
        std::printf("%-4s R = %.4f +- %.4f  frac = %.3f\n", row.metric.c_str(), row.mc.ratio_mean,
                    row.mc.ratio_std, row.frac);
    } else if (ood->parsed()) {
      const auto set = read_records(records_path(ood_records, c));
      const auto r = detect_ood(set, positive, c.ratio_floor);
      fs::create_directories(c.output_dir);
      write_detection(r, c.output_dir);
      std::printf("AUROC LC/PHFE = %.4f  LC = %.4f  LS = %.4f (positive: %s)\n", r.auroc, r.auroc_lc,
                  r.auroc_ls, r.positive_label.c_str());
    } else if (heatmap->parsed()) {
      const fs::path prefix =
          out_prefix.empty()
              ? c.output_dir / ("heatmap_" + condition + "_" + std::to_string(sample_seed))
              : fs::path(out_prefix);
      const auto r = run_heatmap(c, sample_seed, condition, prefix);
      for (const auto& f : r.files) std::printf("%s\n", f.string().c_str());
    } else if (hf->parsed()) {
      const auto set = read_records(records_path(hf_records, c));
      const auto r = hf_transfer(set, c.n_boot, c.ci_level, c.seed, c.ratio_floor);
      fs::create_directories(c.output_dir);
      write_hf_transfer(r, c.output_dir);
      for (const auto& row : r.rows)
        std::printf("%-12s PHFE %.6g  HFE %.6g  eta %.6g  Top10-HF %.4f\n", row.condition.c_str(),
                    row.phfe_median, row.hfe_median, row.eta_of_medians, row.topk_median[1]);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "mprobe: config error: %s\n", e.what());
    return 1;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "mprobe: generator unreachable: %s\n", e.what());
    return 2;
  } catch (const EvaluationError& e) {
    std::fprintf(stderr, "mprobe: generator failed: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mprobe: %s\n", e.what());
    return 3;
  }
}
