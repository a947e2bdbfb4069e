#include <gtest/gtest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "mprobe/builtin.hpp"
#include "mprobe/campaign.hpp"
#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/wire.hpp"
#include "wire_fixtures.hpp"

using namespace mprobe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("mprobe_test_" + name);
  fs::remove_all(d);
  return d;
}

RunConfig saddle_config(const fs::path& out, std::size_t seeds) {
  RunConfig c = default_config();
  c.seed_count = seeds;
  c.conditions = {{"a", "saddle", json::object(), ""}, {"b", "sphere", json::object(), ""}};
  c.output_dir = out;
  return c;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MPROBE_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Probe, RecordIsValid) {
  const auto g = make_builtin("coupled_family", json::object(), 0);
  const auto b = sample_orthonormal_basis(16, 16, 0);
  auto r = probe_sample(*g, latent_from_seed(0, 16), b, ProbeOptions{}, 1);
  r.condition = "normal";
  EXPECT_NO_THROW(validate(r));
  EXPECT_EQ(r.coupling.similarities.size(), 15);
}

TEST(Probe, ConstantGeneratorIsRankZero) {
  ConstantGenerator g(3, ImageShape{1, 2, 2}, 1.0);
  const auto b = sample_orthonormal_basis(3, 3, 0);
  auto r = probe_sample(g, latent_from_seed(0, 3), b, ProbeOptions{}, 1);
  r.condition = "normal";
  EXPECT_TRUE(r.has_flag("rank_zero"));
  EXPECT_NO_THROW(validate(r));
}

TEST(Diagnose, CountsOrderAndValidity) {
  const auto dir = fresh_dir("count");
  auto c = saddle_config(dir, 3);
  c.conditions = {{"b", "saddle", json::object(), ""}, {"a", "saddle", json::object(), ""}};
  const auto res = run_diagnose(c);
  EXPECT_EQ(res.written, 6u);
  EXPECT_TRUE(res.complete);
  const auto set = read_records(res.records);
  ASSERT_EQ(set.records.size(), 6u);
  EXPECT_EQ(set.records[0].condition, "a");
  EXPECT_EQ(set.records[1].condition, "b");
  EXPECT_EQ(set.records[2].seed, 1u);
  const auto m = json::parse(slurp(res.manifest));
  EXPECT_EQ(m["status"], "complete");
  EXPECT_EQ(m["config_hash"], config_hash(c));
  EXPECT_EQ(m["records"].size(), 6u);
}

TEST(Diagnose, ThreadsDoNotChangeBytes) {
  const auto d1 = fresh_dir("jobs1"), d4 = fresh_dir("jobs4");
  auto c = saddle_config(d1, 20);
  c.conditions = default_config().conditions;
  run_diagnose(c);
  c.output_dir = d4;
  c.jobs = 4;
  run_diagnose(c);
  EXPECT_EQ(slurp(d1 / "records.jsonl"), slurp(d4 / "records.jsonl"));
}

TEST(Diagnose, ResumeFromEveryCut) {
  const auto ref_dir = fresh_dir("ref");
  const auto ref = run_diagnose(saddle_config(ref_dir, 5));
  const auto expect = slurp(ref.records);
  for (std::size_t cut = 0; cut <= 10; ++cut) {
    const auto dir = fresh_dir("cut");
    const auto c = saddle_config(dir, 5);
    DiagnoseOptions stop;
    stop.max_new_records = cut;
    const auto first = run_diagnose(c, stop);
    EXPECT_EQ(first.written, cut);
    const auto second = run_diagnose(c);
    EXPECT_EQ(second.reused, cut);
    EXPECT_EQ(slurp(second.records), expect) << "cut " << cut;
  }
}

TEST(Diagnose, TornTailIsDiscarded) {
  const auto dir = fresh_dir("torn");
  const auto c = saddle_config(dir, 4);
  DiagnoseOptions stop;
  stop.max_new_records = 3;
  run_diagnose(c, stop);
  std::ofstream(dir / "records.jsonl", std::ios::app) << "{\"seed\": 1, \"cond";
  run_diagnose(c);
  const auto ref_dir = fresh_dir("torn_ref");
  run_diagnose(saddle_config(ref_dir, 4));
  EXPECT_EQ(slurp(dir / "records.jsonl"), slurp(ref_dir / "records.jsonl"));
}

TEST(Diagnose, DeletedManifestRestartsIdentically) {
  const auto dir = fresh_dir("nomanifest");
  const auto c = saddle_config(dir, 4);
  DiagnoseOptions stop;
  stop.max_new_records = 5;
  run_diagnose(c, stop);
  const auto partial = slurp(dir / "records.jsonl");
  fs::remove(dir / "manifest.json");
  run_diagnose(c);
  const auto full = slurp(dir / "records.jsonl");
  EXPECT_EQ(full.substr(0, partial.size()), partial);
  EXPECT_EQ(std::count(full.begin(), full.end(), '\n'), 8);
}

TEST(Diagnose, DifferentConfigInSameDirIsRejected) {
  const auto dir = fresh_dir("hash");
  auto c = saddle_config(dir, 2);
  run_diagnose(c);
  c.fd_epsilon = 1e-4;
  EXPECT_THROW(run_diagnose(c), ConfigError);
}

TEST(Diagnose, FailingCellsBecomeErrorLines) {
  const auto dir = fresh_dir("fail");
  auto c = saddle_config(dir, 3);
  ServerModel m = test_model(2, ImageShape{1, 1, 2});
  m.compute = [](const std::vector<float>& z) -> std::vector<float> {
    if (z[0] > 0.0f) throw std::runtime_error("refuse");
    return {z[0], z[1]};
  };
  TcpMockServer srv(m);
  c.conditions[1] = {"b", "", json::object(), "tcp://127.0.0.1:" + std::to_string(srv.port())};
  c.pool_size = 1;
  {
    const auto res = run_diagnose(c);
    EXPECT_TRUE(res.complete);
    EXPECT_GT(res.failed, 0u);
  }
  const auto set = read_records(dir / "records.jsonl");
  EXPECT_EQ(set.records.size() + set.failures.size(), 6u);
  EXPECT_EQ(set.failures.front().kind, "transport");
}

TEST(Correlate, FamiliesAndDrop) {
  const auto dir = fresh_dir("corr");
  auto c = default_config();
  c.seed_count = 60;
  c.output_dir = dir;
  run_diagnose(c);
  const auto set = read_records(dir / "records.jsonl");
  const auto r = correlate_records(set, {{"lc", "phfe"}}, 0, 3, 0);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_GT(r.rows[0].summary.rho_mean, 0.6);
  ASSERT_EQ(r.drops.size(), 1u);
  ASSERT_TRUE(r.drops[0].drop.has_value());
  EXPECT_LT(*r.drops[0].drop, 0.0);
  write_correlate(r, dir);
  EXPECT_TRUE(fs::exists(dir / "correlations.csv"));
  EXPECT_THROW(correlate_records(set, {{"lc", "phfe"}}, 61, 1, 0), ContractError);
}

TEST(Ood, NeedsTwoConditions) {
  RecordSet one;
  GeometricRecord r;
  r.condition = "x";
  one.records = {r, r};
  EXPECT_THROW(detect_ood(one), ContractError);
}

TEST(Ood, PerfectSeparation) {
  RecordSet s;
  for (int i = 0; i < 10; ++i) {
    GeometricRecord r;
    r.seed = static_cast<std::uint64_t>(i);
    r.condition = i < 5 ? "normal" : "ood";
    r.lc = i < 5 ? 1.0 : 10.0;
    r.phfe = 1.0;
    s.records.push_back(r);
  }
  const auto d = detect_ood(s);
  EXPECT_EQ(d.positive_label, "ood");
  EXPECT_EQ(d.auroc, 1.0);
}

TEST(HfTransfer, IdenticalConditionsGiveZeroDelta) {
  RecordSet s;
  for (int i = 0; i < 8; ++i)
    for (const char* cond : {"normal", "ood"}) {
      GeometricRecord r;
      r.seed = static_cast<std::uint64_t>(i);
      r.condition = cond;
      r.phfe = 1.0 + i;
      r.hfe = 0.5 * i;
      r.topk_hf = {0.1, 0.1, 0.15, 0.2};
      s.records.push_back(r);
    }
  const auto h = hf_transfer(s, 200, 0.95, 0);
  ASSERT_EQ(h.deltas.size(), 1u);
  EXPECT_EQ(h.deltas[0].delta_eta, 0.0);
  EXPECT_LE(*h.deltas[0].ci_low, 0.0);
  EXPECT_GE(*h.deltas[0].ci_high, 0.0);
  EXPECT_EQ(h.rows[0].topk_median[1], 0.1);
}

TEST(HfTransfer, MediansGiveKnownEta) {
  RecordSet s;
  for (const char* cond : {"normal", "ood"}) {
    GeometricRecord r;
    r.condition = cond;
    r.phfe = 158.506;
    r.hfe = 0.0120;
    s.records.push_back(r);
  }
  const auto h = hf_transfer(s, 10, 0.95, 0);
  EXPECT_NEAR(h.rows[0].eta_of_medians, 7.571e-5, 5e-8);
}

TEST(HfTransfer, OrphansAreListed) {
  RecordSet s;
  GeometricRecord r;
  r.condition = "normal";
  r.seed = 1;
  s.records.push_back(r);
  r.condition = "ood";
  r.seed = 2;
  s.records.push_back(r);
  try {
    hf_transfer(s, 10, 0.95, 0);
    FAIL();
  } catch (const PairingError& e) {
    EXPECT_NE(std::string(e.what()).find("seed 1 has no 'ood'"), std::string::npos);
  }
}

TEST(Trajectory, IdentityVsIdentityIsFlat) {
  auto c = default_config();
  c.output_dir = fresh_dir("traj_id");
  c.pairs = 10;
  c.n_mc = 50;
  c.trajectory_conditions[1] = {"ood", "identity", json{{"latent_dim", 16}}, ""};
  const auto r = run_trajectory(c);
  EXPECT_EQ(r.records.size(), 20u);
  EXPECT_EQ(r.records[0].latents.size(), 21u);
  for (const auto& row : r.summary) {
    EXPECT_EQ(row.mc.ratio_mean, 1.0) << row.metric;
    EXPECT_EQ(row.mc.ratio_std, 0.0);
    EXPECT_EQ(row.frac, 0.0);
  }
  const auto back = read_trajectories(c.output_dir / "trajectories.jsonl");
  EXPECT_EQ(back.size(), 20u);
}

TEST(Heatmap, SaddleBrightestWhereJacobianIsLargest) {
  auto c = default_config();
  c.output_dir = fresh_dir("heat");
  c.conditions = {{"s", "saddle", json::object(), ""}};
  c.subspace_dim = 2;
  const std::uint64_t seed = 3;
  const auto r = run_heatmap(c, seed, "s", c.output_dir / "h");
  // Saddle output is 1 x 1 x 2: pixel 0 has |dG/dz| = |2 z1|, pixel 1 has 1.
  const auto z = latent_from_seed(seed, 2);
  const bool first_brighter = std::abs(2.0 * z[0]) > 1.0;
  EXPECT_EQ(r.jacobian.data(0, 0) > r.jacobian.data(0, 1), first_brighter);
  const auto png = slurp(c.output_dir / "h_jacobian.png");
  run_heatmap(c, seed, "s", c.output_dir / "h");
  EXPECT_EQ(slurp(c.output_dir / "h_jacobian.png"), png);
  EXPECT_THROW(run_heatmap(c, seed, "zzz", c.output_dir / "h"), ConfigError);
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli");
  fs::create_directories(dir);
  EXPECT_EQ(run_cli("config init " + (dir / "cfg.json").string()), 0);
  const auto cfg = load_config(dir / "cfg.json");
  EXPECT_EQ(config_hash(cfg), config_hash(default_config()));
  EXPECT_EQ(run_cli("--out-dir " + dir.string() + " nonsense"), 1);
  EXPECT_EQ(run_cli("--config /nonexistent.json diagnose"), 1);

  json bad = config_to_json(default_config());
  bad["conditions"][1] = {{"label", "ood"}, {"endpoint", "tcp://127.0.0.1:1"}};
  bad["seeds"] = {{"start", 0}, {"count", 2}};
  std::ofstream(dir / "bad.json") << bad.dump();
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " --out-dir " + (dir / "o").string() + " diagnose"), 2);
  EXPECT_FALSE(fs::exists(dir / "o" / "records.jsonl"));

  std::ofstream rec(dir / "orphans.jsonl");
  GeometricRecord r;
  r.condition = "normal";
  rec << to_json(r).dump() << "\n";
  r.condition = "ood";
  r.seed = 1;
  rec << to_json(r).dump() << "\n";
  rec.close();
  EXPECT_EQ(run_cli("--out-dir " + dir.string() + " hf-transfer " + (dir / "orphans.jsonl").string()), 3);
}

TEST(Cli, SigkillAndRestartMatchesUninterrupted) {
  const auto dir = fresh_dir("kill");
  const auto ref = fresh_dir("kill_ref");
  json cfg = config_to_json(default_config());
  cfg["seeds"] = {{"start", 0}, {"count", 400}};
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json") << cfg.dump();
  const std::string base = "--config " + (dir / "cfg.json").string();

  const pid_t pid = fork();
  if (pid == 0) {
    const std::string out = (dir / "out").string();
    execl(MPROBE_CLI, MPROBE_CLI, "--config", (dir / "cfg.json").c_str(), "--out-dir", out.c_str(),
          "diagnose", static_cast<char*>(nullptr));
    _exit(127);
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  EXPECT_EQ(run_cli(base + " --out-dir " + (dir / "out").string() + " diagnose"), 0);
  EXPECT_EQ(run_cli(base + " --out-dir " + ref.string() + " --jobs 3 diagnose"), 0);
  EXPECT_EQ(slurp(dir / "out" / "records.jsonl"), slurp(ref / "records.jsonl"));
}
