#include <gtest/gtest.h>

#include <fstream>

#include "mprobe/config.hpp"
#include "mprobe/error.hpp"
#include "mprobe/records.hpp"

using namespace mprobe;
using nlohmann::json;

namespace {

GeometricRecord sample_record() {
  GeometricRecord r;
  r.seed = 4;
  r.condition = "normal";
  r.ls = 0.25;
  r.lc = 1.5;
  r.phfe = 0.01;
  r.hfe = 0.2;
  r.sis = 3.0;
  r.coupling.principal = 0.9;
  r.coupling.similarities = Vector::Constant(3, 0.1);
  r.coupling.sis = 3.0;
  r.topk_hf = {0.1, 0.2, 0.3, 0.4};
  return r;
}

std::filesystem::path temp_file(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Records, RoundTrip) {
  const auto r = sample_record();
  const auto j = to_json(r);
  EXPECT_EQ(j.begin().key(), "seed");
  const auto back = geometric_record_from_json(json::parse(j.dump()));
  EXPECT_EQ(to_json(back).dump(), j.dump());
}

TEST(Records, RankZeroLsIsNull) {
  auto r = sample_record();
  r.ls = -std::numeric_limits<double>::infinity();
  r.flags = {"rank_zero"};
  const auto j = to_json(r);
  EXPECT_TRUE(j["ls"].is_null());
  EXPECT_NO_THROW(validate(geometric_record_from_json(json::parse(j.dump()))));
  r.flags.clear();
  EXPECT_THROW(validate(r), ContractError);
}

TEST(Records, Validation) {
  auto r = sample_record();
  r.topk_hf = {0.3, 0.2, 0.3, 0.4};
  EXPECT_THROW(validate(r), ContractError);
  r = sample_record();
  r.lc = -1;
  EXPECT_THROW(validate(r), ContractError);
}

TEST(Records, ReaderNamesLineAndField) {
  auto j = to_json(sample_record());
  j.erase("phfe");
  const auto p = temp_file("mprobe_bad.jsonl", to_json(sample_record()).dump() + "\n" + j.dump() + "\n");
  try {
    read_records(p);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("phfe"), std::string::npos);
  }
}

TEST(Records, ErrorLinesAreCollected) {
  const FailedCell f{3, "ood", "transport", "boom"};
  const auto p = temp_file("mprobe_fail.jsonl", to_json(sample_record()).dump() + "\n" + to_json(f).dump() + "\n");
  const auto set = read_records(p);
  EXPECT_EQ(set.records.size(), 1u);
  ASSERT_EQ(set.failures.size(), 1u);
  EXPECT_EQ(set.failures[0].kind, "transport");
}

TEST(Records, MetricLookup) {
  const auto r = sample_record();
  EXPECT_EQ(metric_value(r, "top15"), 0.3);
  EXPECT_THROW(metric_value(r, "nope"), ContractError);
}

TEST(Config, DefaultsRoundTripThroughJson) {
  const auto c = default_config();
  EXPECT_NO_THROW(validate(c));
  const auto text = config_to_json(c).dump();
  const auto back = config_from_json(json::parse(text));
  EXPECT_EQ(config_to_json(back).dump(), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIgnoresExecutionOnly) {
  auto a = default_config(), b = default_config();
  b.jobs = 8;
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, Rejections) {
  EXPECT_THROW(config_from_json(json{{"sed", 1}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"geometry", {{"fd_epsilon", "x"}}}}), ConfigError);
  auto c = default_config();
  c.fd_epsilon = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = default_config();
  c.seed_count = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = default_config();
  c.conditions[1].label = "normal";
  EXPECT_THROW(validate(c), ConfigError);
  c = default_config();
  c.conditions[0].kind = "warp_drive";
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST(Config, SeedsSortedUnique) {
  auto c = default_config();
  c.seed_list = {5, 1, 5, 3};
  EXPECT_EQ(c.seeds(), (std::vector<std::uint64_t>{1, 3, 5}));
  c.seed_list.clear();
  c.seed_start = 10;
  c.seed_count = 3;
  EXPECT_EQ(c.seeds(), (std::vector<std::uint64_t>{10, 11, 12}));
}

TEST(Config, CommentsAllowedInFile) {
  const auto p = temp_file("mprobe_cfg.json", "{ // campaign\n \"seed\": 7 }\n");
  EXPECT_EQ(load_config(p).seed, 7u);
}
