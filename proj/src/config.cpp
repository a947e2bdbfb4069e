#include "mprobe/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "mprobe/builtin.hpp"
#include "mprobe/error.hpp"
#include "mprobe/records.hpp"

namespace mprobe {
namespace {

using json = nlohmann::json;

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string("'") + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(std::string("unknown key '") + key + "' in '" + where + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("'") + where + "." + key + "' has the wrong type");
  }
}

ConditionSpec condition_from_json(const json& j, const char* where) {
  check_keys(j, where, {"label", "kind", "params", "endpoint"});
  ConditionSpec c;
  read(j, "label", c.label, where);
  read(j, "kind", c.kind, where);
  read(j, "endpoint", c.endpoint, where);
  if (j.contains("params")) c.params = j.at("params");
  return c;
}

std::vector<ConditionSpec> conditions_from_json(const json& j, const char* where) {
  if (!j.is_array()) throw ConfigError(std::string("'") + where + "' must be an array");
  std::vector<ConditionSpec> out;
  for (const auto& item : j) out.push_back(condition_from_json(item, where));
  return out;
}

ojson condition_to_json(const ConditionSpec& c) {
  ojson j;
  j["label"] = c.label;
  if (c.external()) {
    j["endpoint"] = c.endpoint;
  } else {
    j["kind"] = c.kind;
    j["params"] = c.params;
  }
  return j;
}

void check_conditions(const std::vector<ConditionSpec>& conds, const char* where) {
  if (conds.empty()) throw ConfigError(std::string("'") + where + "' must not be empty");
  std::set<std::string> labels;
  const auto kinds = builtin_kinds();
  for (const auto& c : conds) {
    if (c.label.empty()) throw ConfigError(std::string("every entry of '") + where + "' needs a label");
    if (!labels.insert(c.label).second)
      throw ConfigError("duplicate condition label '" + c.label + "'");
    if (c.external()) {
      if (!c.kind.empty()) throw ConfigError("condition '" + c.label + "' sets both kind and endpoint");
      continue;
    }
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end())
      throw ConfigError("condition '" + c.label + "' has unknown kind '" + c.kind + "'");
    if (!c.params.is_object()) throw ConfigError("condition '" + c.label + "' params must be an object");
  }
}

void positive(double v, const char* name) {
  if (!(v > 0.0)) throw ConfigError(std::string(name) + " must be positive");
}

void positive(std::size_t v, const char* name) {
  if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
}

}  // namespace

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out = seed_list;
  if (out.empty())
    for (std::size_t i = 0; i < seed_count; ++i) out.push_back(seed_start + i);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

RunConfig default_config() {
  RunConfig c;
  c.conditions = {{"normal", "coupled_family", json::object(), ""},
                  {"ood", "decoupled_family", json::object(), ""}};
  c.trajectory_conditions = {{"normal", "identity", json{{"latent_dim", 16}}, ""},
                             {"ood", "curl_sampler", json{{"latent_dim", 16}, {"twist", 2.0}}, ""}};
  c.metric_pairs = {{"lc", "phfe"}, {"ls", "phfe"}, {"lc", "ls"}, {"phfe", "hfe"}};
  return c;
}

RunConfig config_from_json(const json& j) {
  RunConfig c = default_config();
  check_keys(j, "config",
             {"seed", "generator_seed", "seeds", "conditions", "geometry", "imaging", "trajectory",
              "stats", "execution"});
  read(j, "seed", c.seed, "config");
  read(j, "generator_seed", c.generator_seed, "config");
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (s.is_array()) {
      read(j, "seeds", c.seed_list, "config");
    } else {
      check_keys(s, "seeds", {"start", "count"});
      read(s, "start", c.seed_start, "seeds");
      read(s, "count", c.seed_count, "seeds");
    }
  }
  if (j.contains("conditions")) c.conditions = conditions_from_json(j.at("conditions"), "conditions");

  if (j.contains("geometry")) {
    const json& g = j.at("geometry");
    check_keys(g, "geometry",
               {"subspace_dim", "fd_epsilon", "fd_scheme", "neighbor_radius", "neighbor_count",
                "rank_tolerance", "sis_floor", "degeneracy_tolerance"});
    read(g, "subspace_dim", c.subspace_dim, "geometry");
    read(g, "fd_epsilon", c.fd_epsilon, "geometry");
    std::string scheme = c.fd_scheme == FdScheme::central ? "central" : "forward";
    read(g, "fd_scheme", scheme, "geometry");
    if (scheme == "forward")
      c.fd_scheme = FdScheme::forward;
    else if (scheme == "central")
      c.fd_scheme = FdScheme::central;
    else
      throw ConfigError("geometry.fd_scheme must be 'forward' or 'central'");
    read(g, "neighbor_radius", c.neighbor_radius, "geometry");
    read(g, "neighbor_count", c.neighbor_count, "geometry");
    read(g, "rank_tolerance", c.rank_tolerance, "geometry");
    read(g, "sis_floor", c.sis_floor, "geometry");
    read(g, "degeneracy_tolerance", c.degeneracy_tolerance, "geometry");
  }
  if (j.contains("imaging")) {
    const json& m = j.at("imaging");
    check_keys(m, "imaging", {"phfe_mode", "topk_floor", "heatmap_size", "upsample"});
    std::string mode = to_string(c.phfe_mode);
    read(m, "phfe_mode", mode, "imaging");
    c.phfe_mode = parse_phfe_mode(mode);
    read(m, "topk_floor", c.topk_floor, "imaging");
    if (m.contains("heatmap_size")) {
      std::vector<std::size_t> size;
      read(m, "heatmap_size", size, "imaging");
      if (size.size() != 2) throw ConfigError("imaging.heatmap_size must be [height, width]");
      c.heatmap_height = size[0];
      c.heatmap_width = size[1];
    }
    std::string up = c.upsample == Upsample::bilinear ? "bilinear" : "nearest";
    read(m, "upsample", up, "imaging");
    c.upsample = parse_upsample(up);
  }
  if (j.contains("trajectory")) {
    const json& t = j.at("trajectory");
    check_keys(t, "trajectory",
               {"conditions", "steps", "pairs", "pair_seed_start", "tortuosity_epsilon", "n_mc",
                "fraction"});
    if (t.contains("conditions"))
      c.trajectory_conditions = conditions_from_json(t.at("conditions"), "trajectory.conditions");
    read(t, "steps", c.steps, "trajectory");
    read(t, "pairs", c.pairs, "trajectory");
    read(t, "pair_seed_start", c.pair_seed_start, "trajectory");
    read(t, "tortuosity_epsilon", c.tortuosity_epsilon, "trajectory");
    read(t, "n_mc", c.n_mc, "trajectory");
    read(t, "fraction", c.fraction, "trajectory");
  }
  if (j.contains("stats")) {
    const json& s = j.at("stats");
    check_keys(s, "stats",
               {"metric_pairs", "subsample_n", "runs", "n_boot", "ci_level", "ratio_floor"});
    if (s.contains("metric_pairs")) {
      c.metric_pairs.clear();
      for (const auto& p : s.at("metric_pairs")) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
          throw ConfigError("stats.metric_pairs entries must be [\"x\", \"y\"]");
        c.metric_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    }
    read(s, "subsample_n", c.subsample_n, "stats");
    read(s, "runs", c.runs, "stats");
    read(s, "n_boot", c.n_boot, "stats");
    read(s, "ci_level", c.ci_level, "stats");
    read(s, "ratio_floor", c.ratio_floor, "stats");
  }
  if (j.contains("execution")) {
    const json& e = j.at("execution");
    check_keys(e, "execution", {"output_dir", "jobs", "timeout_seconds", "pool_size"});
    std::string dir = c.output_dir.string();
    read(e, "output_dir", dir, "execution");
    c.output_dir = dir;
    read(e, "jobs", c.jobs, "execution");
    read(e, "timeout_seconds", c.timeout_seconds, "execution");
    read(e, "pool_size", c.pool_size, "execution");
  }
  validate(c);
  return c;
}

ojson config_to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["generator_seed"] = c.generator_seed;
  if (c.seed_list.empty())
    j["seeds"] = {{"start", c.seed_start}, {"count", c.seed_count}};
  else
    j["seeds"] = c.seed_list;
  ojson conds = ojson::array();
  for (const auto& cond : c.conditions) conds.push_back(condition_to_json(cond));
  j["conditions"] = std::move(conds);

  ojson g;
  g["subspace_dim"] = c.subspace_dim;
  g["fd_epsilon"] = c.fd_epsilon;
  g["fd_scheme"] = c.fd_scheme == FdScheme::central ? "central" : "forward";
  g["neighbor_radius"] = c.neighbor_radius;
  g["neighbor_count"] = c.neighbor_count;
  g["rank_tolerance"] = c.rank_tolerance;
  g["sis_floor"] = c.sis_floor;
  g["degeneracy_tolerance"] = c.degeneracy_tolerance;
  j["geometry"] = std::move(g);

  ojson m;
  m["phfe_mode"] = to_string(c.phfe_mode);
  m["topk_floor"] = c.topk_floor;
  m["heatmap_size"] = {c.heatmap_height, c.heatmap_width};
  m["upsample"] = c.upsample == Upsample::bilinear ? "bilinear" : "nearest";
  j["imaging"] = std::move(m);

  ojson t;
  ojson tconds = ojson::array();
  for (const auto& cond : c.trajectory_conditions) tconds.push_back(condition_to_json(cond));
  t["conditions"] = std::move(tconds);
  t["steps"] = c.steps;
  t["pairs"] = c.pairs;
  t["pair_seed_start"] = c.pair_seed_start;
  t["tortuosity_epsilon"] = c.tortuosity_epsilon;
  t["n_mc"] = c.n_mc;
  t["fraction"] = c.fraction;
  j["trajectory"] = std::move(t);

  ojson s;
  ojson pairs = ojson::array();
  for (const auto& [x, y] : c.metric_pairs) pairs.push_back({x, y});
  s["metric_pairs"] = std::move(pairs);
  s["subsample_n"] = c.subsample_n;
  s["runs"] = c.runs;
  s["n_boot"] = c.n_boot;
  s["ci_level"] = c.ci_level;
  s["ratio_floor"] = c.ratio_floor;
  j["stats"] = std::move(s);

  ojson e;
  e["output_dir"] = c.output_dir.string();
  e["jobs"] = c.jobs;
  e["timeout_seconds"] = c.timeout_seconds;
  e["pool_size"] = c.pool_size;
  j["execution"] = std::move(e);
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void validate(const RunConfig& c) {
  check_conditions(c.conditions, "conditions");
  check_conditions(c.trajectory_conditions, "trajectory.conditions");
  if (c.seeds().empty()) throw ConfigError("seeds must not be empty");
  positive(c.subspace_dim, "geometry.subspace_dim");
  positive(c.fd_epsilon, "geometry.fd_epsilon");
  positive(c.neighbor_radius, "geometry.neighbor_radius");
  positive(c.neighbor_count, "geometry.neighbor_count");
  positive(c.rank_tolerance, "geometry.rank_tolerance");
  positive(c.sis_floor, "geometry.sis_floor");
  positive(c.degeneracy_tolerance, "geometry.degeneracy_tolerance");
  if (c.topk_floor < 0.0) throw ConfigError("imaging.topk_floor must be >= 0");
  if ((c.heatmap_height == 0) != (c.heatmap_width == 0))
    throw ConfigError("imaging.heatmap_size must be [0, 0] or both positive");
  positive(c.steps, "trajectory.steps");
  positive(c.pairs, "trajectory.pairs");
  positive(c.tortuosity_epsilon, "trajectory.tortuosity_epsilon");
  positive(c.n_mc, "trajectory.n_mc");
  if (!(c.fraction > 0.0 && c.fraction <= 1.0)) throw ConfigError("trajectory.fraction must lie in (0, 1]");
  for (const auto& [x, y] : c.metric_pairs) {
    const auto& names = metric_names();
    for (const auto* m : {&x, &y})
      if (std::find(names.begin(), names.end(), *m) == names.end())
        throw ConfigError("stats.metric_pairs names unknown metric '" + *m + "'");
  }
  positive(c.runs, "stats.runs");
  positive(c.n_boot, "stats.n_boot");
  if (!(c.ci_level > 0.0 && c.ci_level < 1.0)) throw ConfigError("stats.ci_level must lie in (0, 1)");
  positive(c.ratio_floor, "stats.ratio_floor");
  positive(c.jobs, "execution.jobs");
  positive(c.timeout_seconds, "execution.timeout_seconds");
  positive(c.pool_size, "execution.pool_size");
}

std::string config_hash(const RunConfig& c) {
  ojson j = config_to_json(c);
  j.erase("execution");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mprobe
