#include "mprobe/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "mprobe/error.hpp"

namespace mprobe {
namespace {

using json = nlohmann::json;

const json& field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw ContractError(std::string("record is missing field '") + name + "'");
  return *it;
}

double number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) throw ContractError(std::string("record field '") + name + "' is not a number");
  return v.get<double>();
}

std::vector<double> numbers(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array()) throw ContractError(std::string("record field '") + name + "' is not an array");
  return v.get<std::vector<double>>();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ContractError(path.string() + ":" + std::to_string(number) + ": invalid JSON (" +
                          e.what() + ")");
    }
    try {
      f(j);
    } catch (const ContractError& e) {
      throw ContractError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ContractError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

}  // namespace

bool GeometricRecord::has_flag(const std::string& f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

ojson to_json(const GeometricRecord& r) {
  ojson j;
  j["seed"] = r.seed;
  j["condition"] = r.condition;
  j["ls"] = std::isfinite(r.ls) ? ojson(r.ls) : ojson(nullptr);
  j["lc"] = r.lc;
  j["phfe"] = r.phfe;
  j["hfe"] = r.hfe;
  j["sis"] = r.sis;
  ojson coupling;
  coupling["principal"] = r.coupling.principal;
  coupling["similarities"] =
      std::vector<double>(r.coupling.similarities.begin(), r.coupling.similarities.end());
  j["coupling"] = std::move(coupling);
  j["topk_hf"] = r.topk_hf;
  j["flags"] = r.flags;
  return j;
}

ojson to_json(const FailedCell& f) {
  ojson j;
  j["seed"] = f.seed;
  j["condition"] = f.condition;
  j["error"] = {{"kind", f.kind}, {"message", f.message}};
  return j;
}

ojson to_json(const TrajectoryRecord& r) {
  ojson j;
  j["pair"] = r.pair;
  j["seed_a"] = r.seed_a;
  j["seed_b"] = r.seed_b;
  j["condition"] = r.condition;
  j["L"] = r.length;
  j["D"] = r.endpoint_distance;
  j["tau"] = r.tortuosity;
  j["E"] = r.excess;
  j["q90"] = r.tail.q90;
  j["q95"] = r.tail.q95;
  j["max"] = r.tail.max;
  j["quantile_estimator"] = "type7";
  j["increments"] = r.increments;
  ojson latents = ojson::array();
  for (const auto& v : r.latents) latents.push_back(std::vector<double>(v.begin(), v.end()));
  j["latents"] = std::move(latents);
  return j;
}

GeometricRecord geometric_record_from_json(const json& j) {
  GeometricRecord r;
  r.seed = field(j, "seed").get<std::uint64_t>();
  r.condition = field(j, "condition").get<std::string>();
  const json& ls = field(j, "ls");
  r.ls = ls.is_null() ? -std::numeric_limits<double>::infinity() : ls.get<double>();
  r.lc = number(j, "lc");
  r.phfe = number(j, "phfe");
  r.hfe = number(j, "hfe");
  r.sis = number(j, "sis");
  const json& c = field(j, "coupling");
  r.coupling.principal = number(c, "principal");
  const auto sims = numbers(c, "similarities");
  r.coupling.similarities = Eigen::Map<const Vector>(sims.data(), static_cast<Eigen::Index>(sims.size()));
  r.coupling.sis = r.sis;
  const auto topk = numbers(j, "topk_hf");
  require(topk.size() == 4, "topk_hf must hold 4 values");
  std::copy(topk.begin(), topk.end(), r.topk_hf.begin());
  r.flags = field(j, "flags").get<std::vector<std::string>>();
  return r;
}

TrajectoryRecord trajectory_record_from_json(const json& j) {
  TrajectoryRecord r;
  r.pair = field(j, "pair").get<std::uint64_t>();
  r.seed_a = field(j, "seed_a").get<std::uint64_t>();
  r.seed_b = field(j, "seed_b").get<std::uint64_t>();
  r.condition = field(j, "condition").get<std::string>();
  r.length = number(j, "L");
  r.endpoint_distance = number(j, "D");
  r.tortuosity = number(j, "tau");
  r.excess = number(j, "E");
  r.tail = {number(j, "q90"), number(j, "q95"), number(j, "max")};
  r.increments = numbers(j, "increments");
  for (const auto& row : field(j, "latents")) {
    const auto v = row.get<std::vector<double>>();
    r.latents.emplace_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return r;
}

void validate(const GeometricRecord& r) {
  require(!r.condition.empty(), "condition label is empty");
  require(std::isfinite(r.lc) && r.lc >= 0.0, "lc must be finite and >= 0");
  require(std::isfinite(r.phfe) && r.phfe >= 0.0, "phfe must be finite and >= 0");
  require(std::isfinite(r.hfe) && r.hfe >= 0.0, "hfe must be finite and >= 0");
  require(r.sis >= 0.0 && std::isfinite(r.sis), "sis must be finite and >= 0");
  require(std::isfinite(r.ls) || (std::isinf(r.ls) && r.ls < 0.0 && r.has_flag("rank_zero")),
          "ls must be finite unless flagged rank_zero");
  require(r.coupling.principal >= 0.0 && r.coupling.principal <= 1.0,
          "coupling principal similarity must lie in [0, 1]");
  for (const double s : r.coupling.similarities)
    require(s >= 0.0 && s <= 1.0, "coupling similarities must lie in [0, 1]");
  for (const double t : r.topk_hf) require(t >= 0.0 && t <= 1.0, "topk_hf values must lie in [0, 1]");
  for (std::size_t i = 1; i < r.topk_hf.size(); ++i)
    require(r.topk_hf[i] >= r.topk_hf[i - 1], "topk_hf must be nondecreasing in k");
}

void validate(const TrajectoryRecord& r) {
  require(!r.increments.empty(), "trajectory has no increments");
  require(r.latents.empty() || r.latents.size() == r.increments.size() + 1,
          "trajectory needs one more latent than increments");
  double sum = 0.0;
  for (const double d : r.increments) {
    require(d >= 0.0, "increments must be >= 0");
    sum += d;
  }
  require(close(sum, r.length, 1e-10), "L must equal the sum of increments");
  require(r.length >= r.endpoint_distance - 1e-10, "L must be >= D");
  require(r.tortuosity >= 0.0, "tau must be >= 0");
  require(close(r.excess, r.length - r.endpoint_distance, 1e-10), "E must equal L - D");
  require(r.tail.max >= r.tail.q95 && r.tail.q95 >= r.tail.q90, "tail quantiles out of order");
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"ls",   "lc",    "phfe",  "hfe",  "sis",
                                                 "top5", "top10", "top15", "top20"};
  return names;
}

double metric_value(const GeometricRecord& r, const std::string& name) {
  if (name == "ls") return r.ls;
  if (name == "lc") return r.lc;
  if (name == "phfe") return r.phfe;
  if (name == "hfe") return r.hfe;
  if (name == "sis") return r.sis;
  if (name == "top5") return r.topk_hf[0];
  if (name == "top10") return r.topk_hf[1];
  if (name == "top15") return r.topk_hf[2];
  if (name == "top20") return r.topk_hf[3];
  throw ContractError("unknown record metric '" + name + "'");
}

std::vector<std::string> RecordSet::conditions() const {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (std::find(out.begin(), out.end(), r.condition) == out.end()) out.push_back(r.condition);
  return out;
}

RecordSet read_records(const std::filesystem::path& path) {
  RecordSet set;
  for_each_line(path, [&](const json& j) {
    if (j.contains("error")) {
      FailedCell f;
      f.seed = field(j, "seed").get<std::uint64_t>();
      f.condition = field(j, "condition").get<std::string>();
      f.kind = j["error"].value("kind", "");
      f.message = j["error"].value("message", "");
      set.failures.push_back(std::move(f));
      return;
    }
    auto r = geometric_record_from_json(j);
    validate(r);
    set.records.push_back(std::move(r));
  });
  return set;
}

std::vector<TrajectoryRecord> read_trajectories(const std::filesystem::path& path) {
  std::vector<TrajectoryRecord> out;
  for_each_line(path, [&](const json& j) {
    if (j.contains("error")) return;
    auto r = trajectory_record_from_json(j);
    validate(r);
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace mprobe
