#include "mprobe/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "mprobe/builtin.hpp"
#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/wire.hpp"

namespace mprobe {
namespace fs = std::filesystem;
namespace {

using json = nlohmann::json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

ojson opt_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? ojson(*v) : ojson(nullptr);
}

ojson finite_json(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, text);
  fs::rename(tmp, path);
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const EvaluationError*>(&e)) return "evaluation";
  if (dynamic_cast<const TransportError*>(&e)) return "transport";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  return "error";
}

bool all_concurrent_safe(const std::vector<GeneratorPtr>& gens) {
  return std::all_of(gens.begin(), gens.end(),
                     [](const GeneratorPtr& g) { return g->descriptor().concurrent_safe; });
}

// Runs compute(i) for i in [0, n) on up to `jobs` threads and hands results
// to sink(i, result) strictly in index order. sink returns false to stop.
template <typename Compute, typename Sink>
void ordered_pool(std::size_t n, std::size_t jobs, Compute compute, Sink sink) {
  using Result = decltype(compute(std::size_t{0}));
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      if (!sink(i, compute(i))) return;
    return;
  }
  std::vector<std::optional<Result>> slots(n);
  std::mutex mutex;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  auto worker = [&] {
    while (!stop) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        Result r = compute(i);
        std::lock_guard lock(mutex);
        slots[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
      ready.notify_all();
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) threads.emplace_back(worker);
  try {
    for (std::size_t i = 0; i < n; ++i) {
      std::unique_lock lock(mutex);
      ready.wait(lock, [&] { return slots[i].has_value() || failure; });
      if (!slots[i]) break;
      Result r = std::move(*slots[i]);
      slots[i].reset();
      lock.unlock();
      if (!sink(i, std::move(r))) break;
    }
  } catch (...) {
    stop = true;
    for (auto& t : threads) t.join();
    throw;
  }
  stop = true;
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

GeneratorFactory resolve_factory(const GeneratorFactory& f, const RunConfig& c) {
  if (f) return f;
  return [&c](const ConditionSpec& spec) { return make_condition_generator(spec, c); };
}

const ConditionSpec& find_condition(const std::vector<ConditionSpec>& conds,
                                    const std::string& label) {
  for (const auto& cond : conds)
    if (cond.label == label) return cond;
  throw ConfigError("no condition labelled '" + label + "'");
}

}  // namespace

// ---- probing ----------------------------------------------------------------

ProbeOptions probe_options(const RunConfig& c) {
  ProbeOptions o;
  o.fd_epsilon = c.fd_epsilon;
  o.scheme = c.fd_scheme;
  o.neighbor_radius = c.neighbor_radius;
  o.neighbor_count = c.neighbor_count;
  o.rank_tolerance = c.rank_tolerance;
  o.sis_floor = c.sis_floor;
  o.degeneracy_tolerance = c.degeneracy_tolerance;
  o.phfe_mode = c.phfe_mode;
  o.topk_floor = c.topk_floor;
  return o;
}

GeometricRecord probe_sample(const Generator& gen, const LatentPoint& z, const SubspaceBasis& basis,
                             const ProbeOptions& o, std::uint64_t neighbor_seed) {
  const Decomposer decompose = o.decomposer ? o.decomposer : Decomposer(eigendecompose);
  GeometricRecord r;
  const auto jac = fd_jacobian(gen, z, basis, o.fd_epsilon, o.scheme);
  const auto spectrum = decompose(metric_tensor(jac));
  r.ls = local_scaling(spectrum, o.rank_tolerance);
  if (!std::isfinite(r.ls)) r.flags.push_back("rank_zero");

  NeighborOptions no;
  no.radius = o.neighbor_radius;
  no.count = o.neighbor_count;
  no.epsilon = o.fd_epsilon;
  no.scheme = o.scheme;
  no.seed = neighbor_seed;
  no.decomposer = o.decomposer;
  const auto neighbors = neighbor_spectra(gen, z, basis, no);
  const auto lc = local_complexity(z, spectrum, neighbors, o.degeneracy_tolerance);
  r.lc = lc.value;
  if (lc.degenerate) r.flags.push_back("degenerate");
  r.coupling = spectral_isolation(spectrum, neighbors, o.sis_floor);
  r.sis = r.coupling.sis;

  const auto p1 = principal_projection(jac, spectrum, gen.output_shape());
  r.phfe = phfe(p1, o.phfe_mode);
  r.hfe = variance_energy(laplacian(jac.base));
  const Vector m = laplacian_magnitude(jac.base);
  for (std::size_t i = 0; i < kTopkLevels.size(); ++i)
    r.topk_hf[i] = topk_share(m, kTopkLevels[i], o.topk_floor);
  return r;
}

GeneratorPtr make_condition_generator(const ConditionSpec& spec, const RunConfig& c) {
  if (spec.external()) return connect_external(spec.endpoint, c.timeout_seconds, c.pool_size);
  return make_builtin(spec.kind, spec.params, c.generator_seed);
}

std::uint64_t neighbor_seed_for(const RunConfig& c, std::uint64_t seed) {
  return derive_seed(derive_seed(c.seed, streams::neighbors), seed);
}

std::size_t effective_subspace_dim(const RunConfig& c, std::size_t latent_dim) {
  return std::min(c.subspace_dim, latent_dim);
}

// ---- diagnose ---------------------------------------------------------------

DiagnoseResult run_diagnose(const RunConfig& c, const DiagnoseOptions& options) {
  validate(c);
  const auto factory = resolve_factory(options.factory, c);
  fs::create_directories(c.output_dir);
  DiagnoseResult result;
  result.records = c.output_dir / "records.jsonl";
  result.manifest = c.output_dir / "manifest.json";

  std::vector<GeneratorPtr> gens;
  std::vector<SubspaceBasis> bases;
  ojson dims = ojson::object();
  for (const auto& cond : c.conditions) {
    gens.push_back(factory(cond));
    const std::size_t e = gens.back()->latent_dim();
    const std::size_t p = effective_subspace_dim(c, e);
    bases.push_back(sample_orthonormal_basis(e, p, c.seed));
    dims[cond.label] = p;
  }
  const std::size_t jobs = all_concurrent_safe(gens) ? c.jobs : 1;

  struct Cell {
    std::uint64_t seed;
    std::size_t cond;
  };
  std::vector<std::size_t> order(c.conditions.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return c.conditions[a].label < c.conditions[b].label;
  });
  std::vector<Cell> cells;
  for (const auto seed : c.seeds())
    for (const std::size_t k : order) cells.push_back({seed, k});
  result.total = cells.size();

  const std::string hash = config_hash(c);
  ojson entries = ojson::array();
  std::string started_at = utc_now();
  std::uint64_t end_offset = 0;
  if (fs::exists(result.manifest)) {
    ojson m;
    try {
      std::ifstream in(result.manifest);
      m = ojson::parse(in);
    } catch (const ojson::exception&) {
      m = ojson::object();
    }
    if (m.value("config_hash", "") != hash && m.contains("config_hash"))
      throw ConfigError("'" + c.output_dir.string() +
                        "' holds a campaign with a different config; use another --out-dir");
    started_at = m.value("started_at", started_at);
    std::uint64_t offset = 0;
    if (m.contains("records") && m["records"].is_array()) {
      for (const auto& e : m["records"]) {
        const std::size_t i = entries.size();
        if (i >= cells.size() || e.value("seed", ~0ull) != cells[i].seed ||
            e.value("condition", "") != c.conditions[cells[i].cond].label ||
            e.value("offset", ~0ull) != offset)
          break;
        offset += e.value("length", 0ull);
        entries.push_back(e);
      }
    }
    end_offset = offset;
    if (!fs::exists(result.records) || fs::file_size(result.records) < end_offset) {
      entries = ojson::array();
      end_offset = 0;
    }
  }
  {
    std::ofstream touch(result.records, std::ios::binary | std::ios::app);
    if (!touch) throw Error("cannot open '" + result.records.string() + "' for writing");
  }
  fs::resize_file(result.records, end_offset);
  result.reused = entries.size();
  for (const auto& e : entries)
    if (e.value("status", "") != "ok") ++result.failed;

  auto write_manifest = [&](bool complete) {
    ojson m;
    m["tool"] = "mprobe";
    m["version"] = kToolVersion;
    m["config_hash"] = hash;
    m["status"] = complete ? "complete" : "running";
    m["subspace_dims"] = dims;
    m["cells_total"] = cells.size();
    m["started_at"] = started_at;
    m["updated_at"] = utc_now();
    m["records"] = entries;
    write_atomic(result.manifest, m.dump(2) + "\n");
  };

  std::ofstream out(result.records, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open '" + result.records.string() + "' for writing");
  const ProbeOptions popts = probe_options(c);
  const std::size_t first = entries.size();
  const std::size_t pending = cells.size() - first;

  struct Line {
    std::string text;
    bool ok;
  };
  auto compute = [&](std::size_t i) -> Line {
    const Cell& cell = cells[first + i];
    const auto& gen = *gens[cell.cond];
    const auto& label = c.conditions[cell.cond].label;
    try {
      const LatentPoint z = latent_from_seed(cell.seed, static_cast<Eigen::Index>(gen.latent_dim()));
      auto rec = probe_sample(gen, z, bases[cell.cond], popts, neighbor_seed_for(c, cell.seed));
      rec.seed = cell.seed;
      rec.condition = label;
      return {to_json(rec).dump() + "\n", true};
    } catch (const Error& e) {
      return {to_json(FailedCell{cell.seed, label, error_kind(e), e.what()}).dump() + "\n", false};
    }
  };
  auto sink = [&](std::size_t i, Line line) {
    const Cell& cell = cells[first + i];
    out << line.text;
    out.flush();
    if (!out) throw Error("failed writing '" + result.records.string() + "'");
    ojson e;
    e["seed"] = cell.seed;
    e["condition"] = c.conditions[cell.cond].label;
    e["offset"] = end_offset;
    e["length"] = line.text.size();
    e["status"] = line.ok ? "ok" : "error";
    e["completed_at"] = utc_now();
    entries.push_back(std::move(e));
    end_offset += line.text.size();
    ++result.written;
    if (!line.ok) ++result.failed;
    write_manifest(entries.size() == cells.size());
    return result.written < options.max_new_records;
  };
  if (pending == 0) write_manifest(true);
  if (options.max_new_records > 0) ordered_pool(pending, jobs, compute, sink);
  result.complete = entries.size() == cells.size();
  return result;
}

// ---- correlate --------------------------------------------------------------

CorrelateResult correlate_records(const RecordSet& set,
                                  const std::vector<std::pair<std::string, std::string>>& pairs,
                                  std::size_t subsample_n, std::size_t runs, std::uint64_t seed) {
  CorrelateResult out;
  const auto conditions = set.conditions();
  if (conditions.empty()) throw ContractError("no records to correlate");
  for (const auto& cond : conditions) {
    for (const auto& [mx, my] : pairs) {
      CorrelationRow row{cond, mx, my, 0, 0, {}};
      std::vector<double> xs, ys;
      for (const auto& r : set.records) {
        if (r.condition != cond) continue;
        const double x = metric_value(r, mx), y = metric_value(r, my);
        if (std::isfinite(x) && std::isfinite(y)) {
          xs.push_back(x);
          ys.push_back(y);
        } else {
          ++row.excluded;
        }
      }
      row.pool = xs.size();
      const std::size_t n = subsample_n == 0 ? xs.size() : subsample_n;
      if (n > xs.size())
        throw ContractError("subsample size " + std::to_string(n) + " exceeds the " +
                            std::to_string(xs.size()) + " usable records of condition '" + cond +
                            "'");
      try {
        row.summary = subsampled_correlation(xs, ys, n, runs, seed);
      } catch (const UndefinedError&) {
        row.summary.rho_mean = std::nan("");
        row.summary.rho_std = std::nan("");
        row.summary.skipped = runs;
        row.summary.subsample_size = n;
      }
      out.rows.push_back(std::move(row));
    }
  }
  const std::string baseline =
      std::find(conditions.begin(), conditions.end(), "normal") != conditions.end() ? "normal"
                                                                                   : conditions[0];
  auto rho = [&](const std::string& cond, const std::string& x, const std::string& y) {
    for (const auto& row : out.rows)
      if (row.condition == cond && row.x == x && row.y == y) return row.summary.rho_mean;
    return std::nan("");
  };
  for (const auto& cond : conditions) {
    if (cond == baseline) continue;
    for (const auto& [mx, my] : pairs) {
      DropRow d{mx, my, baseline, cond, rho(baseline, mx, my), rho(cond, mx, my), std::nullopt};
      if (std::isfinite(d.rho_baseline) && std::isfinite(d.rho_condition) && d.rho_baseline != 0.0)
        d.drop = correlation_drop(d.rho_baseline, d.rho_condition);
      out.drops.push_back(std::move(d));
    }
  }
  return out;
}

void write_correlate(const CorrelateResult& r, const fs::path& out_dir) {
  std::string csv =
      "condition,x,y,pool,excluded,subsample_n,runs,skipped,rho_mean,rho_std_across_runs,"
      "ci_low,ci_high\n";
  ojson rows = ojson::array();
  for (const auto& row : r.rows) {
    const auto& s = row.summary;
    csv += row.condition + "," + row.x + "," + row.y + "," + std::to_string(row.pool) + "," +
           std::to_string(row.excluded) + "," + std::to_string(s.subsample_size) + "," +
           std::to_string(s.runs) + "," + std::to_string(s.skipped) + "," + num(s.rho_mean) + "," +
           num(s.rho_std) + "," + num(s.ci_low) + "," + num(s.ci_high) + "\n";
    ojson j;
    j["condition"] = row.condition;
    j["x"] = row.x;
    j["y"] = row.y;
    j["pool"] = row.pool;
    j["excluded"] = row.excluded;
    j["subsample_n"] = s.subsample_size;
    j["runs"] = s.runs;
    j["skipped_runs"] = s.skipped;
    j["rho_mean"] = finite_json(s.rho_mean);
    j["rho_std_across_runs"] = finite_json(s.rho_std);
    j["rho_ci95_of_run_mean"] = {opt_json(s.ci_low), opt_json(s.ci_high)};
    rows.push_back(std::move(j));
  }
  std::string dcsv = "x,y,baseline,condition,rho_baseline,rho_condition,drop\n";
  ojson drops = ojson::array();
  for (const auto& d : r.drops) {
    dcsv += d.x + "," + d.y + "," + d.baseline + "," + d.condition + "," + num(d.rho_baseline) +
            "," + num(d.rho_condition) + "," + num(d.drop) + "\n";
    ojson j;
    j["x"] = d.x;
    j["y"] = d.y;
    j["baseline"] = d.baseline;
    j["condition"] = d.condition;
    j["rho_baseline"] = finite_json(d.rho_baseline);
    j["rho_condition"] = finite_json(d.rho_condition);
    j["drop"] = opt_json(d.drop);
    drops.push_back(std::move(j));
  }
  write_text(out_dir / "correlations.csv", csv);
  write_text(out_dir / "correlation_drops.csv", dcsv);
  ojson all;
  all["correlations"] = std::move(rows);
  all["drops"] = std::move(drops);
  write_text(out_dir / "correlations.json", all.dump(2) + "\n");
}

// ---- ood --------------------------------------------------------------------

DetectionResult detect_ood(const RecordSet& set, const std::string& positive_label, double floor) {
  const auto conditions = set.conditions();
  if (conditions.size() < 2)
    throw ContractError("OOD detection needs records from at least two conditions");
  DetectionResult out;
  if (!positive_label.empty()) {
    if (std::find(conditions.begin(), conditions.end(), positive_label) == conditions.end())
      throw ContractError("no records carry condition '" + positive_label + "'");
    out.positive_label = positive_label;
  } else {
    out.positive_label =
        std::find(conditions.begin(), conditions.end(), "ood") != conditions.end()
            ? "ood"
            : conditions.back();
  }
  for (const auto& r : set.records) {
    out.seeds.push_back(r.seed);
    out.conditions.push_back(r.condition);
    out.lc.push_back(r.lc);
    out.ls.push_back(r.ls);
    out.phfe.push_back(r.phfe);
    out.scores.push_back(ood_score(r.lc, r.phfe, floor));
    out.labels.push_back(r.condition == out.positive_label);
  }
  out.auroc = auroc(out.scores, out.labels);
  out.auroc_lc = auroc(out.lc, out.labels);
  out.auroc_ls = auroc(out.ls, out.labels);
  return out;
}

void write_detection(const DetectionResult& r, const fs::path& out_dir) {
  const auto n_pos = static_cast<std::size_t>(std::count(r.labels.begin(), r.labels.end(), true));
  ojson j;
  j["positive_label"] = r.positive_label;
  j["n_positive"] = n_pos;
  j["n_negative"] = r.labels.size() - n_pos;
  j["auroc_lc_over_phfe"] = r.auroc;
  j["auroc_lc"] = r.auroc_lc;
  j["auroc_ls"] = r.auroc_ls;
  write_text(out_dir / "ood.json", j.dump(2) + "\n");
  std::string csv = "seed,condition,label,lc,ls,phfe,score\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i)
    csv += std::to_string(r.seeds[i]) + "," + r.conditions[i] + "," + (r.labels[i] ? "1" : "0") +
           "," + num(r.lc[i]) + "," + num(r.ls[i]) + "," + num(r.phfe[i]) + "," +
           num(r.scores[i]) + "\n";
  write_text(out_dir / "ood_scores.csv", csv);
}

// ---- trajectory -------------------------------------------------------------

double trajectory_metric(const TrajectoryRecord& r, const std::string& name) {
  if (name == "L") return r.length;
  if (name == "D") return r.endpoint_distance;
  if (name == "tau") return r.tortuosity;
  if (name == "E") return r.excess;
  if (name == "q90") return r.tail.q90;
  if (name == "q95") return r.tail.q95;
  if (name == "max") return r.tail.max;
  throw ContractError("unknown trajectory metric '" + name + "'");
}

TrajectoryResult run_trajectory(const RunConfig& c, const GeneratorFactory& f) {
  validate(c);
  const auto& conds = c.trajectory_conditions;
  if (conds.size() != 2)
    throw ConfigError("trajectory needs exactly two conditions, got " + std::to_string(conds.size()));
  const auto factory = resolve_factory(f, c);
  std::vector<GeneratorPtr> gens;
  for (const auto& cond : conds) gens.push_back(factory(cond));
  const std::size_t e = gens[0]->latent_dim();
  if (gens[1]->latent_dim() != e)
    throw ConfigError("trajectory conditions must share latent_dim");
  const std::size_t jobs = all_concurrent_safe(gens) ? c.jobs : 1;

  struct Cell {
    std::size_t pair;
    std::size_t cond;
  };
  std::vector<Cell> cells;
  for (std::size_t p = 0; p < c.pairs; ++p)
    for (std::size_t k = 0; k < conds.size(); ++k) cells.push_back({p, k});

  TrajectoryResult result;
  result.baseline = conds[0].label;
  result.condition = conds[1].label;
  struct Outcome {
    std::optional<TrajectoryRecord> record;
    FailedCell failure;
  };
  auto compute = [&](std::size_t i) -> Outcome {
    const Cell& cell = cells[i];
    const std::uint64_t seed_a = c.pair_seed_start + 2 * cell.pair;
    const std::uint64_t seed_b = seed_a + 1;
    try {
      const auto path = build_path(latent_from_seed(seed_a, static_cast<Eigen::Index>(e)),
                                   latent_from_seed(seed_b, static_cast<Eigen::Index>(e)), c.steps);
      auto rec = induce_trajectory(*gens[cell.cond], path, c.tortuosity_epsilon);
      rec.condition = conds[cell.cond].label;
      rec.pair = cell.pair;
      rec.seed_a = seed_a;
      rec.seed_b = seed_b;
      return {std::move(rec), {}};
    } catch (const Error& err) {
      return {std::nullopt, FailedCell{cell.pair, conds[cell.cond].label, error_kind(err), err.what()}};
    }
  };

  fs::create_directories(c.output_dir);
  const fs::path jsonl = c.output_dir / "trajectories.jsonl";
  std::ofstream out(jsonl, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + jsonl.string() + "' for writing");
  std::set<std::size_t> failed;
  std::string pairs_csv = "pair,seed_a,seed_b,condition,L,D,tau,E,q90,q95,max\n";
  ordered_pool(cells.size(), jobs, compute, [&](std::size_t i, Outcome o) {
    if (o.record) {
      const auto& r = *o.record;
      out << to_json(r).dump() << "\n";
      pairs_csv += std::to_string(r.pair) + "," + std::to_string(r.seed_a) + "," +
                   std::to_string(r.seed_b) + "," + r.condition + "," + num(r.length) + "," +
                   num(r.endpoint_distance) + "," + num(r.tortuosity) + "," + num(r.excess) + "," +
                   num(r.tail.q90) + "," + num(r.tail.q95) + "," + num(r.tail.max) + "\n";
      result.records.push_back(std::move(*o.record));
    } else {
      ojson j;
      j["pair"] = cells[i].pair;
      j["condition"] = o.failure.condition;
      j["error"] = {{"kind", o.failure.kind}, {"message", o.failure.message}};
      out << j.dump() << "\n";
      failed.insert(cells[i].pair);
    }
    return true;
  });
  out.flush();
  if (!out) throw Error("failed writing '" + jsonl.string() + "'");
  result.failed_pairs = failed.size();

  std::map<std::size_t, std::array<const TrajectoryRecord*, 2>> by_pair;
  for (const auto& r : result.records) {
    if (failed.count(r.pair)) continue;
    by_pair[r.pair][r.condition == conds[0].label ? 0 : 1] = &r;
  }
  if (by_pair.empty()) throw ContractError("no trajectory pair completed under both conditions");
  const std::vector<std::string> metrics = {"L", "tau", "E", "q90", "q95", "max"};
  std::string summary_csv =
      "metric,baseline,condition,pairs,ratio_mean,ratio_std_across_resamples,diff_mean,"
      "diff_std_across_resamples,frac,resamples,skipped\n";
  ojson summary = ojson::array();
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    std::vector<double> a, b;
    for (const auto& [pair, recs] : by_pair) {
      a.push_back(trajectory_metric(*recs[0], metrics[m]));
      b.push_back(trajectory_metric(*recs[1], metrics[m]));
    }
    TrajectorySummaryRow row{metrics[m],
                             monte_carlo_ratio(a, b, c.n_mc, c.fraction, derive_seed(c.seed, m)),
                             paired_frac(a, b)};
    summary_csv += row.metric + "," + result.baseline + "," + result.condition + "," +
                   std::to_string(a.size()) + "," + num(row.mc.ratio_mean) + "," +
                   num(row.mc.ratio_std) + "," + num(row.mc.diff_mean) + "," +
                   num(row.mc.diff_std) + "," + num(row.frac) + "," +
                   std::to_string(row.mc.resamples) + "," + std::to_string(row.mc.skipped) + "\n";
    ojson j;
    j["metric"] = row.metric;
    j["pairs"] = a.size();
    j["ratio_mean"] = finite_json(row.mc.ratio_mean);
    j["ratio_std_across_resamples"] = finite_json(row.mc.ratio_std);
    j["diff_mean"] = row.mc.diff_mean;
    j["diff_std_across_resamples"] = row.mc.diff_std;
    j["frac"] = row.frac;
    j["resamples"] = row.mc.resamples;
    j["skipped_resamples"] = row.mc.skipped;
    summary.push_back(std::move(j));
    result.summary.push_back(std::move(row));
  }
  write_text(c.output_dir / "trajectory_pairs.csv", pairs_csv);
  write_text(c.output_dir / "trajectory_summary.csv", summary_csv);
  ojson sj;
  sj["baseline"] = result.baseline;
  sj["condition"] = result.condition;
  sj["steps"] = c.steps;
  sj["n_mc"] = c.n_mc;
  sj["fraction"] = c.fraction;
  sj["quantile_estimator"] = "type7";
  sj["failed_pairs"] = result.failed_pairs;
  sj["metrics"] = std::move(summary);
  write_text(c.output_dir / "trajectory_summary.json", sj.dump(2) + "\n");
  return result;
}

// ---- heatmap ----------------------------------------------------------------

HeatmapResult run_heatmap(const RunConfig& c, std::uint64_t seed, const std::string& condition,
                          const fs::path& prefix, const GeneratorFactory& f) {
  validate(c);
  const auto factory = resolve_factory(f, c);
  const auto gen = factory(find_condition(c.conditions, condition));
  const std::size_t e = gen->latent_dim();
  const auto basis = sample_orthonormal_basis(e, effective_subspace_dim(c, e), c.seed);
  const LatentPoint z = latent_from_seed(seed, static_cast<Eigen::Index>(e));
  const auto jac = fd_jacobian(*gen, z, basis, c.fd_epsilon, c.fd_scheme);
  const auto spectrum = eigendecompose(metric_tensor(jac));
  const auto& shape = gen->output_shape();

  HeatmapResult out;
  out.jacobian = jacobian_norm_map(jac, shape);
  out.laplacian = laplacian_heat_map(principal_projection(jac, spectrum, shape));
  const std::size_t h = c.heatmap_height ? c.heatmap_height : shape.height;
  const std::size_t w = c.heatmap_width ? c.heatmap_width : shape.width;
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  for (const auto& [name, map] : {std::pair{"jacobian", &out.jacobian}, {"laplacian", &out.laplacian}}) {
    const fs::path png = prefix.string() + "_" + name + ".png";
    const fs::path csv = prefix.string() + "_" + name + ".csv";
    write_png(render_heatmap(*map, h, w, c.upsample), png);
    write_map_csv(*map, csv);
    out.files.push_back(png);
    out.files.push_back(csv);
  }
  return out;
}

// ---- hf-transfer ------------------------------------------------------------

HfTransferResult hf_transfer(const RecordSet& set, std::size_t n_boot, double level,
                             std::uint64_t seed, double floor) {
  const auto conditions = set.conditions();
  if (conditions.empty()) throw ContractError("no records for hf-transfer");
  std::map<std::string, std::map<std::uint64_t, const GeometricRecord*>> by_cond;
  std::set<std::uint64_t> all_seeds;
  std::vector<std::string> problems;
  for (const auto& r : set.records) {
    if (!by_cond[r.condition].emplace(r.seed, &r).second)
      problems.push_back("seed " + std::to_string(r.seed) + " appears twice under '" +
                         r.condition + "'");
    all_seeds.insert(r.seed);
  }
  for (const auto& cond : conditions)
    for (const auto s : all_seeds)
      if (!by_cond[cond].count(s))
        problems.push_back("seed " + std::to_string(s) + " has no '" + cond + "' record");
  if (!problems.empty()) {
    std::string msg = "unpaired records: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw PairingError(msg);
  }

  HfTransferResult out;
  std::map<std::string, std::vector<double>> etas;
  for (const auto& cond : conditions) {
    HfConditionRow row;
    row.condition = cond;
    std::vector<double> phfe, hfe, eta;
    std::array<std::vector<double>, 4> topk;
    for (const auto& [s, r] : by_cond[cond]) {
      phfe.push_back(r->phfe);
      hfe.push_back(r->hfe);
      eta.push_back(transfer_efficiency(r->hfe, r->phfe, floor));
      for (std::size_t k = 0; k < 4; ++k) topk[k].push_back(r->topk_hf[k]);
    }
    row.n = phfe.size();
    row.phfe_median = median(phfe);
    row.hfe_median = median(hfe);
    row.eta_median = median(eta);
    row.eta_of_medians = transfer_efficiency(row.hfe_median, row.phfe_median, floor);
    for (std::size_t k = 0; k < 4; ++k) row.topk_median[k] = median(topk[k]);
    etas[cond] = std::move(eta);
    out.rows.push_back(row);
  }
  const std::string baseline =
      std::find(conditions.begin(), conditions.end(), "normal") != conditions.end() ? "normal"
                                                                                   : conditions[0];
  for (const auto& cond : conditions) {
    if (cond == baseline) continue;
    HfDeltaRow d;
    d.baseline = baseline;
    d.condition = cond;
    std::vector<double> diff;
    for (std::size_t i = 0; i < etas[cond].size(); ++i) diff.push_back(etas[cond][i] - etas[baseline][i]);
    d.pairs = diff.size();
    double s = 0.0;
    for (const double v : diff) s += v - diff.front();
    d.delta_eta = diff.front() + s / static_cast<double>(diff.size());
    if (diff.size() >= 2) {
      const auto [lo, hi] = bootstrap_ci(diff, n_boot, level, seed);
      d.ci_low = lo;
      d.ci_high = hi;
    }
    out.deltas.push_back(d);
  }
  return out;
}

void write_hf_transfer(const HfTransferResult& r, const fs::path& out_dir) {
  std::string csv =
      "condition,n,phfe_median,hfe_median,eta_median,eta_of_medians,top5_hf,top10_hf,top15_hf,"
      "top20_hf\n";
  ojson rows = ojson::array();
  for (const auto& row : r.rows) {
    csv += row.condition + "," + std::to_string(row.n) + "," + num(row.phfe_median) + "," +
           num(row.hfe_median) + "," + num(row.eta_median) + "," + num(row.eta_of_medians);
    for (const double t : row.topk_median) csv += "," + num(t);
    csv += "\n";
    ojson j;
    j["condition"] = row.condition;
    j["n"] = row.n;
    j["phfe_median"] = row.phfe_median;
    j["hfe_median"] = row.hfe_median;
    j["eta_median"] = row.eta_median;
    j["eta_of_medians"] = row.eta_of_medians;
    j["topk_hf_median"] = {{"top5", row.topk_median[0]},
                           {"top10", row.topk_median[1]},
                           {"top15", row.topk_median[2]},
                           {"top20", row.topk_median[3]}};
    rows.push_back(std::move(j));
  }
  std::string dcsv = "baseline,condition,pairs,delta_eta,ci_low,ci_high\n";
  ojson deltas = ojson::array();
  for (const auto& d : r.deltas) {
    dcsv += d.baseline + "," + d.condition + "," + std::to_string(d.pairs) + "," +
            num(d.delta_eta) + "," + num(d.ci_low) + "," + num(d.ci_high) + "\n";
    ojson j;
    j["baseline"] = d.baseline;
    j["condition"] = d.condition;
    j["pairs"] = d.pairs;
    j["delta_eta"] = d.delta_eta;
    j["ci"] = {opt_json(d.ci_low), opt_json(d.ci_high)};
    deltas.push_back(std::move(j));
  }
  write_text(out_dir / "hf_transfer.csv", csv);
  write_text(out_dir / "hf_transfer_delta.csv", dcsv);
  ojson all;
  all["conditions"] = std::move(rows);
  all["paired_delta_eta"] = std::move(deltas);
  write_text(out_dir / "hf_transfer.json", all.dump(2) + "\n");
}

}  // namespace mprobe
