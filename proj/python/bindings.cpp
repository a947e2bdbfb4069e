#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mprobe/builtin.hpp"
#include "mprobe/campaign.hpp"
#include "mprobe/error.hpp"
#include "mprobe/imaging.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/stats.hpp"
#include "mprobe/trajectory.hpp"
#include "mprobe/wire.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mprobe;
using nlohmann::json;

namespace {

RunConfig parse_config(const std::string& text) {
  const auto c = config_from_json(json::parse(text, nullptr, true, true));
  validate(c);
  return c;
}

py::object optional(const std::optional<double>& v) {
  return v ? py::object(py::float_(*v)) : py::object(py::none());
}

py::dict mc_dict(const MonteCarloSummary& s) {
  py::dict d;
  d["ratio_mean"] = s.ratio_mean;
  d["ratio_std"] = s.ratio_std;
  d["diff_mean"] = s.diff_mean;
  d["diff_std"] = s.diff_std;
  d["resamples"] = s.resamples;
  d["skipped"] = s.skipped;
  return d;
}

Vector flat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
}

py::array_t<double> as_image(const ImageTensor& img) {
  const auto& s = img.shape();
  py::array_t<double> out({s.channels, s.height, s.width});
  std::copy(img.data().data(), img.data().data() + img.data().size(), out.mutable_data());
  return out;
}

ImageTensor to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw DimensionError("expected a (C, H, W) array");
  const ImageShape s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                     static_cast<std::size_t>(a.shape(2))};
  return ImageTensor(s, flat(a));
}

// Holds either a built-in or an external generator.
struct PyGenerator {
  GeneratorPtr gen;
  AnalyticGeneratorPtr analytic;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.attr("__version__") = kToolVersion;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<UndefinedError>(m, "UndefinedError", base);
  py::register_exception<EvaluationError>(m, "EvaluationError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<PairingError>(m, "PairingError", base);
  auto transport = py::register_exception<TransportError>(m, "TransportError", base);
  py::register_exception<ConnectionError>(m, "ConnectionError", transport);
  py::register_exception<VersionMismatchError>(m, "VersionMismatchError", transport);
  py::register_exception<TimeoutError>(m, "TimeoutError", transport);
  py::register_exception<MalformedFrameError>(m, "MalformedFrameError", transport);
  py::register_exception<DisconnectError>(m, "DisconnectError", transport);
  py::register_exception<RemoteError>(m, "RemoteError", transport);

  m.def("default_config", [] { return config_to_json(default_config()).dump(); });
  m.def("normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)).dump(); });
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); });
  m.def("builtin_kinds", &builtin_kinds);

  py::class_<PyGenerator>(m, "Generator")
      .def_property_readonly("name", [](const PyGenerator& g) { return g.gen->descriptor().name; })
      .def_property_readonly("latent_dim", [](const PyGenerator& g) { return g.gen->latent_dim(); })
      .def_property_readonly("shape",
                             [](const PyGenerator& g) {
                               const auto& s = g.gen->output_shape();
                               return py::make_tuple(s.channels, s.height, s.width);
                             })
      .def_property_readonly("concurrent_safe",
                             [](const PyGenerator& g) { return g.gen->descriptor().concurrent_safe; })
      .def(
          "evaluate",
          [](const PyGenerator& g, const py::array_t<double, py::array::c_style | py::array::forcecast>& z) {
            const Vector v = flat(z);
            ImageTensor out;
            {
              py::gil_scoped_release release;
              out = g.gen->evaluate(v);
            }
            return as_image(out);
          },
          py::arg("z"))
      .def(
          "jacobian",
          [](const PyGenerator& g, const py::array_t<double, py::array::c_style | py::array::forcecast>& z) {
            if (!g.analytic) throw ContractError("jacobian is only available for built-in generators");
            const Vector v = flat(z);
            if (static_cast<std::size_t>(v.size()) != g.analytic->latent_dim())
              throw DimensionError("latent length does not match the generator");
            return Matrix(g.analytic->jacobian(v));
          },
          py::arg("z"));

  m.def(
      "builtin",
      [](const std::string& kind, const std::string& params, std::uint64_t seed) {
        auto a = make_builtin(kind, json::parse(params), seed);
        return PyGenerator{a, a};
      },
      py::arg("kind"), py::arg("params") = "{}", py::arg("seed") = 0);
  m.def(
      "connect",
      [](const std::string& endpoint, double timeout, std::size_t pool) {
        return PyGenerator{connect_external(endpoint, timeout, pool), nullptr};
      },
      py::arg("endpoint"), py::arg("timeout") = 30.0, py::arg("pool_size") = 1);

  m.def("latent_from_seed", [](std::uint64_t seed, Eigen::Index dim) { return Vector(latent_from_seed(seed, dim)); });

  m.def(
      "probe",
      [](const PyGenerator& g, const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
         const std::string& config, std::uint64_t basis_seed, std::uint64_t neighbor_seed) {
        const auto c = parse_config(config);
        const Vector v = flat(z);
        const auto e = g.gen->latent_dim();
        const auto basis = sample_orthonormal_basis(e, effective_subspace_dim(c, e), basis_seed);
        py::gil_scoped_release release;
        return to_json(probe_sample(*g.gen, v, basis, probe_options(c), neighbor_seed)).dump();
      },
      py::arg("generator"), py::arg("z"), py::arg("config"), py::arg("basis_seed") = 0,
      py::arg("neighbor_seed") = 0);

  m.def("spearman", &spearman, py::arg("x"), py::arg("y"));
  m.def("auroc", &auroc, py::arg("scores"), py::arg("positive"));
  m.def("quantile", &quantile, py::arg("values"), py::arg("q"));
  m.def(
      "monte_carlo_ratio",
      [](const std::vector<double>& a, const std::vector<double>& b, std::size_t n_mc, double fraction,
         std::uint64_t seed) { return mc_dict(monte_carlo_ratio(a, b, n_mc, fraction, seed)); },
      py::arg("a"), py::arg("b"), py::arg("n_mc") = 1000, py::arg("fraction") = 0.8, py::arg("seed") = 0);
  m.def(
      "trajectory_metrics",
      [](const std::vector<Vector>& latents, double eps) {
        const auto r = trajectory_metrics(latents, eps);
        py::dict d;
        d["length"] = r.length;
        d["endpoint_distance"] = r.endpoint_distance;
        d["tortuosity"] = r.tortuosity;
        d["excess"] = r.excess;
        d["increments"] = r.increments;
        return d;
      },
      py::arg("latents"), py::arg("tortuosity_epsilon") = 1e-8);

  m.def("laplacian", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img) {
    return as_image(laplacian(to_image(img)));
  });
  m.def(
      "phfe",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, const std::string& mode) {
        return phfe(to_image(img), parse_phfe_mode(mode));
      },
      py::arg("image"), py::arg("mode") = "variance");
  m.def(
      "topk_share",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& values, double k, double floor) {
        return topk_share(flat(values), k, floor);
      },
      py::arg("values"), py::arg("k_percent"), py::arg("floor") = 1e-12);

  m.def("diagnose", [](const std::string& config) {
    const auto c = parse_config(config);
    DiagnoseResult r;
    {
      py::gil_scoped_release release;
      r = run_diagnose(c);
    }
    py::dict d;
    d["total"] = r.total;
    d["reused"] = r.reused;
    d["written"] = r.written;
    d["failed"] = r.failed;
    d["complete"] = r.complete;
    d["records"] = r.records.string();
    d["manifest"] = r.manifest.string();
    return d;
  });

  m.def(
      "correlate",
      [](const fs::path& records, const std::string& config,
         std::optional<std::vector<std::pair<std::string, std::string>>> pairs) {
        const auto c = parse_config(config);
        const auto set = read_records(records);
        const auto r = correlate_records(set, pairs.value_or(c.metric_pairs), c.subsample_n, c.runs, c.seed);
        fs::create_directories(c.output_dir);
        write_correlate(r, c.output_dir);
        py::list rows, drops;
        for (const auto& row : r.rows) {
          py::dict d;
          d["condition"] = row.condition;
          d["x"] = row.x;
          d["y"] = row.y;
          d["pool"] = row.pool;
          d["excluded"] = row.excluded;
          d["rho_mean"] = row.summary.rho_mean;
          d["rho_std"] = row.summary.rho_std;
          d["runs"] = row.summary.runs;
          d["ci_low"] = optional(row.summary.ci_low);
          d["ci_high"] = optional(row.summary.ci_high);
          rows.append(d);
        }
        for (const auto& row : r.drops) {
          py::dict d;
          d["x"] = row.x;
          d["y"] = row.y;
          d["baseline"] = row.baseline;
          d["condition"] = row.condition;
          d["drop"] = optional(row.drop);
          drops.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["drops"] = drops;
        return out;
      },
      py::arg("records"), py::arg("config"), py::arg("pairs") = py::none());

  m.def(
      "ood",
      [](const fs::path& records, const std::string& config, const std::string& positive) {
        const auto c = parse_config(config);
        const auto r = detect_ood(read_records(records), positive, c.ratio_floor);
        fs::create_directories(c.output_dir);
        write_detection(r, c.output_dir);
        py::dict d;
        d["positive_label"] = r.positive_label;
        d["auroc"] = r.auroc;
        d["auroc_lc"] = r.auroc_lc;
        d["auroc_ls"] = r.auroc_ls;
        d["scores"] = r.scores;
        d["labels"] = r.labels;
        return d;
      },
      py::arg("records"), py::arg("config"), py::arg("positive") = "");

  m.def("trajectory", [](const std::string& config) {
    const auto c = parse_config(config);
    TrajectoryResult r;
    {
      py::gil_scoped_release release;
      r = run_trajectory(c);
    }
    py::dict summary;
    for (const auto& row : r.summary) {
      py::dict d = mc_dict(row.mc);
      d["frac"] = row.frac;
      summary[py::str(row.metric)] = d;
    }
    py::dict out;
    out["baseline"] = r.baseline;
    out["condition"] = r.condition;
    out["pairs"] = r.records.size() / 2;
    out["failed_pairs"] = r.failed_pairs;
    out["summary"] = summary;
    return out;
  });

  m.def(
      "heatmap",
      [](const std::string& config, std::uint64_t seed, const std::string& condition, const fs::path& prefix) {
        const auto r = run_heatmap(parse_config(config), seed, condition, prefix);
        std::vector<std::string> files;
        for (const auto& f : r.files) files.push_back(f.string());
        py::dict d;
        d["jacobian"] = r.jacobian.data;
        d["laplacian"] = r.laplacian.data;
        d["files"] = files;
        return d;
      },
      py::arg("config"), py::arg("seed"), py::arg("condition"), py::arg("prefix"));

  m.def(
      "hf_transfer",
      [](const fs::path& records, const std::string& config) {
        const auto c = parse_config(config);
        const auto r = hf_transfer(read_records(records), c.n_boot, c.ci_level, c.seed, c.ratio_floor);
        fs::create_directories(c.output_dir);
        write_hf_transfer(r, c.output_dir);
        py::list rows, deltas;
        for (const auto& row : r.rows) {
          py::dict d;
          d["condition"] = row.condition;
          d["n"] = row.n;
          d["phfe_median"] = row.phfe_median;
          d["hfe_median"] = row.hfe_median;
          d["eta_median"] = row.eta_median;
          d["eta_of_medians"] = row.eta_of_medians;
          d["topk_median"] = row.topk_median;
          rows.append(d);
        }
        for (const auto& row : r.deltas) {
          py::dict d;
          d["baseline"] = row.baseline;
          d["condition"] = row.condition;
          d["pairs"] = row.pairs;
          d["delta_eta"] = row.delta_eta;
          d["ci_low"] = optional(row.ci_low);
          d["ci_high"] = optional(row.ci_high);
          deltas.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["deltas"] = deltas;
        return out;
      },
      py::arg("records"), py::arg("config"));
}
