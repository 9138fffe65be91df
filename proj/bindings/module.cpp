// Python bindings: numpy arrays in, numpy arrays out. Everything runs in
// fp64, matching the C++ core.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lorakit/analysis.hpp"
#include "lorakit/checkpoint.hpp"
#include "lorakit/errors.hpp"
#include "lorakit/linalg.hpp"
#include "lorakit/merge.hpp"
#include "lorakit/penalty.hpp"
#include "lorakit/scoring.hpp"
#include "lorakit/toy.hpp"

namespace py = pybind11;
using namespace lorakit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& arr, const char* name) {
    const py::buffer_info info = arr.request();
    if (info.ndim != 2) {
        throw ShapeError(std::string(name) + ": expected a 2-D array, got " +
                         std::to_string(info.ndim) + "-D");
    }
    const auto rows = static_cast<std::size_t>(info.shape[0]);
    const auto cols = static_cast<std::size_t>(info.shape[1]);
    Matrix m(rows, cols);
    const double* src = static_cast<const double*>(info.ptr);
    std::copy(src, src + rows * cols, m.data().data());
    return m;
}

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> arr({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), arr.mutable_data());
    return arr;
}

AdapterPair make_pair(const Array& b, const Array& a, double alpha) {
    AdapterPair pair;
    pair.b = to_matrix(b, "B");
    pair.a = to_matrix(a, "A");
    if (pair.b.cols() != pair.a.rows()) {
        throw ShapeError("adapter factors disagree on the rank: B has " +
                         std::to_string(pair.b.cols()) + " columns, A has " +
                         std::to_string(pair.a.rows()) + " rows");
    }
    pair.rank = pair.b.cols();
    pair.alpha = alpha;
    pair.target = "adapter";
    return pair;
}

PenaltyConfig make_penalty_config(const std::string& variant, double beta) {
    const auto v = parse_penalty_variant(variant);
    if (!v) {
        throw InvalidInput("penalty variant must be 'col' or 'both'");
    }
    PenaltyConfig cfg;
    cfg.variant = *v;
    cfg.beta = beta;
    return cfg;
}

EvalLog log_from_outcomes(const std::vector<std::vector<bool>>& outcomes) {
    EvalLog log;
    log.records.reserve(outcomes.size());
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        log.records.push_back(EvalRecord{std::to_string(i), outcomes[i]});
    }
    return log;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Weight-space analysis and orthogonality-aware merging of low-rank updates";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<InvalidInput>(m, "InvalidInputError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    // --- linalg ---
    m.def("frobenius_norm",
          [](const Array& a) { return frobenius_norm(to_matrix(a, "m")); }, py::arg("m"));
    m.def("spectral_norm",
          [](const Array& a, double tol, int max_iter) {
              return spectral_norm(to_matrix(a, "m"), tol, max_iter);
          },
          py::arg("m"), py::arg("tol") = 1e-10, py::arg("max_iter") = 1000);
    m.def("stable_rank", [](const Array& a) { return stable_rank(to_matrix(a, "m")); },
          py::arg("m"));
    m.def("truncated_svd",
          [](const Array& a, std::size_t t) {
              const TruncatedSVD svd = truncated_svd(to_matrix(a, "m"), t);
              py::array_t<double> s(svd.s.size());
              std::copy(svd.s.begin(), svd.s.end(), s.mutable_data());
              return py::make_tuple(to_array(svd.u), s, to_array(svd.v));
          },
          py::arg("m"), py::arg("t"),
          "Top-t singular triplets (U, S, V) with orthonormal U/V columns");
    m.def("project_col_complement",
          [](const Array& m_, const Array& u) {
              return to_array(project_col_complement(to_matrix(m_, "m"), to_matrix(u, "u")));
          },
          py::arg("m"), py::arg("u"));
    m.def("project_row_complement",
          [](const Array& m_, const Array& v) {
              return to_array(project_row_complement(to_matrix(m_, "m"), to_matrix(v, "v")));
          },
          py::arg("m"), py::arg("v"));
    m.def("low_rank_base",
          [](const Array& a, std::size_t rank) {
              return to_array(low_rank_base(to_matrix(a, "m"), rank));
          },
          py::arg("m"), py::arg("rank"), "Best rank-m Frobenius approximation");

    // --- analysis ---
    m.def("alignment_metrics",
          [](const Array& base, const Array& delta, std::size_t top_t) {
              const AlignmentMetrics am =
                  alignment_metrics(to_matrix(base, "base"), to_matrix(delta, "delta"), top_t);
              py::dict out;
              out["m1"] = am.m1;
              out["m2"] = am.m2;
              out["m3"] = am.m3;
              out["m4"] = am.m4;
              return out;
          },
          py::arg("base"), py::arg("delta"), py::arg("top_t") = 16,
          "The four base/update overlap ratios, each in [0, 1]");

    // --- merging ---
    m.def("materialize_adapter",
          [](const Array& b, const Array& a, double alpha) {
              return to_array(materialize_delta(DeltaSource::low_rank(make_pair(b, a, alpha))));
          },
          py::arg("b"), py::arg("a"), py::arg("alpha") = 16.0, "(alpha/r)·B·A");
    m.def("merge_vanilla",
          [](const Array& base, const Array& delta) {
              return to_array(merge_vanilla(to_matrix(base, "base"),
                                            DeltaSource::dense("w", to_matrix(delta, "delta"))));
          },
          py::arg("base"), py::arg("delta"));
    m.def("ortho_merge_col",
          [](const Array& base, const Array& delta, std::size_t k) {
              return to_array(ortho_merge_col(to_matrix(base, "base"),
                                              DeltaSource::dense("w", to_matrix(delta, "delta")),
                                              k));
          },
          py::arg("base"), py::arg("delta"), py::arg("k") = 64);
    m.def("ortho_merge_both",
          [](const Array& base, const Array& delta, std::size_t k, double lam) {
              return to_array(ortho_merge_both(
                  to_matrix(base, "base"), DeltaSource::dense("w", to_matrix(delta, "delta")),
                  k, lam));
          },
          py::arg("base"), py::arg("delta"), py::arg("k") = 64, py::arg("lam") = 1.0);

    // --- penalty ---
    m.def("penalty_value",
          [](const Array& base, const Array& b, const Array& a, double alpha,
             const std::string& variant, double beta) {
              return penalty_value(to_matrix(base, "base"), make_pair(b, a, alpha),
                                   make_penalty_config(variant, beta));
          },
          py::arg("base"), py::arg("b"), py::arg("a"), py::arg("alpha") = 16.0,
          py::arg("variant") = "both", py::arg("beta") = 1.0);
    m.def("penalty_grads",
          [](const Array& base, const Array& b, const Array& a, double alpha,
             const std::string& variant, double beta) {
              const PenaltyResult r =
                  penalty_grads(to_matrix(base, "base"), make_pair(b, a, alpha),
                                make_penalty_config(variant, beta));
              return py::make_tuple(r.value, to_array(r.grad_b), to_array(r.grad_a));
          },
          py::arg("base"), py::arg("b"), py::arg("a"), py::arg("alpha") = 16.0,
          py::arg("variant") = "both", py::arg("beta") = 1.0,
          "Returns (value, grad_B, grad_A)");

    // --- scoring ---
    m.def("pass_at_1",
          [](const std::vector<std::vector<bool>>& outcomes) {
              return pass_at_1(log_from_outcomes(outcomes));
          },
          py::arg("outcomes"), "Mean per-question fraction of correct outcomes");
    m.def("safety_score",
          [](const std::vector<bool>& verdicts, const std::string& polarity) {
              std::vector<std::vector<bool>> wrapped;
              wrapped.reserve(verdicts.size());
              for (bool v : verdicts) wrapped.push_back({v});
              if (polarity != "safe_fraction" && polarity != "harmful_fraction") {
                  throw InvalidInput("polarity must be 'safe_fraction' or 'harmful_fraction'");
              }
              return safety_score(log_from_outcomes(wrapped),
                                  polarity == "safe_fraction"
                                      ? SafetyPolarity::safe_fraction
                                      : SafetyPolarity::harmful_fraction);
          },
          py::arg("verdicts"), py::arg("polarity") = "safe_fraction");

    // --- container IO ---
    m.def("load_tensor_map",
          [](const std::filesystem::path& path) {
              py::dict out;
              for (const auto& [name, entry] : load_tensor_map(path)) {
                  out[py::str(name)] = to_array(entry.values);
              }
              return out;
          },
          py::arg("path"), "Loads a safetensors container as {name: 2-D float64 array}");
    m.def("save_tensor_map",
          [](const py::dict& tensors, const std::filesystem::path& path,
             const std::string& precision) {
              const auto prec = parse_precision(precision);
              if (!prec) {
                  throw InvalidInput("precision must be fp64|fp32|fp16|bf16");
              }
              NamedTensorMap map;
              for (const auto& [key, value] : tensors) {
                  map.insert(py::cast<std::string>(key),
                             to_matrix(py::cast<Array>(value), "tensor"));
              }
              save_tensor_map(map, path, *prec);
          },
          py::arg("tensors"), py::arg("path"), py::arg("precision") = "fp64");

    // --- toy harness ---
    m.def("run_toy_scenario",
          [](const std::string& scenario_json) {
              return run_scenario(scenario_from_json(scenario_json)).to_json();
          },
          py::arg("scenario_json") = "{}",
          "Runs the seeded interference experiment; returns the retention report as JSON");
}
