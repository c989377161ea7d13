#include "pfvi/bounds.hpp"
#include "pfvi/cavi.hpp"
#include "pfvi/error.hpp"
#include "pfvi/gibbs.hpp"
#include "pfvi/partition.hpp"
#include "pfvi/random_scan.hpp"
#include "pfvi/report.hpp"
#include "pfvi/rng.hpp"
#include "pfvi/simulate.hpp"
#include "pfvi/uqf.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

namespace py = pybind11;
using namespace pfvi;

namespace {

py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

struct PyFit {
    std::shared_ptr<const Problem> problem;
    FitResult result;

    Json report() const { return fit_report(*problem, result); }
};

struct PyModel {
    std::shared_ptr<const Problem> problem;

    static PyModel from_problem(Problem p) { return {std::make_shared<const Problem>(std::move(p))}; }

    PyFit fit(const std::string& partition, double tol, int max_iter, bool update_phi) const {
        FitOptions o;
        o.tol = tol;
        o.max_iter = max_iter;
        o.update_phi = update_phi;
        return {problem, pfvi::fit(*problem, resolve_partition(partition, *problem->data), o)};
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Partially factorized variational inference for crossed mixed models";

    static py::exception<Error> pfvi_error(m, "PfviError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(pfvi_error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
        }
    });

    py::class_<PyFit>(m, "Fit")
        .def_property_readonly("converged", [](const PyFit& f) { return f.result.converged; })
        .def_property_readonly("iterations", [](const PyFit& f) { return f.result.iterations; })
        .def_property_readonly("elbo_trace", [](const PyFit& f) { return f.result.elbo_trace; })
        .def_property_readonly("partition", [](const PyFit& f) { return f.result.state.part.describe(); })
        .def("mean", [](const PyFit& f) { return q_mean(*f.problem, f.result.state); })
        .def("marginal_variance", [](const PyFit& f) { return q_moments(*f.problem, f.result.state).theta_var; })
        .def("covariance", [](const PyFit& f) { return q_covariance(*f.problem, f.result.state); })
        .def("precision", [](const PyFit& f) { return export_q_precision(*f.problem, f.result.state); })
        .def("target_covariance",
             [](const PyFit& f) {
                 const auto s = build_surrogate(*f.problem, f.result.state.phi);
                 return exact_target_moments(s, Partition::uf(f.problem->num_factors())).cov;
             },
             "covariance of the Gaussian target at the fitted q(phi)")
        .def("uqf",
             [](const PyFit& f) {
                 const auto s = build_surrogate(*f.problem, f.result.state.phi);
                 const auto ex = exact_target_moments(s, Partition::uf(f.problem->num_factors()));
                 return uqf_analytic(ex.cov, export_q_precision(*f.problem, f.result.state));
             },
             "UQF against the Gaussian target at the fitted q(phi)")
        .def("report", [](const PyFit& f) { return to_python(f.report()); });

    py::class_<PyModel>(m, "Model")
        .def_static(
            "from_csv",
            [](const std::string& data, const std::string& schema, const std::string& likelihood) {
                const auto lik = likelihood_from_string(likelihood);
                return PyModel::from_problem(Problem::make(load_long_csv(data, Schema::from_json_file(schema), lik), lik));
            },
            py::arg("data"), py::arg("schema"), py::arg("likelihood") = "gaussian")
        .def_static(
            "from_csv_text",
            [](const std::string& text, const std::string& schema_json, const std::string& likelihood) {
                const auto lik = likelihood_from_string(likelihood);
                std::istringstream in(text);
                return PyModel::from_problem(
                    Problem::make(parse_long_csv(in, Schema::from_json_text(schema_json), lik), lik));
            },
            py::arg("text"), py::arg("schema_json"), py::arg("likelihood") = "gaussian")
        .def_static(
            "simulate",
            [](Index g1, Index g2, double missing, std::uint64_t seed, const std::string& likelihood) {
                const auto lik = likelihood_from_string(likelihood);
                auto des = gen_crossed_mcar(g1, g2, missing, derive_seed(seed, {0}));
                return PyModel::from_problem(Problem::make(simulate_responses(des, lik, derive_seed(seed, {1})).data, lik));
            },
            py::arg("g1"), py::arg("g2"), py::arg("missing") = 0.9, py::arg("seed") = 1,
            py::arg("likelihood") = "gaussian")
        .def_static(
            "simulate_biregular",
            [](Index n, Index d1, Index d2, std::uint64_t seed) {
                auto des = gen_biregular(n, d1, d2, derive_seed(seed, {0}));
                return PyModel::from_problem(Problem::make(
                    simulate_responses(des, LikelihoodKind::Gaussian, derive_seed(seed, {1})).data,
                    LikelihoodKind::Gaussian));
            },
            py::arg("n"), py::arg("d1"), py::arg("d2"), py::arg("seed") = 1)
        .def_property_readonly("n", [](const PyModel& m) { return m.problem->n(); })
        .def_property_readonly("num_params", [](const PyModel& m) { return m.problem->num_params(); })
        .def_property_readonly("block_names",
                               [](const PyModel& m) {
                                   std::vector<std::string> names;
                                   for (Index k = 0; k < m.problem->num_blocks(); ++k)
                                       names.push_back(m.problem->layout->block(k).name);
                                   return names;
                               })
        .def("resolve_partition",
             [](const PyModel& m, const std::string& spec) { return resolve_partition(spec, *m.problem->data).describe(); })
        .def("fit", &PyModel::fit, py::arg("partition") = "pf:fixed", py::arg("tol") = 1e-6,
             py::arg("max_iter") = 1000, py::arg("update_phi") = true)
        .def(
            "gibbs",
            [](const PyModel& m, int iters, int burn_in, std::uint64_t seed) {
                GibbsOptions o;
                o.iters = iters;
                o.burn_in = burn_in;
                o.seed = seed;
                py::gil_scoped_release release;
                return gibbs_gaussian(*m.problem, o).theta;
            },
            py::arg("iters") = 20000, py::arg("burn_in") = 1000, py::arg("seed") = 1)
        .def(
            "bounds",
            [](const PyModel& m, const std::string& partition) {
                FitResult r = pfvi::fit(*m.problem, resolve_partition(partition, *m.problem->data));
                return to_python(bounds_json(bounds_report(build_surrogate(*m.problem, r.state.phi), *m.problem->data)));
            },
            py::arg("partition") = "pf:fixed");

    m.def("uqf_analytic", &uqf_analytic, py::arg("cov_pi"), py::arg("q_precision"));
    m.def(
        "uqf_split_sample",
        [](const Matrix& samples, const Matrix& qp, int folds, Index top) {
            auto est = uqf_split_sample(samples, qp, folds, top);
            return py::make_tuple(est.value, est.fold_values);
        },
        py::arg("samples"), py::arg("q_precision"), py::arg("folds") = 5, py::arg("top") = 50);
    m.def("tv_accuracy", &tv_accuracy, py::arg("a"), py::arg("b"));
    m.def("rg_bound", &rg_bound, py::arg("n"), py::arg("g1"), py::arg("g2"));
    m.def(
        "duality_check",
        [](const Matrix& Q, const Vector& mu, const std::vector<Index>& block_sizes, const std::vector<Index>& collapsed,
           int sweeps, int runs, std::uint64_t seed) {
            GaussianTarget t{mu, Q, block_sizes};
            DualityReport r = duality_check(t, collapsed, sweeps, runs, seed);
            py::dict d;
            d["uqf"] = r.uqf;
            d["mean_gap"] = r.mean_gap;
            d["lower"] = r.lower;
            d["upper"] = r.upper;
            d["bracket_satisfied"] = r.bracket_satisfied;
            return d;
        },
        py::arg("Q"), py::arg("mu"), py::arg("block_sizes"), py::arg("collapsed") = std::vector<Index>{},
        py::arg("sweeps") = 20, py::arg("runs") = 10000, py::arg("seed") = 1);
}
