#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "mixhmm/data.hpp"
#include "mixhmm/inference.hpp"
#include "mixhmm/likelihood.hpp"
#include "mixhmm/serialize.hpp"
#include "mixhmm/simulate.hpp"

namespace py = pybind11;
using namespace mixhmm;

namespace {

CsvOptions csv_options(const ModelSpec& spec, bool allow_missing_responses) {
  CsvOptions opt;
  opt.responses = spec.response_names();
  for (const auto& c : spec.covariate_names()) {
    if (c.rfind("lag(", 0) != 0) opt.covariates.push_back(c);
  }
  opt.factors = spec.factors;
  opt.allow_missing_responses = allow_missing_responses;
  return opt;
}

// A spec bound to a CSV table; keeps both alive for the Model.
struct BoundModel {
  BoundModel(const std::string& spec_json, const std::string& csv_text)
      : spec(parse_spec(spec_json)), data(parse_csv(csv_text, csv_options(spec, false))), model(spec, data) {}
  ModelSpec spec;
  Dataset data;
  Model model;

  const ParameterSet& params(const std::optional<ParameterSet>& p) const { return p ? *p : start; }
  ParameterSet start = model.initial_parameters();
};

OptimMethod method_of(const std::string& name) {
  if (name == "nelder-mead") return OptimMethod::nelder_mead;
  if (name == "quasi-newton") return OptimMethod::quasi_newton;
  throw ModelError("method must be nelder-mead or quasi-newton, got '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hidden Markov models with covariate-dependent parameters";

  py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);

  py::class_<ParameterSet>(m, "ParameterSet")
      .def_readwrite("alpha", &ParameterSet::alpha)
      .def_readwrite("beta", &ParameterSet::beta)
      .def_readwrite("log_lambda", &ParameterSet::log_lambda)
      .def_readwrite("delta0", &ParameterSet::delta0);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("estimates", &FitResult::estimates)
      .def_readonly("covariance", &FitResult::covariance)
      .def_readonly("marginal_loglik", &FitResult::marginal_loglik)
      .def_property_readonly("converged", [](const FitResult& f) { return f.convergence.converged; })
      .def_property_readonly("message", [](const FitResult& f) { return f.convergence.message; })
      .def_property_readonly("iterations", [](const FitResult& f) { return f.convergence.iterations; });

  py::class_<BoundModel>(m, "Model")
      .def(py::init<const std::string&, const std::string&>(), py::arg("spec_json"), py::arg("csv_text"))
      .def_property_readonly("n_states", [](const BoundModel& b) { return b.model.n_states(); })
      .def_property_readonly("n_rows", [](const BoundModel& b) { return b.data.n_rows(); })
      .def_property_readonly("alpha_names", [](const BoundModel& b) { return b.model.alpha_names(); })
      .def_property_readonly("beta_names", [](const BoundModel& b) { return b.model.beta_names(); })
      .def_property_readonly("lambda_names", [](const BoundModel& b) { return b.model.lambda_names(); })
      .def("initial_parameters", [](const BoundModel& b) { return b.start; })
      .def(
          "loglik", [](const BoundModel& b, std::optional<ParameterSet> p) { return forward_loglik(b.model, b.params(p)); },
          py::arg("params") = py::none())
      .def(
          "marginal_nll",
          [](const BoundModel& b, std::optional<ParameterSet> p) { return laplace_marginal_nll(b.model, b.params(p)).value; },
          py::arg("params") = py::none())
      .def(
          "fit",
          [](const BoundModel& b, const std::string& method, int max_iter, double tol, bool covariance, int threads) {
            FitOptions o = b.spec.options;
            o.method = method_of(method);
            o.max_iter = max_iter;
            o.tol = tol;
            o.covariance = covariance;
            o.threads = threads;
            py::gil_scoped_release release;
            return fit(b.model, b.start, o);
          },
          py::arg("method") = "quasi-newton", py::arg("max_iter") = 1000, py::arg("tol") = 1e-8,
          py::arg("covariance") = true, py::arg("threads") = 1)
      .def(
          "viterbi", [](const BoundModel& b, std::optional<ParameterSet> p) { return viterbi(b.model, b.params(p)); },
          py::arg("params") = py::none())
      .def(
          "state_probs", [](const BoundModel& b, std::optional<ParameterSet> p) { return state_probs(b.model, b.params(p)); },
          py::arg("params") = py::none())
      .def(
          "pseudo_residuals",
          [](const BoundModel& b, std::optional<ParameterSet> p, std::uint64_t seed) {
            return pseudo_residuals(b.model, b.params(p), seed).values;
          },
          py::arg("params") = py::none(), py::arg("seed") = 1)
      .def(
          "predict",
          [](const BoundModel& b, const FitResult& f, const std::string& what, std::vector<std::size_t> rows, int n_post,
             double level, std::uint64_t seed) {
            PredictionRequest req;
            req.what = parse_predict_what(what);
            req.rows = std::move(rows);
            req.n_post = n_post;
            req.level = level;
            const Prediction pr = n_post > 0 && f.covariance.size() > 0 ? simulate_ci(b.model, f, req, seed)
                                                                        : predict(b.model, f.estimates, req);
            py::dict out;
            out["names"] = pr.names;
            out["mean"] = pr.mean;
            out["lcl"] = pr.lcl;
            out["ucl"] = pr.ucl;
            return out;
          },
          py::arg("fit"), py::arg("what") = "tpm", py::arg("rows") = std::vector<std::size_t>{}, py::arg("n_post") = 1000,
          py::arg("level") = 0.95, py::arg("seed") = 1)
      .def("estimates_csv", [](const BoundModel& b, const FitResult& f) { return estimates_csv(b.model, f); });

  m.def("normalize_spec", [](const std::string& json) { return spec_to_json(parse_spec(json)); }, py::arg("spec_json"),
        "Parses a model spec and returns it in canonical JSON form.");

  m.def(
      "simulate",
      [](const std::string& spec_json, std::vector<std::size_t> lengths, std::uint64_t seed,
         const std::string& covariates_csv) {
        SimConfig cfg;
        cfg.spec = parse_spec(spec_json);
        cfg.series_lengths = std::move(lengths);
        cfg.seed = seed;
        if (!covariates_csv.empty()) cfg.covariates = parse_csv(covariates_csv, csv_options(cfg.spec, true));
        return to_csv(simulate(cfg));
      },
      py::arg("spec_json"), py::arg("lengths") = std::vector<std::size_t>{}, py::arg("seed") = 1,
      py::arg("covariates_csv") = "", "Simulates from a spec and returns the table as CSV text.");

  m.def("reflected_random_walk", &reflected_random_walk, py::arg("n"), py::arg("step"), py::arg("lower"),
        py::arg("upper"), py::arg("seed"));
}
