// mixhmm command line: fit, decode, predict, residuals, check, simulate,
// suggest-init.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixhmm/data.hpp"
#include "mixhmm/inference.hpp"
#include "mixhmm/likelihood.hpp"
#include "mixhmm/log.hpp"
#include "mixhmm/model.hpp"
#include "mixhmm/serialize.hpp"
#include "mixhmm/simulate.hpp"

namespace fs = std::filesystem;
using namespace mixhmm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNotConverged = 2;

struct Args {
  std::string data, spec, out = ".", fit_dir, method, what = "obspar", rows, newdata, lengths;
  std::vector<std::string> stats;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, max_iter, n_post;
  std::optional<double> tol, level;
  int n_sims = 100;
  std::size_t n = 0;
};

ModelSpec spec_with_overrides(const Args& a) {
  if (a.spec.empty()) throw ModelError("--spec is required");
  ModelSpec spec = load_spec(a.spec);
  auto& o = spec.options;
  if (a.seed) o.seed = *a.seed;
  if (a.threads) o.threads = *a.threads;
  if (a.max_iter) o.max_iter = *a.max_iter;
  if (a.n_post) o.n_post = *a.n_post;
  if (a.tol) o.tol = *a.tol;
  if (a.level) o.level = *a.level;
  if (!a.method.empty()) {
    if (a.method == "nelder-mead") o.method = OptimMethod::nelder_mead;
    else if (a.method == "quasi-newton") o.method = OptimMethod::quasi_newton;
    else throw ModelError("unknown --method '" + a.method + "' (valid: nelder-mead, quasi-newton)");
  }
  return spec;
}

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

Dataset load_data(const Args& a, const ModelSpec& spec) {
  if (a.data.empty()) throw ModelError("--data is required");
  return load_csv(a.data, csv_options(spec, false));
}

std::string out_path(const Args& a, const std::string& file) {
  fs::create_directories(a.out);
  return (fs::path(a.out) / file).string();
}

ParameterSet fitted_parameters(const Args& a, const Model& m) {
  if (a.fit_dir.empty()) {
    throw ModelError("no fitted parameters: run 'mixhmm fit' first and pass its output directory with --fit");
  }
  return parse_estimates(m, read_text_file((fs::path(a.fit_dir) / "estimates.csv").string()));
}

std::vector<std::size_t> parse_rows(const std::string& text) {
  std::vector<std::size_t> rows;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    long v = 0;
    try {
      v = std::stol(item);
    } catch (const std::exception&) {
      throw ModelError("bad row number '" + item + "'");
    }
    if (v < 1) throw ModelError("row numbers start at 1");
    rows.push_back(static_cast<std::size_t>(v - 1));
  }
  return rows;
}

int cmd_fit(const Args& a) {
  const ModelSpec spec = spec_with_overrides(a);
  const Dataset data = load_data(a, spec);
  const Model m(spec, data);
  const FitResult r = fit(m, m.initial_parameters(), spec.options);
  write_text_file(out_path(a, "estimates.csv"), estimates_csv(m, r));
  if (r.covariance.size() > 0) write_text_file(out_path(a, "covariance.csv"), covariance_csv(m, r.covariance));
  nlohmann::ordered_json j;
  const auto& c = r.convergence;
  j["converged"] = c.converged;
  j["method"] = c.method;
  j["message"] = c.message;
  j["iterations"] = c.iterations;
  j["evaluations"] = c.evaluations;
  j["gradient_norm"] = c.gradient_norm;
  j["objective"] = c.objective;
  j["marginal_loglik"] = r.marginal_loglik;
  j["trace"] = c.trace;
  write_text_file(out_path(a, "convergence.json"), j.dump(2) + "\n");
  std::cout << "log-likelihood " << format_double(r.marginal_loglik) << " (" << c.message << ")\n";
  if (!c.converged) {
    std::cerr << "mixhmm: optimizer did not converge: " << c.message << "\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_decode(const Args& a) {
  const ModelSpec spec = spec_with_overrides(a);
  const Dataset data = load_data(a, spec);
  const Model m(spec, data);
  const ParameterSet p = fitted_parameters(a, m);
  const auto path = viterbi(m, p, spec.options.threads);
  const Eigen::MatrixXd probs = state_probs(m, p, spec.options.threads);
  const auto labels = m.data().row_labels();
  std::ostringstream states, sp;
  states << "ID,row,state\n";
  sp << "ID,row";
  for (int j = 1; j <= m.n_states(); ++j) sp << ",state" << j;
  sp << '\n';
  for (std::size_t r = 0; r < path.size(); ++r) {
    states << labels[r] << ',' << r + 1 << ',' << path[r] << '\n';
    sp << labels[r] << ',' << r + 1;
    for (int j = 0; j < m.n_states(); ++j) sp << ',' << format_double(probs(static_cast<Eigen::Index>(r), j));
    sp << '\n';
  }
  write_text_file(out_path(a, "states.csv"), states.str());
  write_text_file(out_path(a, "stateprobs.csv"), sp.str());
  return kExitOk;
}

int cmd_predict(const Args& a) {
  const ModelSpec spec = spec_with_overrides(a);
  const Dataset data = load_data(a, spec);
  const Model m(spec, data);
  FitResult fitted;
  fitted.estimates = fitted_parameters(a, m);
  PredictionRequest req;
  req.what = parse_predict_what(a.what);
  req.n_post = spec.options.n_post;
  req.level = spec.options.level;
  if (!a.newdata.empty()) {
    req.newdata = load_csv(a.newdata, csv_options(spec, true));
  } else {
    req.rows = parse_rows(a.rows);
  }
  Prediction pr;
  if (req.n_post > 0) {
    const auto cov_path = fs::path(a.fit_dir) / "covariance.csv";
    if (!fs::exists(cov_path)) {
      throw ModelError("intervals need covariance.csv in the fit directory; pass --n-post 0 for point estimates");
    }
    fitted.covariance = parse_covariance(m, read_text_file(cov_path.string()));
    pr = simulate_ci(m, fitted, req, spec.options.seed, spec.options.threads);
  } else {
    pr = predict(m, fitted.estimates, req);
  }
  std::vector<std::size_t> rows = req.rows;
  if (!req.newdata && rows.empty()) rows.push_back(0);
  std::ostringstream out;
  out << "row,name,mean,lcl,ucl\n";
  for (Eigen::Index r = 0; r < pr.mean.rows(); ++r) {
    const std::size_t label = req.newdata ? static_cast<std::size_t>(r) : rows[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < pr.names.size(); ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      out << label + 1 << ',' << pr.names[c] << ',' << format_double(pr.mean(r, cc)) << ',';
      if (pr.lcl.size() > 0) out << format_double(pr.lcl(r, cc)) << ',' << format_double(pr.ucl(r, cc));
      else out << ',';
      out << '\n';
    }
  }
  write_text_file(out_path(a, "predictions.csv"), out.str());
  return kExitOk;
}

int cmd_residuals(const Args& a) {
  const ModelSpec spec = spec_with_overrides(a);
  const Dataset data = load_data(a, spec);
  const Model m(spec, data);
  const ParameterSet p = fitted_parameters(a, m);
  const Residuals res = pseudo_residuals(m, p, spec.options.seed, spec.options.threads);
  const auto labels = m.data().row_labels();
  std::ostringstream out;
  out << "ID,row";
  for (const auto& n : res.names) out << ',' << n;
  out << '\n';
  for (Eigen::Index r = 0; r < res.values.rows(); ++r) {
    out << labels[static_cast<std::size_t>(r)] << ',' << r + 1;
    for (Eigen::Index v = 0; v < res.values.cols(); ++v) {
      const double x = res.values(r, v);
      out << ',' << (std::isnan(x) ? std::string("NA") : format_double(x));
    }
    out << '\n';
  }
  write_text_file(out_path(a, "residuals.csv"), out.str());
  return kExitOk;
}

int cmd_check(const Args& a) {
  const ModelSpec spec = spec_with_overrides(a);
  const Dataset data = load_data(a, spec);
  const Model m(spec, data);
  const ParameterSet p = fitted_parameters(a, m);
  std::vector<std::string> stats = a.stats;
  if (stats.empty()) {
    for (const auto& v : spec.response_names()) stats.push_back("mean(" + v + ")");
  }
  std::ostringstream out;
  out << "statistic,observed,tail,n_sims,sim_mean,sim_q025,sim_q975\n";
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const Statistic st = parse_statistic(stats[i]);
    const CheckResult r =
        posterior_predictive_check(m, p, st, a.n_sims, substream_seed(spec.options.seed, i), spec.options.threads);
    double mean = 0.0;
    for (double v : r.simulated) mean += v;
    mean /= static_cast<double>(r.simulated.size());
    out << '"' << st.label() << "\"," << format_double(r.observed) << ',' << format_double(r.tail) << ','
        << r.simulated.size() << ',' << format_double(mean) << ',' << format_double(quantile(r.simulated, 0.025))
        << ',' << format_double(quantile(r.simulated, 0.975)) << '\n';
  }
  write_text_file(out_path(a, "check.csv"), out.str());
  return kExitOk;
}

int cmd_simulate(const Args& a) {
  const ModelSpec spec = spec_with_overrides(a);
  SimConfig cfg;
  cfg.spec = spec;
  cfg.seed = spec.options.seed;
  cfg.threads = spec.options.threads;
  if (!a.data.empty()) cfg.covariates = load_csv(a.data, csv_options(spec, true));
  if (!a.lengths.empty()) {
    for (auto r : parse_rows(a.lengths)) cfg.series_lengths.push_back(r + 1);
  } else if (a.n > 0) {
    cfg.series_lengths = {a.n};
  }
  if (!a.fit_dir.empty()) {
    // fitted parameters are laid out for the model built on the covariate table
    if (!cfg.covariates && cfg.series_lengths.empty()) throw ModelError("simulate needs --n, --lengths or --data");
    Dataset tmpl = simulate(cfg);
    const Model m(spec, tmpl);
    cfg.params = fitted_parameters(a, m);
  }
  const Dataset d = simulate(cfg);
  write_csv(d, out_path(a, "simulated.csv"));
  return kExitOk;
}

int cmd_suggest(const Args& a) {
  ModelSpec spec = spec_with_overrides(a);
  const Dataset data = load_data(a, spec);
  spec.observations = suggest_initial(spec, data, spec.n_states, spec.options.seed);
  write_text_file(out_path(a, "suggested_spec.json"), spec_to_json(spec));
  return kExitOk;
}

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("--data", a.data, "Observation table (CSV)");
  sub->add_option("--spec", a.spec, "Model specification (JSON)")->required();
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_option("--seed", a.seed, "Random seed");
  sub->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--method", a.method, "Optimizer: nelder-mead or quasi-newton");
  sub->add_option("--max-iter", a.max_iter, "Outer iteration limit")->check(CLI::NonNegativeNumber);
  sub->add_option("--tol", a.tol, "Relative objective tolerance")->check(CLI::NonNegativeNumber);
  sub->add_option("--n-post", a.n_post, "Draws for confidence intervals (0 = none)")->check(CLI::NonNegativeNumber);
  sub->add_option("--fit", a.fit_dir, "Directory written by 'mixhmm fit'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden Markov models with covariates, splines and random effects"};
  app.require_subcommand(1);
  Args a;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model");
  auto* decode_cmd = app.add_subcommand("decode", "Viterbi states and state probabilities");
  auto* predict_cmd = app.add_subcommand("predict", "Predict tpm, delta or observation parameters");
  auto* resid_cmd = app.add_subcommand("residuals", "Pseudo-residuals");
  auto* check_cmd = app.add_subcommand("check", "Posterior predictive checks");
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate states and observations");
  auto* suggest_cmd = app.add_subcommand("suggest-init", "K-means starting values");
  for (auto* s : {fit_cmd, decode_cmd, predict_cmd, resid_cmd, check_cmd, sim_cmd, suggest_cmd}) add_common(s, a);
  predict_cmd->add_option("--what", a.what, "tpm, delta or obspar")->capture_default_str();
  predict_cmd->add_option("--rows", a.rows, "1-based data rows, comma separated (default 1)");
  predict_cmd->add_option("--newdata", a.newdata, "Covariate table to predict at");
  predict_cmd->add_option("--level", a.level, "Interval level");
  check_cmd->add_option("--stat", a.stats, "Statistic such as mean(z), sd(z), quantile(z,0.9), acf1(z), zeros(z)");
  check_cmd->add_option("--n-sims", a.n_sims, "Simulated datasets")->capture_default_str();
  sim_cmd->add_option("--n", a.n, "Length of a single simulated series");
  sim_cmd->add_option("--lengths", a.lengths, "Comma-separated series lengths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  set_warning_sink([](const std::string& msg) { std::cerr << "mixhmm: warning: " << msg << "\n"; });
  try {
    if (*fit_cmd) return cmd_fit(a);
    if (*decode_cmd) return cmd_decode(a);
    if (*predict_cmd) return cmd_predict(a);
    if (*resid_cmd) return cmd_residuals(a);
    if (*check_cmd) return cmd_check(a);
    if (*sim_cmd) return cmd_simulate(a);
    if (*suggest_cmd) return cmd_suggest(a);
  } catch (const std::exception& e) {
    std::cerr << "mixhmm: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
