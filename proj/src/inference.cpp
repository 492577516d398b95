#include "mixhmm/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "mixhmm/engine.hpp"
#include "mixhmm/log.hpp"
#include "mixhmm/simulate.hpp"

namespace mixhmm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void prepare_checked(const Engine& eng, std::size_t s, const ParameterSet& p, SeriesInputs& in) {
  eng.prepare(s, p, in, false);
  if (!in.valid) throw ModelError("parameters are outside their domain");
}

std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> request_designs(const Model& m,
                                                                         const PredictionRequest& req) {
  if (req.newdata) return m.design_newdata(*req.newdata);
  std::vector<std::size_t> rows = req.rows;
  if (rows.empty()) rows.push_back(0);
  for (auto r : rows) {
    if (r >= m.data().n_rows()) throw ModelError("requested row " + std::to_string(r + 1) + " is beyond the data");
  }
  std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> out;
  for (const auto& pr : m.predictors()) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), pr.design.n_fixed());
    Eigen::MatrixXd R(static_cast<Eigen::Index>(rows.size()), pr.design.n_random());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      X.row(static_cast<Eigen::Index>(i)) = pr.design.X.row(static_cast<Eigen::Index>(rows[i]));
      if (R.cols() > 0) R.row(static_cast<Eigen::Index>(i)) = pr.design.R.row(static_cast<Eigen::Index>(rows[i]));
    }
    out.emplace_back(std::move(X), std::move(R));
  }
  return out;
}

std::vector<std::string> prediction_names(const Model& m, PredictWhat what) {
  std::vector<std::string> names;
  const int K = m.n_states();
  switch (what) {
    case PredictWhat::tpm:
      for (int i = 1; i <= K; ++i)
        for (int j = 1; j <= K; ++j) names.push_back("S" + std::to_string(i) + ">S" + std::to_string(j));
      break;
    case PredictWhat::delta:
      for (int j = 1; j <= K; ++j) names.push_back("state" + std::to_string(j));
      break;
    case PredictWhat::obspar:
      for (std::size_t v = 0; v < m.n_vars(); ++v) {
        const auto& f = m.family_of(v);
        for (const auto& par : f.params)
          for (int j = 1; j <= K; ++j)
            names.push_back(m.spec().observations[v].name + "." + par + ".state" + std::to_string(j));
      }
      break;
  }
  return names;
}

Eigen::MatrixXd prediction_values(const Model& m, const Eigen::MatrixXd& eta, PredictWhat what, std::size_t width) {
  const int K = m.n_states();
  Eigen::MatrixXd out(eta.rows(), static_cast<Eigen::Index>(width));
  bool failed = false;
  for (Eigen::Index r = 0; r < eta.rows(); ++r) {
    Eigen::Index c = 0;
    switch (what) {
      case PredictWhat::tpm: {
        const Eigen::MatrixXd g = m.tpm_of_row(eta.row(r));
        for (int i = 0; i < K; ++i)
          for (int j = 0; j < K; ++j) out(r, c++) = g(i, j);
        break;
      }
      case PredictWhat::delta: {
        try {
          out.row(r) = stationary(m.tpm_of_row(eta.row(r))).transpose();
        } catch (const ModelError&) {
          out.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
          failed = true;
        }
        break;
      }
      case PredictWhat::obspar:
        for (std::size_t v = 0; v < m.n_vars(); ++v) {
          const Eigen::MatrixXd w = m.obspar_of_row(v, eta.row(r));
          for (Eigen::Index l = 0; l < w.rows(); ++l)
            for (int j = 0; j < K; ++j) out(r, c++) = w(l, j);
        }
        break;
    }
  }
  if (failed) warn("stationary distribution undefined for some rows (reducible or periodic transition matrix)");
  return out;
}

}  // namespace

std::vector<int> viterbi(const Model& m, const ParameterSet& p, int threads) {
  const Engine eng(m, threads);
  const int K = m.n_states();
  const auto& data = m.data();
  std::vector<int> path(data.n_rows(), 0);
  parallel_for(data.n_series(), threads, [&](std::size_t s) {
    SeriesInputs in;
    prepare_checked(eng, s, p, in);
    const Eigen::Index T = in.T;
    Eigen::MatrixXd score(T, K);
    Eigen::MatrixXi back(T, K);
    for (int j = 0; j < K; ++j) score(0, j) = std::log(in.delta[j]) + in.log_emis(0, j);
    for (Eigen::Index t = 1; t < T; ++t) {
      const double* g = in.gamma(t, K);
      for (int j = 0; j < K; ++j) {
        double best = kNegInf;
        int arg = 0;
        for (int i = 0; i < K; ++i) {
          const double v = score(t - 1, i) + std::log(g[j * K + i]);
          if (v > best) {
            best = v;
            arg = i;
          }
        }
        score(t, j) = best + in.log_emis(t, j);
        back(t, j) = arg;
      }
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      if (score.row(t).maxCoeff() == kNegInf) {
        throw ModelError("no state sequence has positive probability at row " + std::to_string(in.begin + t + 1));
      }
    }
    int st = 0;
    for (int j = 1; j < K; ++j)
      if (score(T - 1, j) > score(T - 1, st)) st = j;
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      path[static_cast<std::size_t>(in.begin + t)] = st + 1;
      if (t > 0) st = back(t, st);
    }
  });
  return path;
}

Eigen::MatrixXd state_probs(const Model& m, const ParameterSet& p, int threads) {
  const Engine eng(m, threads);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.data().n_rows()), m.n_states());
  parallel_for(m.data().n_series(), threads, [&](std::size_t s) {
    SeriesInputs in;
    prepare_checked(eng, s, p, in);
    SeriesPass pass;
    eng.forward_backward(s, in, false, pass);
    if (!std::isfinite(pass.loglik)) {
      throw ModelError("every state has zero probability at row " + std::to_string(in.begin + pass.zero_row + 1));
    }
    out.middleRows(in.begin, in.T) = pass.u;
  });
  return out;
}

Residuals pseudo_residuals(const Model& m, const ParameterSet& p, std::uint64_t seed, int threads) {
  const Engine eng(m, threads);
  const int K = m.n_states();
  const auto& data = m.data();
  const std::size_t V = m.n_vars();
  Residuals res;
  for (const auto& o : m.spec().observations) res.names.push_back(o.name);
  res.values.setConstant(static_cast<Eigen::Index>(data.n_rows()), static_cast<Eigen::Index>(V),
                         std::numeric_limits<double>::quiet_NaN());
  std::vector<int> clamped(data.n_series(), 0);
  const boost::math::normal_distribution<double> stdnorm;
  constexpr double lo = 1e-12, hi = 1.0 - 1e-12;

  parallel_for(data.n_series(), threads, [&](std::size_t s) {
    SeriesInputs in;
    prepare_checked(eng, s, p, in);
    SeriesPass pass;
    eng.forward(in, pass);
    if (!std::isfinite(pass.loglik)) {
      throw ModelError("every state has zero probability at row " + std::to_string(in.begin + pass.zero_row + 1));
    }
    Rng rng(substream_seed(seed, s));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd w(K);
    for (Eigen::Index t = 0; t < in.T; ++t) {
      if (t == 0) {
        w = in.delta;
      } else {
        const double* g = in.gamma(t, K);
        for (int j = 0; j < K; ++j) {
          double acc = 0.0;
          for (int i = 0; i < K; ++i) acc += pass.phi(t - 1, i) * g[j * K + i];
          w[j] = acc;
        }
      }
      const auto row = static_cast<std::size_t>(in.begin + t);
      for (std::size_t v = 0; v < V; ++v) {
        const double z = data.responses()[static_cast<std::size_t>(m.response_columns()[v])].values[row];
        if (is_missing(z)) continue;
        const auto& f = m.family_of(v);
        const Eigen::MatrixXd par = m.obspar_of_row(v, in.eta.row(t));
        double upper = 0.0, lower = 0.0;
        for (int j = 0; j < K; ++j) {
          if (w[j] <= 0) continue;
          const Eigen::VectorXd col = par.col(j);
          const std::span<const double> om(col.data(), static_cast<std::size_t>(col.size()));
          upper += w[j] * cdf(f, z, om);
          if (f.discrete) lower += w[j] * cdf_lower(f, z, om);
        }
        double u = f.discrete ? lower + unif(rng) * (upper - lower) : upper;
        if (!(u >= lo && u <= hi)) {
          u = std::clamp(std::isnan(u) ? 0.5 : u, lo, hi);
          ++clamped[s];
        }
        res.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(v)) = boost::math::quantile(stdnorm, u);
      }
    }
  });
  for (int c : clamped) res.clamped += c;
  if (res.clamped > 0) {
    warn(std::to_string(res.clamped) + " pseudo-residual PIT values were clamped to [1e-12, 1 - 1e-12]");
  }
  return res;
}

PredictWhat parse_predict_what(const std::string& s) {
  if (s == "tpm") return PredictWhat::tpm;
  if (s == "delta") return PredictWhat::delta;
  if (s == "obspar") return PredictWhat::obspar;
  throw ModelError("unknown prediction target '" + s + "' (valid: tpm, delta, obspar)");
}

Prediction predict(const Model& m, const ParameterSet& p, const PredictionRequest& request) {
  Prediction out;
  out.names = prediction_names(m, request.what);
  const auto designs = request_designs(m, request);
  const Eigen::MatrixXd eta = Model::eta_from_designs(m.predictors(), designs, p);
  out.mean = prediction_values(m, eta, request.what, out.names.size());
  return out;
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Prediction simulate_ci(const Model& m, const FitResult& fit, const PredictionRequest& request, std::uint64_t seed,
                       int threads) {
  if (request.n_post < 0) throw ModelError("number of posterior draws must be >= 0");
  if (!(request.level > 0 && request.level < 1)) throw ModelError("interval level must lie in (0, 1)");
  Prediction out = predict(m, fit.estimates, request);
  if (request.n_post == 0) return out;
  const Eigen::Index nj = m.n_joint();
  if (fit.covariance.rows() != nj || fit.covariance.cols() != nj) {
    throw ModelError("confidence intervals need the covariance matrix of the estimates");
  }
  // nearest positive semi-definite matrix by eigenvalue clipping
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (fit.covariance + fit.covariance.transpose()));
  const Eigen::MatrixXd L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  const Eigen::VectorXd centre = m.joint_of(fit.estimates);
  const auto fixed = m.joint_fixed();

  const auto designs = request_designs(m, request);
  const std::size_t width = out.names.size();
  const auto J = static_cast<std::size_t>(request.n_post);
  std::vector<Eigen::MatrixXd> draws(J);
  parallel_for(J, threads, [&](std::size_t j) {
    Rng rng(substream_seed(seed, j));
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd zz(nj);
    for (Eigen::Index i = 0; i < nj; ++i) zz[i] = nd(rng);
    Eigen::VectorXd v = centre + L * zz;
    for (Eigen::Index i = 0; i < nj; ++i)
      if (fixed[static_cast<std::size_t>(i)]) v[i] = centre[i];
    const ParameterSet q = m.from_joint(v);
    draws[j] = prediction_values(m, Model::eta_from_designs(m.predictors(), designs, q), request.what, width);
  });
  const double a = 0.5 * (1.0 - request.level);
  out.lcl.resize(out.mean.rows(), out.mean.cols());
  out.ucl.resize(out.mean.rows(), out.mean.cols());
  std::vector<double> vals(J);
  for (Eigen::Index r = 0; r < out.mean.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.mean.cols(); ++c) {
      vals.clear();
      for (const auto& d : draws)
        if (!std::isnan(d(r, c))) vals.push_back(d(r, c));
      out.lcl(r, c) = quantile(vals, a);
      out.ucl(r, c) = quantile(vals, 1.0 - a);
    }
  }
  return out;
}

std::string Statistic::label() const {
  if (kind == "length") return "length";
  if (kind == "quantile") {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, prob);
    return "quantile(" + var + "," + std::string(buf, res.ptr) + ")";
  }
  return kind + "(" + var + ")";
}

Statistic parse_statistic(const std::string& text) {
  std::string t;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
  Statistic s;
  if (t == "length") {
    s.kind = "length";
    return s;
  }
  const auto open = t.find('(');
  if (open == std::string::npos || t.back() != ')') {
    throw ModelError("statistic '" + text + "' must look like mean(var); valid kinds: mean, sd, quantile, acf1, "
                     "zeros, length");
  }
  s.kind = t.substr(0, open);
  std::string args = t.substr(open + 1, t.size() - open - 2);
  static const std::vector<std::string> kinds = {"mean", "sd", "quantile", "acf1", "zeros"};
  if (std::find(kinds.begin(), kinds.end(), s.kind) == kinds.end()) {
    throw ModelError("unknown statistic '" + s.kind + "' (valid: mean, sd, quantile, acf1, zeros, length)");
  }
  if (s.kind == "quantile") {
    const auto comma = args.find(',');
    if (comma == std::string::npos) throw ModelError("quantile statistic needs a probability: quantile(var, 0.9)");
    try {
      s.prob = std::stod(args.substr(comma + 1));
    } catch (const std::exception&) {
      throw ModelError("bad probability in '" + text + "'");
    }
    if (!(s.prob >= 0 && s.prob <= 1)) throw ModelError("quantile probability must lie in [0, 1]");
    args = args.substr(0, comma);
  }
  if (args.empty()) throw ModelError("statistic '" + text + "' names no variable");
  s.var = args;
  return s;
}

double evaluate_statistic(const Statistic& stat, const Dataset& d) {
  if (stat.kind == "length") return static_cast<double>(d.n_rows());
  const auto& z = d.response(stat.var).values;
  std::vector<double> x;
  for (double v : z)
    if (!is_missing(v)) x.push_back(v);
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  if (stat.kind == "mean") return mean;
  if (stat.kind == "sd") {
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return x.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  }
  if (stat.kind == "quantile") return quantile(x, stat.prob);
  if (stat.kind == "zeros") {
    double zeros = 0;
    for (double v : x)
      if (v == 0) zeros += 1;
    return zeros / n;
  }
  if (stat.kind == "acf1") {
    // pairs within a series where both values are present
    double num = 0.0, den = 0.0;
    for (double v : x) den += (v - mean) * (v - mean);
    for (const auto& sv : d.series()) {
      for (std::size_t r = sv.begin + 1; r < sv.end; ++r) {
        if (is_missing(z[r]) || is_missing(z[r - 1])) continue;
        num += (z[r] - mean) * (z[r - 1] - mean);
      }
    }
    return den > 0 ? num / den : 0.0;
  }
  throw ModelError("unknown statistic '" + stat.kind + "'");
}

CheckResult posterior_predictive_check(const Model& m, const ParameterSet& p, const Statistic& stat, int n_sims,
                                       std::uint64_t seed, int threads) {
  if (n_sims <= 0) throw ModelError("posterior predictive checks need at least one simulation");
  if (stat.kind != "length" && !m.data().has_response(stat.var)) {
    throw ModelError("statistic refers to unknown variable '" + stat.var + "'");
  }
  CheckResult out;
  out.stat = stat;
  out.observed = evaluate_statistic(stat, m.data());
  out.simulated.resize(static_cast<std::size_t>(n_sims));
  // each simulation is serial inside; parallelism goes over simulations
  parallel_for(out.simulated.size(), threads, [&](std::size_t i) {
    out.simulated[i] = evaluate_statistic(stat, simulate(m, p, substream_seed(seed, i), 1));
  });
  double below = 0.0, equal = 0.0;
  for (double v : out.simulated) {
    if (v < out.observed) below += 1;
    else if (v == out.observed) equal += 1;
  }
  const double n = static_cast<double>(out.simulated.size());
  out.tail = equal == n ? 0.5 : (below + 0.5 * equal) / n;
  return out;
}

}  // namespace mixhmm
