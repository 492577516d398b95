#ifndef MIXHMM_INFERENCE_HPP
#define MIXHMM_INFERENCE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixhmm/likelihood.hpp"
#include "mixhmm/model.hpp"

namespace mixhmm {

/// Most likely state path (1-based states, one entry per data row),
/// ties going to the lower state. Throws ModelError when no path has
/// positive probability.
std::vector<int> viterbi(const Model& m, const ParameterSet& p, int threads = 1);

/// Pr(S_t = j | all data of the series), rows x K.
Eigen::MatrixXd state_probs(const Model& m, const ParameterSet& p, int threads = 1);

struct Residuals {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // rows x variables, NaN where the response is missing
  int clamped = 0;         // PIT values pushed into [1e-12, 1 - 1e-12]
};

/// One-step-ahead pseudo-residuals Phi^-1(sum_j w_tj F_j(z_t)) with
/// forward-only weights. Discrete families draw the PIT value uniformly
/// between the left limit and the CDF.
Residuals pseudo_residuals(const Model& m, const ParameterSet& p, std::uint64_t seed = 1, int threads = 1);

enum class PredictWhat { tpm, delta, obspar };

PredictWhat parse_predict_what(const std::string& s);

struct PredictionRequest {
  PredictWhat what = PredictWhat::obspar;
  /// 0-based rows of the training data; ignored when newdata is set.
  /// Empty means the first row.
  std::vector<std::size_t> rows;
  std::optional<Dataset> newdata;
  int n_post = 1000;
  double level = 0.95;
};

struct Prediction {
  /// Column names: "S1>S2" (tpm), "state1" (delta), "<var>.<param>.state<j>" (obspar).
  std::vector<std::string> names;
  Eigen::MatrixXd mean;  // requested rows x names
  Eigen::MatrixXd lcl;   // empty without intervals
  Eigen::MatrixXd ucl;
};

/// Point predictions; delta is the stationary distribution of each row's
/// transition matrix.
Prediction predict(const Model& m, const ParameterSet& p, const PredictionRequest& request);

/// Point predictions with quantile intervals from n_post draws of the
/// joint normal approximation N(estimates, covariance).
Prediction simulate_ci(const Model& m, const FitResult& fit, const PredictionRequest& request, std::uint64_t seed,
                       int threads = 1);

/// Statistic of one response variable used by posterior predictive checks.
struct Statistic {
  std::string kind;  // mean, sd, quantile, acf1, zeros, length
  std::string var;
  double prob = 0.5;
  std::string label() const;
};

/// "mean(step)", "sd(step)", "quantile(step, 0.9)", "acf1(step)",
/// "zeros(count)", "length".
Statistic parse_statistic(const std::string& text);
double evaluate_statistic(const Statistic& stat, const Dataset& d);

struct CheckResult {
  Statistic stat;
  double observed = 0.0;
  std::vector<double> simulated;
  /// Mid-rank proportion of simulated values below the observed one;
  /// 0.5 when every simulated value equals the observed one.
  double tail = 0.5;
};

CheckResult posterior_predictive_check(const Model& m, const ParameterSet& p, const Statistic& stat, int n_sims,
                                       std::uint64_t seed, int threads = 1);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double prob);

}  // namespace mixhmm

#endif  // MIXHMM_INFERENCE_HPP
