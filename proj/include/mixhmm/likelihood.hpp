#ifndef MIXHMM_LIKELIHOOD_HPP
#define MIXHMM_LIKELIHOOD_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixhmm/model.hpp"

namespace mixhmm {

/// Fitting failed before producing a result (for example a non-finite
/// objective at the starting values).
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inner Newton iterations did not converge; carries the best iterate.
class InnerFailure : public std::runtime_error {
 public:
  InnerFailure(const std::string& what, Eigen::VectorXd best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const Eigen::VectorXd& best() const { return best_; }

 private:
  Eigen::VectorXd best_;
};

/// Negative log-likelihood of the data as a function of the random effects.
class InnerProblem {
 public:
  virtual ~InnerProblem() = default;
  virtual Eigen::Index dim() const = 0;
  /// Value at beta; writes the gradient when `grad` is non-null.
  virtual double value(const Eigen::VectorXd& beta, Eigen::VectorXd* grad) = 0;
  /// Hessian at the beta of the most recent value() call with a gradient.
  virtual Eigen::MatrixXd hessian(const Eigen::VectorXd& beta) = 0;
};

struct LaplaceOptions {
  int max_iter = 200;
  /// Newton decrement, relative to max(1, |objective|), below which the
  /// inner problem counts as solved.
  double tol = 1e-12;
  /// Approximate Hessian of the penalized objective near beta0 (for
  /// example from a nearby evaluation). Steps use it until they are
  /// small; the exact Hessian is then taken once at the solution.
  Eigen::MatrixXd hint;
};

struct LaplaceResult {
  /// -log of the Laplace approximation to the integral over beta.
  double value = 0.0;
  Eigen::VectorXd beta;
  /// Hessian of the penalized objective at beta.
  Eigen::MatrixXd hessian;
  /// Penalized negative log-likelihood at beta.
  double joint_nll = 0.0;
  int iterations = 0;
};

/// Laplace approximation of -log int exp(-nll(beta)) N(beta; 0, P^-1) dbeta
/// with prior precision P (positive definite).
LaplaceResult laplace_approximation(InnerProblem& problem, const Eigen::MatrixXd& precision,
                                    const Eigen::VectorXd& beta0, const LaplaceOptions& options = {});

/// log-likelihood of all series. Returns -inf (with a warning naming the
/// row) when every state has zero density at some row.
double forward_loglik(const Model& m, const ParameterSet& p);

/// Block-diagonal prior precision sum_i lambda_i S_i over beta.
Eigen::MatrixXd prior_precision(const Model& m, const Eigen::VectorXd& log_lambda);

/// -loglik + 1/2 sum_i lambda_i beta_i' S_i beta_i.
double penalized_joint_nll(const Model& m, const ParameterSet& p);

/// Laplace-approximated marginal negative log-likelihood at (alpha,
/// log_lambda, delta0) of p; p.beta is the starting point of the inner
/// Newton iterations. Without random effects this is -forward_loglik.
LaplaceResult laplace_marginal_nll(const Model& m, const ParameterSet& p, const LaplaceOptions& options = {});

struct ConvergenceInfo {
  bool converged = false;
  std::string method;
  std::string message;
  int iterations = 0;
  int evaluations = 0;
  double gradient_norm = 0.0;
  double objective = 0.0;
  /// Best objective after each accepted outer step.
  std::vector<double> trace;
};

struct FitResult {
  ParameterSet estimates;
  /// Covariance of (alpha, beta, log_lambda, delta0); empty when not computed.
  Eigen::MatrixXd covariance;
  double marginal_loglik = 0.0;
  ConvergenceInfo convergence;
};

/// Maximises the (marginal) likelihood over the free parameters.
FitResult fit(const Model& m, const ParameterSet& start, const FitOptions& options);
FitResult fit(const Model& m);

/// Covariance of (alpha, beta, log_lambda, delta0) at the estimates.
Eigen::MatrixXd joint_covariance(const Model& m, const ParameterSet& estimates, int threads = 1);

/// Starting values for the observation parameters from K-means on the
/// standardised responses. Returns the observation blocks of `spec` with
/// `init` replaced.
std::vector<ObservationSpec> suggest_initial(const ModelSpec& spec, const Dataset& d, int K, std::uint64_t seed = 1);

}  // namespace mixhmm

#endif  // MIXHMM_LIKELIHOOD_HPP
