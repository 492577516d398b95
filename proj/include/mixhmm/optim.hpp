#ifndef MIXHMM_OPTIM_HPP
#define MIXHMM_OPTIM_HPP

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mixhmm {

struct OptimSettings {
  int max_iter = 1000;
  /// Relative change of the objective that counts as converged.
  double tol = 1e-8;
  /// Gradient sup-norm that counts as converged (quasi-Newton only).
  double gtol = 1e-6;
  /// Initial simplex edge (Nelder-Mead).
  double step = 0.1;
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  double gradient_norm = 0.0;
  /// Best objective value after each iteration (non-increasing).
  std::vector<double> trace;
};

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
/// Returns f(x) and writes the gradient into `grad`.
using ObjectiveGradFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd& grad)>;

/// Nelder-Mead simplex search. Non-finite values are treated as +inf.
OptimResult nelder_mead(const ObjectiveFn& f, const Eigen::VectorXd& x0, const OptimSettings& s = {});

/// BFGS with backtracking line search. `f` evaluates the objective only and
/// is used for line-search trials; `fg` adds the gradient.
OptimResult bfgs(const ObjectiveFn& f, const ObjectiveGradFn& fg, const Eigen::VectorXd& x0,
                 const OptimSettings& s = {});

}  // namespace mixhmm

#endif  // MIXHMM_OPTIM_HPP
