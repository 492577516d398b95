#ifndef MIXHMM_ENGINE_HPP
#define MIXHMM_ENGINE_HPP

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "mixhmm/model.hpp"

namespace mixhmm {

/// Everything the forward pass of one series needs.
struct SeriesInputs {
  Eigen::Index begin = 0;
  Eigen::Index T = 0;
  Eigen::MatrixXd eta;       // T x predictors
  Eigen::MatrixXd log_emis;  // T x K, joint log density of the row per state
  Eigen::VectorXd emis_max;  // T, row maxima of log_emis
  Eigen::MatrixXd emis;      // T x K, exp(log_emis - emis_max)
  Eigen::MatrixXd dlogf;     // T x predictors, d log f / d eta (observation columns)
  std::vector<double> tpm;   // T blocks of K x K, column-major
  Eigen::VectorXd delta;     // law of the first state
  bool valid = true;         // false when a parameter left its domain

  const double* gamma(Eigen::Index t, int K) const { return tpm.data() + t * K * K; }
};

/// Output of a forward-backward pass over one series.
struct SeriesPass {
  double loglik = 0.0;
  Eigen::Index zero_row = -1;  // first row where every state has zero density
  Eigen::MatrixXd phi;         // T x K filtered probabilities
  Eigen::VectorXd log_scale;   // T per-step log normalisers
  Eigen::MatrixXd u;           // T x K smoothed probabilities
  Eigen::MatrixXd g_eta;       // T x predictors, d loglik / d eta
  Eigen::VectorXd g_delta;     // K - 1, d loglik / d initial logits
};

/// Log-likelihood and its gradient over every series.
struct Evaluation {
  double loglik = 0.0;
  Eigen::VectorXd g_alpha;
  Eigen::VectorXd g_beta;
  Eigen::VectorXd g_delta;
  Eigen::Index zero_row = -1;  // dataset row where all densities vanished
};

/// Scaled forward-backward computations on a compiled model.
class Engine {
 public:
  explicit Engine(const Model& m, int threads = 1);

  const Model& model() const { return m_; }
  int n_states() const { return K_; }

  void compute_eta(std::size_t s, const ParameterSet& p, SeriesInputs& in) const;
  void compute_emissions(std::size_t s, SeriesInputs& in, bool derivs) const;
  void compute_tpms(SeriesInputs& in) const;
  void compute_delta(std::size_t s, const ParameterSet& p, SeriesInputs& in) const;
  /// All of the above.
  void prepare(std::size_t s, const ParameterSet& p, SeriesInputs& in, bool derivs) const;

  /// Forward pass only; fills phi and log_scale.
  void forward(const SeriesInputs& in, SeriesPass& out) const;
  /// Forward and backward passes; fills u and, when `gradient`, g_eta and g_delta.
  void forward_backward(std::size_t s, const SeriesInputs& in, bool gradient, SeriesPass& out) const;

  /// Log-likelihood summed over series (fixed reduction order). When
  /// `keep` is given the per-series inputs are stored there.
  Evaluation evaluate(const ParameterSet& p, bool gradient, std::vector<SeriesInputs>* keep = nullptr) const;

  /// Adds the series' contribution to the alpha/beta/delta gradients.
  void accumulate(std::size_t s, const SeriesPass& pass, Eigen::VectorXd* g_alpha, Eigen::VectorXd* g_beta,
                  Eigen::VectorXd* g_delta) const;

  /// Hessian of -loglik in beta by central differences of the analytic
  /// gradient, perturbing only the series each coefficient touches.
  /// `base` holds the inputs of every series at p.
  Eigen::MatrixXd beta_hessian(const ParameterSet& p, const std::vector<SeriesInputs>& base, double h = 1e-4) const;

 private:
  const Model& m_;
  int K_;
  int threads_;
  std::vector<bool> is_obs_;
};

/// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace mixhmm

#endif  // MIXHMM_ENGINE_HPP
