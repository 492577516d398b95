#ifndef MIXHMM_MODEL_HPP
#define MIXHMM_MODEL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixhmm/data.hpp"
#include "mixhmm/design.hpp"
#include "mixhmm/dists.hpp"
#include "mixhmm/hidden.hpp"

namespace mixhmm {

/// One response variable: its family, a formula per parameter and the
/// natural-scale initial value of each parameter in each state.
struct ObservationSpec {
  std::string name;
  std::string dist;
  std::vector<Formula> formulas;          // per parameter; empty = intercept only
  std::vector<std::vector<double>> init;  // [param][state]
};

struct ConstraintSpec {
  /// Parameter names kept at their initial value.
  std::vector<std::string> fixed;
  /// Groups of parameter names that share one value.
  std::map<std::string, std::vector<std::string>> shared;
};

enum class OptimMethod { nelder_mead, quasi_newton };

struct FitOptions {
  OptimMethod method = OptimMethod::nelder_mead;
  int max_iter = 1000;
  double tol = 1e-8;
  std::uint64_t seed = 1;
  int n_post = 1000;
  double level = 0.95;
  int threads = 1;
  bool covariance = true;
};

struct ModelSpec {
  int n_states = 2;
  std::vector<ObservationSpec> observations;
  ChainSpec hidden;
  /// Covariates read as factors.
  std::vector<std::string> factors;
  ConstraintSpec constraints;
  /// Working-scale starting values by parameter name (coefficients on the
  /// link scale, smoothing parameters as log lambda, delta0 as logits).
  std::map<std::string, double> init;
  FitOptions options;

  std::vector<std::string> response_names() const;
  /// Covariates referenced by any term; lagged responses appear as "lag(z)".
  std::vector<std::string> covariate_names() const;
  /// True when some formula uses a lagged response.
  bool has_lagged_responses() const;
};

/// Full parameter vector of a compiled model.
struct ParameterSet {
  Eigen::VectorXd alpha;       // fixed effects, all predictors
  Eigen::VectorXd beta;        // random effects, all penalty blocks
  Eigen::VectorXd log_lambda;  // one per penalty block
  Eigen::VectorXd delta0;      // initial-distribution logits, K-1 per group
};

/// One linear predictor: an observation parameter in one state or an
/// off-diagonal transition.
struct Predictor {
  bool transition = false;
  int var = -1, param = -1, state = -1;
  int from = -1, to = -1;
  std::string name;  // "step.mean.state1" or "S1>S2"
  DesignBundle design;
  Eigen::Index alpha_begin = 0;
  Eigen::Index beta_begin = 0;
  Eigen::Index lambda_begin = 0;
};

/// Penalty block in global beta coordinates.
struct SmoothingBlock {
  int predictor = 0;
  Eigen::Index beta_begin = 0;
  Eigen::Index size = 0;
  Eigen::MatrixXd S;
  std::string name;  // "S1>S2.re(ID)"
};

/// A model specification bound to a dataset: designs built, parameters
/// laid out and named, constraints resolved.
class Model {
 public:
  Model(ModelSpec spec, const Dataset& data);

  const ModelSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }
  int n_states() const { return spec_.n_states; }
  std::size_t n_vars() const { return families_.size(); }
  const DistFamily& family_of(std::size_t var) const { return *families_[var]; }
  const std::vector<int>& response_columns() const { return response_columns_; }

  const std::vector<Predictor>& predictors() const { return predictors_; }
  /// Predictor index of (variable, parameter, state).
  int obs_predictor(std::size_t var, std::size_t param, int state) const {
    return obs_index_[var][param][static_cast<std::size_t>(state)];
  }
  /// Predictor index of transition i -> j, or -1 for the diagonal and zeros.
  int transition_predictor(int i, int j) const { return tr_index_(i, j); }
  const ZeroMask& zeros() const { return zeros_; }
  const std::vector<SmoothingBlock>& smoothing_blocks() const { return blocks_; }

  Eigen::Index n_alpha() const { return static_cast<Eigen::Index>(alpha_names_.size()); }
  Eigen::Index n_beta() const { return static_cast<Eigen::Index>(beta_names_.size()); }
  Eigen::Index n_lambda() const { return static_cast<Eigen::Index>(lambda_names_.size()); }
  Eigen::Index n_delta() const { return static_cast<Eigen::Index>(delta_names_.size()); }
  bool has_random_effects() const { return !blocks_.empty(); }

  const std::vector<std::string>& alpha_names() const { return alpha_names_; }
  const std::vector<std::string>& beta_names() const { return beta_names_; }
  const std::vector<std::string>& lambda_names() const { return lambda_names_; }
  const std::vector<std::string>& delta_names() const { return delta_names_; }

  /// Group of initial-distribution logits used by series s (-1 when the
  /// initial distribution is not estimated).
  int delta_group(std::size_t series) const;
  /// Global beta columns with a nonzero design entry in each series.
  const std::vector<std::vector<int>>& series_of_beta() const { return series_of_beta_; }

  /// Starting values with overrides and sharing applied.
  const ParameterSet& initial_parameters() const { return initial_; }

  // Outer parameters theta = (alpha, log_lambda, delta0).
  Eigen::Index n_theta() const { return n_alpha() + n_lambda() + n_delta(); }
  std::vector<std::string> theta_names() const;
  Eigen::VectorXd theta_of(const ParameterSet& p) const;
  void set_theta(ParameterSet& p, const Eigen::Ref<const Eigen::VectorXd>& theta) const;
  /// -1 for fixed entries, otherwise the index of the free parameter.
  const std::vector<int>& theta_group() const { return theta_group_; }
  Eigen::Index n_free() const { return n_free_; }
  Eigen::VectorXd free_of(const Eigen::VectorXd& theta) const;
  /// Fills the non-fixed entries of `theta` from `free`.
  Eigen::VectorXd theta_from_free(const Eigen::VectorXd& free, const Eigen::VectorXd& theta) const;
  /// d theta / d free (n_theta x n_free, entries 0 or 1).
  Eigen::MatrixXd free_jacobian() const;

  // Joint vector (alpha, beta, log_lambda, delta0), used for covariances.
  Eigen::Index n_joint() const { return n_alpha() + n_beta() + n_lambda() + n_delta(); }
  std::vector<std::string> joint_names() const;
  Eigen::VectorXd joint_of(const ParameterSet& p) const;
  ParameterSet from_joint(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  /// True for joint entries that are fixed at their initial value.
  std::vector<bool> joint_fixed() const;

  /// Linear predictors (rows x predictors) on the training rows.
  Eigen::MatrixXd eta_training(const ParameterSet& p) const;
  /// Linear predictors on new covariate data. Lagged-response covariates
  /// are taken from the table or derived from its responses.
  Eigen::MatrixXd eta_newdata(const ParameterSet& p, const Dataset& newdata) const;
  /// Design rows for new data, one (X, R) pair per predictor.
  std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> design_newdata(const Dataset& newdata) const;
  static Eigen::MatrixXd eta_from_designs(const std::vector<Predictor>& preds,
                                          const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& designs,
                                          const ParameterSet& p);

  /// Transition matrix from one row of linear predictors.
  Eigen::MatrixXd tpm_of_row(const Eigen::Ref<const Eigen::RowVectorXd>& eta) const;
  /// Natural-scale observation parameters (params x states) of one variable.
  Eigen::MatrixXd obspar_of_row(std::size_t var, const Eigen::Ref<const Eigen::RowVectorXd>& eta) const;
  /// Law of the first state of series s given the transition matrix of its first row.
  Eigen::VectorXd initial_distribution(const ParameterSet& p, std::size_t series,
                                       const Eigen::MatrixXd& first_tpm) const;

  /// Adds "lag(z)" covariate columns for lagged responses.
  Dataset with_lag_covariates(const Dataset& d) const;

 private:
  void build_predictors();
  void build_initial();
  void resolve_constraints();

  ModelSpec spec_;
  Dataset data_;
  std::vector<const DistFamily*> families_;
  std::vector<int> response_columns_;
  std::vector<Predictor> predictors_;
  std::vector<std::vector<std::vector<int>>> obs_index_;
  Eigen::MatrixXi tr_index_;
  ZeroMask zeros_;
  std::vector<SmoothingBlock> blocks_;
  std::vector<std::string> alpha_names_, beta_names_, lambda_names_, delta_names_;
  std::vector<std::vector<int>> series_of_beta_;
  ParameterSet initial_;
  std::vector<int> theta_group_;
  Eigen::Index n_free_ = 0;
};

/// Name of the initial-distribution logit for state j (0-based, j >= 1).
std::string delta_name(int state, const std::string& series = "");

}  // namespace mixhmm

#endif  // MIXHMM_MODEL_HPP
