#ifndef MIXHMM_HIDDEN_HPP
#define MIXHMM_HIDDEN_HPP

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixhmm/design.hpp"

namespace mixhmm {

using ZeroMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class InitialMode { estimated, stationary, fixed };

/// Hidden state process: K states, a formula per off-diagonal transition
/// (the diagonal is the multinomial-logit reference), and the law of S_1.
struct ChainSpec {
  int K = 2;
  /// K x K grid of formulas; diagonal entries are ignored.
  std::vector<std::vector<Formula>> formulas;
  /// Initial transition matrix; empty means 0.9 on the diagonal.
  Eigen::MatrixXd tpm0;
  InitialMode initial_mode = InitialMode::estimated;
  /// 1-based state per series for InitialMode::fixed (one entry = all series).
  std::vector<int> fixed_states;
  /// One set of initial-distribution logits per series instead of a shared one.
  bool delta0_per_series = false;
  /// Initial value of the estimated initial distribution; empty = uniform.
  Eigen::VectorXd delta0;
  /// 1-based (i, j) pairs with gamma_ij == 0.
  std::vector<std::pair<int, int>> structural_zeros;

  ZeroMask zero_mask() const;
  bool is_zero(int i, int j) const;  // 0-based
};

/// 0.9 on the diagonal and 0.1/(K-1) elsewhere.
Eigen::MatrixXd default_tpm(int K);

/// Row-wise softmax with eta_ii = 0 as reference; structurally zero entries
/// are excluded from the normalisation.
void tpm_from_eta(const Eigen::Ref<const Eigen::MatrixXd>& eta, const ZeroMask& zeros,
                  Eigen::Ref<Eigen::MatrixXd> out);
Eigen::MatrixXd tpm_from_eta(const Eigen::Ref<const Eigen::MatrixXd>& eta, const ZeroMask& zeros);

/// Graph checks on the positive pattern of a stochastic matrix.
bool is_irreducible(const Eigen::MatrixXd& gamma);
bool is_aperiodic(const Eigen::MatrixXd& gamma);

/// Stationary distribution from (I - Gamma' + 1 1') delta = 1. Throws
/// ModelError when Gamma is reducible or periodic.
Eigen::VectorXd stationary(const Eigen::MatrixXd& gamma);

/// Linear predictor of one off-diagonal transition.
struct TransitionPredictor {
  int from = 0;  // 0-based
  int to = 0;
  const DesignBundle* design = nullptr;
  std::span<const double> alpha;
  std::span<const double> beta;
};

/// Per-row K x K eta matrices (diagonal and structural zeros are 0).
std::vector<Eigen::MatrixXd> eta_sequence(int K, std::span<const TransitionPredictor> predictors,
                                          std::size_t n_rows);

/// Softmax of (0, logits) with state 1 as reference.
Eigen::VectorXd delta_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits);

}  // namespace mixhmm

#endif  // MIXHMM_HIDDEN_HPP
