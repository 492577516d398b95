#ifndef MIXHMM_DESIGN_HPP
#define MIXHMM_DESIGN_HPP

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mixhmm/data.hpp"

namespace mixhmm {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TermKind { intercept, linear, poly, spline_cubic, spline_cyclic, random_intercept };

/// One additive term of a linear predictor.
///
/// DSL forms (see README): `intercept` (or `1`), `linear(x)` (or bare `x`),
/// `poly(x, 2)`, `spline(x, k=10)`, `cyclic(x, k=10, period=24)`, `re(ID)`,
/// and `stateN(<term>)` to restrict an observation term to state N.
struct Term {
  TermKind kind = TermKind::intercept;
  std::string covariate;
  int degree = 1;
  int k = 10;
  double period = 0.0;
  /// 1-based state restriction for observation-parameter terms.
  std::optional<int> state;

  bool penalized() const {
    return kind == TermKind::spline_cubic || kind == TermKind::spline_cyclic ||
           kind == TermKind::random_intercept;
  }
  /// Coefficient label, e.g. "(Intercept)", "x", "spline(x)", "re(ID)".
  std::string label() const;
  std::string to_string() const;

  friend bool operator==(const Term&, const Term&) = default;
};

using Formula = std::vector<Term>;

/// Parses "intercept + linear(x) + spline(x, k=10)". An empty string or
/// "." yields an empty formula. Throws ModelError on malformed input or
/// invalid term settings.
Formula parse_formula(std::string_view text);
std::string format_formula(const Formula& f);
/// Terms of `f` that apply to 1-based `state` (unscoped terms apply to all).
Formula terms_for_state(const Formula& f, int state);
void validate_formula(const Formula& f);

/// Cubic B-spline basis (order 4) with second-difference penalty, kept so
/// new covariate values can be evaluated against the training knots.
class SplineBasis {
 public:
  SplineBasis() = default;

  /// Builds the basis from training values. `center` removes column means
  /// and drops the first column (identifiability with an intercept).
  static SplineBasis build(std::span<const double> x, int k, bool cyclic, double period, bool center);

  /// Basis rows for `x`. Values outside the training range of a cubic
  /// basis are extrapolated linearly from the boundary; `extrapolated`
  /// reports whether that happened.
  Eigen::MatrixXd evaluate(std::span<const double> x, bool* extrapolated = nullptr) const;
  /// Unconstrained basis (k columns, no centering).
  Eigen::MatrixXd evaluate_raw(std::span<const double> x, bool* extrapolated = nullptr) const;

  /// Penalty for the constrained coefficients, including the shrinkage ridge.
  const Eigen::MatrixXd& penalty() const { return penalty_; }
  /// Second-difference penalty D'D on the raw k coefficients.
  const Eigen::MatrixXd& raw_penalty() const { return raw_penalty_; }
  int k() const { return k_; }
  bool cyclic() const { return cyclic_; }
  bool centered() const { return centered_; }
  Eigen::Index n_columns() const { return centered_ ? k_ - 1 : k_; }
  const std::vector<double>& knots() const { return knots_; }

 private:
  Eigen::RowVectorXd raw_row(double x, bool* extrapolated) const;
  Eigen::RowVectorXd cubic_values(double x) const;
  Eigen::RowVectorXd cubic_derivatives(double x) const;

  int k_ = 0;
  int degree_ = 3;
  bool cyclic_ = false;
  double period_ = 0.0;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::vector<double> knots_;
  bool centered_ = false;
  Eigen::RowVectorXd means_;
  Eigen::MatrixXd raw_penalty_;
  Eigen::MatrixXd penalty_;
};

struct SplineResult {
  Eigen::MatrixXd basis;
  Eigen::MatrixXd penalty;
  SplineBasis spline;
};

SplineResult build_spline_basis(std::span<const double> x, int k, bool cyclic, std::optional<double> period,
                                bool center = true);

struct RandomInterceptResult {
  Eigen::MatrixXd indicators;
  Eigen::MatrixXd penalty;
};

RandomInterceptResult build_random_intercept(const Column& factor);

/// Re-evaluates one term on new covariate values using training encodings.
struct TermEncoder {
  Term term;
  std::optional<SplineBasis> spline;
  double poly_center = 0.0;
  double poly_scale = 1.0;
  std::vector<std::string> levels;
  bool categorical = false;

  Eigen::Index n_columns() const;
  /// Rows for the values of `col` (categorical levels are matched by name;
  /// unseen levels give zero rows).
  Eigen::MatrixXd evaluate(const Column& col, bool* extrapolated = nullptr) const;
  /// Rows for raw numeric values (level codes for categorical terms).
  Eigen::MatrixXd evaluate_values(std::span<const double> values, bool* extrapolated = nullptr) const;
};

struct PenaltyBlock {
  Eigen::MatrixXd S;
  Eigen::Index begin = 0;  // first column in R
  Eigen::Index size = 0;
  std::string label;
};

struct ColumnRange {
  std::size_t term = 0;
  bool random = false;
  Eigen::Index begin = 0;
  Eigen::Index size = 0;
};

/// Fixed and random design of one linear predictor: eta = X alpha + R beta.
struct DesignBundle {
  Eigen::MatrixXd X;
  Eigen::MatrixXd R;
  std::vector<PenaltyBlock> penalties;
  std::vector<ColumnRange> column_map;
  std::vector<std::string> fixed_names;
  std::vector<std::string> random_names;
  std::vector<TermEncoder> encoders;  // one per term, declaration order
  bool has_intercept = false;

  Eigen::Index n_fixed() const { return X.cols(); }
  Eigen::Index n_random() const { return R.cols(); }
};

/// Builds X, R and the penalty blocks for `terms` on `d`. X holds the
/// intercept first, then linear/poly terms in declaration order; R holds
/// penalized terms grouped by block in declaration order.
DesignBundle assemble(const Formula& terms, const Dataset& d);

/// Design rows (X, R) for new covariate data using the training encodings.
/// Warns once when a spline is extrapolated.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> design_rows(const DesignBundle& bundle, const Dataset& newdata);

/// Single design row where `value_of(covariate)` returns the training-coded
/// value (level code for factors). Used by sequential simulation.
void design_row(const DesignBundle& bundle, const std::function<double(const std::string&)>& value_of,
                Eigen::Ref<Eigen::RowVectorXd> x_row, Eigen::Ref<Eigen::RowVectorXd> r_row);

}  // namespace mixhmm

#endif  // MIXHMM_DESIGN_HPP
