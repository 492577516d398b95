#include "mixhmm/hidden.hpp"

#include <cmath>
#include <numeric>

namespace mixhmm {

ZeroMask ChainSpec::zero_mask() const {
  ZeroMask z = ZeroMask::Constant(K, K, false);
  for (const auto& [i, j] : structural_zeros) {
    if (i < 1 || j < 1 || i > K || j > K) throw ModelError("structural zero outside the state range");
    if (i == j) throw ModelError("structural zeros cannot be on the diagonal");
    z(i - 1, j - 1) = true;
  }
  return z;
}

bool ChainSpec::is_zero(int i, int j) const {
  for (const auto& [a, b] : structural_zeros) {
    if (a == i + 1 && b == j + 1) return true;
  }
  return false;
}

Eigen::MatrixXd default_tpm(int K) {
  if (K < 2) throw ModelError("number of states must be >= 2");
  Eigen::MatrixXd g = Eigen::MatrixXd::Constant(K, K, 0.1 / (K - 1));
  g.diagonal().setConstant(0.9);
  return g;
}

void tpm_from_eta(const Eigen::Ref<const Eigen::MatrixXd>& eta, const ZeroMask& zeros,
                  Eigen::Ref<Eigen::MatrixXd> out) {
  const auto K = eta.rows();
  for (Eigen::Index i = 0; i < K; ++i) {
    double m = 0.0;  // diagonal reference
    for (Eigen::Index j = 0; j < K; ++j) {
      if (j != i && !zeros(i, j)) m = std::max(m, eta(i, j));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < K; ++j) {
      double e = 0.0;
      if (j == i) e = std::exp(-m);
      else if (!zeros(i, j)) e = std::exp(eta(i, j) - m);
      out(i, j) = e;
      total += e;
    }
    out.row(i) /= total;
  }
}

Eigen::MatrixXd tpm_from_eta(const Eigen::Ref<const Eigen::MatrixXd>& eta, const ZeroMask& zeros) {
  Eigen::MatrixXd out(eta.rows(), eta.cols());
  tpm_from_eta(eta, zeros, out);
  return out;
}

namespace {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

BoolMatrix pattern(const Eigen::MatrixXd& g) { return (g.array() > 0.0).matrix(); }

BoolMatrix bool_product(const BoolMatrix& a, const BoolMatrix& b) {
  const auto K = a.rows();
  BoolMatrix c = BoolMatrix::Constant(K, K, false);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index k = 0; k < K; ++k) {
      if (!a(i, k)) continue;
      for (Eigen::Index j = 0; j < K; ++j) c(i, j) = c(i, j) || b(k, j);
    }
  }
  return c;
}

}  // namespace

bool is_irreducible(const Eigen::MatrixXd& gamma) {
  const auto K = gamma.rows();
  const BoolMatrix p = pattern(gamma);
  // reachability closure by repeated squaring of (I + P)
  BoolMatrix reach = p;
  for (Eigen::Index i = 0; i < K; ++i) reach(i, i) = true;
  for (Eigen::Index step = 1; step < K; step *= 2) reach = bool_product(reach, reach);
  return reach.all();
}

bool is_aperiodic(const Eigen::MatrixXd& gamma) {
  // an irreducible chain is aperiodic iff P^m > 0 for m = (K-1)^2 + 1 (Wielandt)
  const auto K = gamma.rows();
  const BoolMatrix p = pattern(gamma);
  BoolMatrix acc = p;
  const Eigen::Index m = (K - 1) * (K - 1) + 1;
  for (Eigen::Index s = 1; s < m; ++s) acc = bool_product(acc, p);
  return acc.all();
}

Eigen::VectorXd stationary(const Eigen::MatrixXd& gamma) {
  const auto K = gamma.rows();
  if (gamma.cols() != K) throw ModelError("transition matrix must be square");
  if (!is_irreducible(gamma)) {
    throw ModelError("transition matrix is reducible, so the stationary distribution is not unique; "
                     "use the \"fixed\" or \"estimated\" initial distribution");
  }
  if (!is_aperiodic(gamma)) {
    throw ModelError("transition matrix is periodic; use the \"fixed\" or \"estimated\" initial distribution");
  }
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(K, K) - gamma.transpose();
  A.array() += 1.0;
  Eigen::VectorXd delta = A.partialPivLu().solve(Eigen::VectorXd::Ones(K));
  delta = delta.cwiseMax(0.0);
  return delta / delta.sum();
}

std::vector<Eigen::MatrixXd> eta_sequence(int K, std::span<const TransitionPredictor> predictors,
                                          std::size_t n_rows) {
  std::vector<Eigen::MatrixXd> out(n_rows, Eigen::MatrixXd::Zero(K, K));
  for (const auto& p : predictors) {
    if (p.design == nullptr) continue;
    const auto& d = *p.design;
    if (static_cast<std::size_t>(d.X.rows()) != n_rows || d.X.cols() != static_cast<Eigen::Index>(p.alpha.size()) ||
        d.R.cols() != static_cast<Eigen::Index>(p.beta.size())) {
      throw ModelError("transition design dimension mismatch");
    }
    Eigen::Map<const Eigen::VectorXd> a(p.alpha.data(), static_cast<Eigen::Index>(p.alpha.size()));
    Eigen::Map<const Eigen::VectorXd> b(p.beta.data(), static_cast<Eigen::Index>(p.beta.size()));
    Eigen::VectorXd eta = d.X * a;
    if (d.R.cols() > 0) eta += d.R * b;
    for (std::size_t t = 0; t < n_rows; ++t) out[t](p.from, p.to) = eta[static_cast<Eigen::Index>(t)];
  }
  return out;
}

Eigen::VectorXd delta_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const auto K = logits.size() + 1;
  Eigen::VectorXd v(K);
  v[0] = 0.0;
  v.tail(K - 1) = logits;
  const double m = v.maxCoeff();
  v = (v.array() - m).exp();
  return v / v.sum();
}

}  // namespace mixhmm
