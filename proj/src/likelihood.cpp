#include "mixhmm/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "mixhmm/engine.hpp"
#include "mixhmm/log.hpp"
#include "mixhmm/optim.hpp"

namespace mixhmm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogLambdaBound = 20.0;

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

class HmmInner : public InnerProblem {
 public:
  HmmInner(const Engine& eng, ParameterSet p) : eng_(eng), p_(std::move(p)) {}

  Eigen::Index dim() const override { return eng_.model().n_beta(); }

  double value(const Eigen::VectorXd& beta, Eigen::VectorXd* grad) override {
    p_.beta = beta;
    if (!grad) {
      const auto ev = eng_.evaluate(p_, false);
      return std::isfinite(ev.loglik) ? -ev.loglik : kInf;
    }
    const auto ev = eng_.evaluate(p_, true, &cache_);
    if (!std::isfinite(ev.loglik) || !ev.g_beta.allFinite()) {
      grad->setZero(dim());
      return kInf;
    }
    *grad = -ev.g_beta;
    return -ev.loglik;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& beta) override {
    p_.beta = beta;
    return eng_.beta_hessian(p_, cache_);
  }

 private:
  const Engine& eng_;
  ParameterSet p_;
  std::vector<SeriesInputs> cache_;
};

/// Symmetric inverse that drops non-positive curvature with a warning.
Eigen::MatrixXd inverse_psd(const Eigen::MatrixXd& H, const std::string& what) {
  if (H.size() == 0) return H;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  const double cut = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd inv(ev.size());
  bool clipped = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > cut) {
      inv[i] = 1.0 / ev[i];
    } else {
      inv[i] = 0.0;
      clipped = true;
    }
  }
  if (clipped) warn(what + " is not positive definite; its pseudo-inverse is used for the covariance");
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// Outer objective over the free parameters.
class Outer {
 public:
  Outer(const Model& m, const ParameterSet& start, int threads)
      : m_(m), eng_(m, threads), theta0_(m.theta_of(start)), warm_(start.beta) {
    if (warm_.size() != m.n_beta()) warm_ = Eigen::VectorXd::Zero(m.n_beta());
  }

  ParameterSet params_of(const Eigen::VectorXd& free) const {
    Eigen::VectorXd theta = m_.theta_from_free(free, theta0_);
    auto ll = theta.segment(m_.n_alpha(), m_.n_lambda());
    ll = ll.cwiseMax(-kLogLambdaBound).cwiseMin(kLogLambdaBound);
    ParameterSet p;
    m_.set_theta(p, theta);
    p.beta = warm_;
    return p;
  }

  double value(const Eigen::VectorXd& free) {
    ++evaluations;
    ParameterSet p = params_of(free);
    if (!m_.has_random_effects()) {
      const auto ev = eng_.evaluate(p, false);
      last_zero_row = ev.zero_row;
      return std::isfinite(ev.loglik) ? -ev.loglik : kInf;
    }
    try {
      HmmInner inner(eng_, p);
      const Eigen::MatrixXd P = prior_precision(m_, p.log_lambda);
      LaplaceOptions lo;
      if (warm_h_.rows() == m_.n_beta()) lo.hint = warm_h_ + P;
      const auto lr = laplace_approximation(inner, P, warm_, lo);
      if (!std::isfinite(lr.value)) return kInf;
      warm_ = lr.beta;
      warm_h_ = lr.hessian - P;
      return lr.value;
    } catch (const InnerFailure&) {
      return kInf;
    } catch (const std::domain_error&) {
      return kInf;
    }
  }

  double value_grad(const Eigen::VectorXd& free, Eigen::VectorXd& grad) {
    grad.setZero(free.size());
    if (!m_.has_random_effects()) {
      ++evaluations;
      ParameterSet p = params_of(free);
      const auto ev = eng_.evaluate(p, true);
      last_zero_row = ev.zero_row;
      if (!std::isfinite(ev.loglik)) return kInf;
      Eigen::VectorXd full(m_.n_theta());
      full << -ev.g_alpha, Eigen::VectorXd::Zero(m_.n_lambda()), -ev.g_delta;
      grad = m_.free_jacobian().transpose() * full;
      return -ev.loglik;
    }
    const double f0 = value(free);
    if (!std::isfinite(f0)) return kInf;
    const Eigen::VectorXd centre = warm_;
    const Eigen::MatrixXd centre_h = warm_h_;
    for (Eigen::Index i = 0; i < free.size(); ++i) {
      const double h = 1e-4 * std::max(1.0, std::abs(free[i]));
      Eigen::VectorXd x = free;
      x[i] += h;
      set_warm(centre, centre_h);
      const double fp = value(x);
      x[i] -= 2 * h;
      set_warm(centre, centre_h);
      const double fm = value(x);
      grad[i] = (fp - fm) / (2 * h);
    }
    set_warm(centre, centre_h);
    return f0;
  }

  const Eigen::VectorXd& warm() const { return warm_; }
  const Eigen::MatrixXd& warm_hessian() const { return warm_h_; }
  void set_warm(const Eigen::VectorXd& b, const Eigen::MatrixXd& h) {
    warm_ = b;
    warm_h_ = h;
  }
  const Engine& engine() const { return eng_; }

  int evaluations = 0;
  Eigen::Index last_zero_row = -1;

 private:
  const Model& m_;
  Engine eng_;
  Eigen::VectorXd theta0_;
  Eigen::VectorXd warm_;
  Eigen::MatrixXd warm_h_;  // data part of the last inner Hessian
};

}  // namespace

LaplaceResult laplace_approximation(InnerProblem& problem, const Eigen::MatrixXd& precision,
                                    const Eigen::VectorXd& beta0, const LaplaceOptions& options) {
  const Eigen::Index q = problem.dim();
  Eigen::LLT<Eigen::MatrixXd> prior(precision);
  if (prior.info() != Eigen::Success) throw ModelError("prior precision of the random effects is not positive definite");
  const double logdet_prior = log_det_from_llt(prior);

  auto objective = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad) {
    const double v = problem.value(b, &grad);
    const Eigen::VectorXd pb = precision * b;
    grad += pb;
    return v + 0.5 * b.dot(pb);
  };

  Eigen::VectorXd beta = beta0.size() == q ? beta0 : Eigen::VectorXd::Zero(q);
  Eigen::VectorXd grad(q), grad_new(q);
  double g = objective(beta, grad);
  if (!std::isfinite(g)) throw InnerFailure("penalized objective is not finite at the starting random effects", beta);

  // approximate curvature from the hint until steps are small, then exact
  bool exact = options.hint.rows() != q || options.hint.cols() != q;
  int hint_steps = 0;
  Eigen::MatrixXd H = exact ? Eigen::MatrixXd(problem.hessian(beta) + precision) : options.hint;
  for (int it = 0; it < options.max_iter; ++it) {
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    double mu = 0.0;
    if (llt.info() != Eigen::Success) {
      mu = 1e-8 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
      for (int k = 0; k < 60; ++k, mu *= 10) {
        llt.compute(H + mu * Eigen::MatrixXd::Identity(q, q));
        if (llt.info() == Eigen::Success) break;
      }
      if (llt.info() != Eigen::Success) throw InnerFailure("inner Hessian could not be regularised", beta);
    }
    const Eigen::VectorXd step = -llt.solve(grad);
    const double decrement = -grad.dot(step);
    auto finish = [&]() {
      LaplaceResult r;
      r.beta = beta;
      r.hessian = H;
      r.joint_nll = g;
      r.iterations = it;
      r.value = g - 0.5 * decrement + 0.5 * log_det_from_llt(llt) - 0.5 * logdet_prior;
      return r;
    };
    const bool small = mu == 0.0 && decrement < options.tol * std::max(1.0, std::abs(g));
    if (small && exact) return finish();

    double t = 1.0, g_new = kInf;
    bool accepted = false;
    if (!small) {
      for (int k = 0; k < 50; ++k) {
        const Eigen::VectorXd trial = beta + t * step;
        g_new = objective(trial, grad_new);
        if (std::isfinite(g_new) && g_new <= g - 1e-4 * t * decrement) {
          beta = trial;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
    }
    if (!accepted) {
      if (!exact) {
        // the cache must describe beta before the exact Hessian is taken
        if (!small) g = objective(beta, grad);
        exact = true;
        H = problem.hessian(beta) + precision;
        continue;
      }
      if (mu == 0.0 && decrement < 1e-7) {
        g = objective(beta, grad);
        return finish();
      }
      throw InnerFailure("inner line search failed to decrease the penalized objective", beta);
    }
    g = g_new;
    grad = grad_new;
    if (!exact && ++hint_steps > 5) exact = true;
    if (exact) H = problem.hessian(beta) + precision;
  }
  throw InnerFailure("inner Newton iterations did not converge in " + std::to_string(options.max_iter) + " steps",
                     beta);
}

double forward_loglik(const Model& m, const ParameterSet& p) {
  Engine eng(m, m.spec().options.threads);
  const auto ev = eng.evaluate(p, false);
  if (ev.zero_row >= 0) {
    warn("every state has zero density at data row " + std::to_string(ev.zero_row + 1) +
         "; the log-likelihood is -inf");
  }
  return ev.loglik;
}

Eigen::MatrixXd prior_precision(const Model& m, const Eigen::VectorXd& log_lambda) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(m.n_beta(), m.n_beta());
  const auto& blocks = m.smoothing_blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    P.block(b.beta_begin, b.beta_begin, b.size, b.size) = std::exp(log_lambda[static_cast<Eigen::Index>(i)]) * b.S;
  }
  return P;
}

double penalized_joint_nll(const Model& m, const ParameterSet& p) {
  double pen = 0.0;
  const auto& blocks = m.smoothing_blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const auto bi = p.beta.segment(b.beta_begin, b.size);
    pen += 0.5 * std::exp(p.log_lambda[static_cast<Eigen::Index>(i)]) * bi.dot(b.S * bi);
  }
  return -forward_loglik(m, p) + pen;
}

LaplaceResult laplace_marginal_nll(const Model& m, const ParameterSet& p, const LaplaceOptions& options) {
  if (!m.has_random_effects()) {
    LaplaceResult r;
    r.value = -forward_loglik(m, p);
    r.joint_nll = r.value;
    return r;
  }
  Engine eng(m, m.spec().options.threads);
  HmmInner inner(eng, p);
  Eigen::VectorXd b0 = p.beta.size() == m.n_beta() ? p.beta : Eigen::VectorXd::Zero(m.n_beta());
  return laplace_approximation(inner, prior_precision(m, p.log_lambda), b0, options);
}

FitResult fit(const Model& m) { return fit(m, m.initial_parameters(), m.spec().options); }

FitResult fit(const Model& m, const ParameterSet& start, const FitOptions& options) {
  if (start.alpha.size() != m.n_alpha() || start.log_lambda.size() != m.n_lambda() ||
      start.delta0.size() != m.n_delta()) {
    throw FitError("starting parameters do not match the model layout");
  }
  Outer obj(m, start, options.threads);
  const Eigen::VectorXd x0 = m.free_of(m.theta_of(start));
  const double f0 = obj.value(x0);
  if (!std::isfinite(f0)) {
    std::string msg =
        "the negative log-likelihood is not finite at the initial parameter values; choose initial values "
        "that are plausible for the data (suggest-init derives them by K-means), and check that structural "
        "zeros and known states are compatible with the observations";
    if (obj.last_zero_row >= 0) msg += " (every state has zero density at data row " +
                                       std::to_string(obj.last_zero_row + 1) + ")";
    throw FitError(msg);
  }

  OptimSettings settings;
  settings.max_iter = options.max_iter;
  settings.tol = options.tol;
  OptimResult r;
  ConvergenceInfo info;
  if (options.method == OptimMethod::nelder_mead) {
    info.method = "nelder-mead";
    r = nelder_mead([&](const Eigen::VectorXd& x) { return obj.value(x); }, x0, settings);
  } else {
    info.method = "quasi-newton";
    r = bfgs([&](const Eigen::VectorXd& x) { return obj.value(x); },
             [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return obj.value_grad(x, g); }, x0, settings);
  }

  FitResult out;
  ParameterSet est = obj.params_of(r.x);
  double final_value = r.f;
  if (m.has_random_effects()) {
    HmmInner inner(obj.engine(), est);
    try {
      const Eigen::MatrixXd P = prior_precision(m, est.log_lambda);
      LaplaceOptions lo;
      if (obj.warm_hessian().rows() == m.n_beta()) lo.hint = obj.warm_hessian() + P;
      const auto lr = laplace_approximation(inner, P, obj.warm(), lo);
      est.beta = lr.beta;
      final_value = lr.value;
    } catch (const InnerFailure& e) {
      est.beta = e.best();
      warn(std::string("random effects at the optimum: ") + e.what());
    }
  }
  if (!m.has_random_effects() && r.x.size() > 0) {
    Eigen::VectorXd g;
    obj.value_grad(r.x, g);
    r.gradient_norm = g.lpNorm<Eigen::Infinity>();
  }
  info.converged = r.converged;
  info.message = r.message;
  info.iterations = r.iterations;
  info.evaluations = obj.evaluations;
  info.gradient_norm = r.gradient_norm;
  info.objective = final_value;
  info.trace = r.trace;

  out.estimates = est;
  out.marginal_loglik = -final_value;
  out.convergence = info;
  if (options.covariance) {
    try {
      out.covariance = joint_covariance(m, est, options.threads);
    } catch (const std::exception& e) {
      warn(std::string("covariance not available: ") + e.what());
    }
  }
  return out;
}

Eigen::MatrixXd joint_covariance(const Model& m, const ParameterSet& est, int threads) {
  Outer obj(m, est, threads);
  const Eigen::VectorXd x = m.free_of(m.theta_of(est));
  const Eigen::Index d = x.size();
  const Eigen::MatrixXd Jf = m.free_jacobian();
  const Eigen::Index na = m.n_alpha(), nb = m.n_beta(), nl = m.n_lambda();

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  if (!m.has_random_effects()) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      Eigen::VectorXd xp = x, xm = x, gp, gm;
      xp[i] += h;
      xm[i] -= h;
      const double fp = obj.value_grad(xp, gp);
      const double fm = obj.value_grad(xm, gm);
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw FitError("objective not finite near the estimates");
      H.col(i) = (gp - gm) / (2 * h);
    }
    H = 0.5 * (H + H.transpose());
    const Eigen::MatrixXd V = inverse_psd(H, "Hessian of the negative log-likelihood");
    const Eigen::MatrixXd Vt = Jf * V * Jf.transpose();
    // with no random effects the joint vector is theta itself
    return Vt;
  }

  // second differences of the Laplace objective, warm-started at the estimates
  const Eigen::VectorXd beta_hat = est.beta;
  obj.value(x);
  const Eigen::MatrixXd h_hat = obj.warm_hessian();
  auto F = [&](const Eigen::VectorXd& xx) {
    obj.set_warm(beta_hat, h_hat);
    const double v = obj.value(xx);
    if (!std::isfinite(v)) throw FitError("marginal objective not finite near the estimates");
    return v;
  };
  Eigen::VectorXd h(d);
  for (Eigen::Index i = 0; i < d; ++i) h[i] = 1e-3 * std::max(1.0, std::abs(x[i]));
  const double f0 = F(x);
  Eigen::VectorXd fp(d), fm(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd xx = x;
    xx[i] += h[i];
    fp[i] = F(xx);
    xx[i] -= 2 * h[i];
    fm[i] = F(xx);
    H(i, i) = (fp[i] - 2 * f0 + fm[i]) / (h[i] * h[i]);
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      Eigen::VectorXd xx = x;
      xx[i] += h[i];
      xx[j] += h[j];
      const double fpp = F(xx);
      xx[j] -= 2 * h[j];
      const double fpm = F(xx);
      xx[i] -= 2 * h[i];
      const double fmm = F(xx);
      xx[j] += 2 * h[j];
      const double fmp = F(xx);
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j]);
    }
  }
  const Eigen::MatrixXd V = inverse_psd(H, "Hessian of the marginal negative log-likelihood");

  // inner curvature and its dependence on theta
  const Engine& eng = obj.engine();
  std::vector<SeriesInputs> cache;
  ParameterSet p = est;
  eng.evaluate(p, true, &cache);
  const Eigen::MatrixXd Hbb = eng.beta_hessian(p, cache) + prior_precision(m, p.log_lambda);
  auto grad_beta = [&](const Eigen::VectorXd& xx) {
    ParameterSet q = obj.params_of(xx);
    q.beta = beta_hat;
    const auto ev = eng.evaluate(q, true);
    return Eigen::VectorXd(-ev.g_beta + prior_precision(m, q.log_lambda) * beta_hat);
  };
  Eigen::MatrixXd Hbt(nb, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double hh = 1e-5 * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += hh;
    xm[i] -= hh;
    Hbt.col(i) = (grad_beta(xp) - grad_beta(xm)) / (2 * hh);
  }
  const Eigen::MatrixXd Hinv = inverse_psd(Hbb, "inner Hessian");
  const Eigen::MatrixXd Jb = -Hinv * Hbt;  // d beta_hat / d free

  const Eigen::MatrixXd Vt = Jf * V * Jf.transpose();
  const Eigen::MatrixXd Cbb = Hinv + Jb * V * Jb.transpose();
  const Eigen::MatrixXd Cbt = Jb * V * Jf.transpose();

  // theta index -> joint index
  const Eigen::Index nt = m.n_theta();
  std::vector<Eigen::Index> pos(static_cast<std::size_t>(nt));
  for (Eigen::Index i = 0; i < nt; ++i) pos[static_cast<std::size_t>(i)] = i < na ? i : i + nb;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m.n_joint(), m.n_joint());
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < nt; ++j) C(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]) = Vt(i, j);
    for (Eigen::Index k = 0; k < nb; ++k) {
      C(na + k, pos[static_cast<std::size_t>(i)]) = Cbt(k, i);
      C(pos[static_cast<std::size_t>(i)], na + k) = Cbt(k, i);
    }
  }
  C.block(na, na, nb, nb) = Cbb;
  (void)nl;
  return 0.5 * (C + C.transpose());
}

// ---------------------------------------------------------------------------
// K-means starting values

namespace {

struct Clustering {
  std::vector<int> label;  // per unique row
  Eigen::MatrixXd centres;
  double sse = kInf;
};

Clustering kmeans_weighted(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, int K, std::mt19937_64& rng) {
  const Eigen::Index n = X.rows();
  Clustering c;
  c.centres.resize(K, X.cols());
  // k-means++ seeding, weighted by multiplicity
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd d2 = Eigen::VectorXd::Constant(n, kInf);
  auto pick = [&](const Eigen::VectorXd& weights) {
    const double total = weights.sum();
    double r = unif(rng) * total, acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += weights[i];
      if (r < acc) return i;
    }
    return n - 1;
  };
  c.centres.row(0) = X.row(pick(w));
  for (int k = 1; k < K; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (X.row(i) - c.centres.row(k - 1)).squaredNorm());
    const Eigen::VectorXd p = w.cwiseProduct(d2);
    c.centres.row(k) = X.row(p.sum() > 0 ? pick(p) : pick(w));
  }
  c.label.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = kInf;
      for (int k = 0; k < K; ++k) {
        const double dd = (X.row(i) - c.centres.row(k)).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = k;
        }
      }
      if (c.label[static_cast<std::size_t>(i)] != best) {
        c.label[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, X.cols());
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(c.label[static_cast<std::size_t>(i)]) += w[i] * X.row(i);
      cnt[c.label[static_cast<std::size_t>(i)]] += w[i];
    }
    for (int k = 0; k < K; ++k) {
      if (cnt[k] > 0) {
        c.centres.row(k) = sum.row(k) / cnt[k];
      } else {
        // move an empty centre to the point farthest from its centre
        Eigen::Index far = 0;
        double fd = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double dd = (X.row(i) - c.centres.row(c.label[static_cast<std::size_t>(i)])).squaredNorm();
          if (dd > fd) {
            fd = dd;
            far = i;
          }
        }
        c.centres.row(k) = X.row(far);
        c.label[static_cast<std::size_t>(far)] = k;
        changed = true;
      }
    }
    if (!changed) break;
  }
  c.sse = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    c.sse += w[i] * (X.row(i) - c.centres.row(c.label[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return c;
}

struct WeightedValues {
  std::vector<double> z, w;
  double total() const {
    double t = 0;
    for (double x : w) t += x;
    return t;
  }
  double mean() const {
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += w[i] * z[i];
    return s / total();
  }
  double var() const {
    const double m = mean();
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += w[i] * (z[i] - m) * (z[i] - m);
    return s / total();
  }
};

double kappa_from_resultant(double r) {
  // Best and Fisher approximation to the inverse of A1 = I1/I0
  r = std::clamp(r, 1e-6, 0.999);
  if (r < 0.53) return 2 * r + r * r * r + 5 * std::pow(r, 5) / 6;
  if (r < 0.85) return -0.4 + 1.39 * r + 0.43 / (1 - r);
  return 1 / (r * r * r - 4 * r * r + 3 * r);
}

std::vector<double> moment_estimates(const DistFamily& f, const WeightedValues& v, double fallback_sd,
                                     const std::vector<double>& user_init) {
  const double m = v.mean();
  double sd = std::sqrt(v.var());
  if (!(sd > 1e-8 * std::max(1.0, std::abs(m)))) sd = std::max(fallback_sd, 1e-3);
  switch (f.id) {
    case FamilyId::norm: return {m, sd};
    case FamilyId::gamma2: return {std::max(m, 1e-3), sd};
    case FamilyId::pois: return {std::max(m, 1e-3)};
    case FamilyId::exp: return {1.0 / std::max(m, 1e-3)};
    case FamilyId::beta: {
      const double mm = std::clamp(m, 0.01, 0.99);
      double common = mm * (1 - mm) / (sd * sd) - 1;
      if (!(common > 0)) common = 2;
      return {mm * common, (1 - mm) * common};
    }
    case FamilyId::binom: {
      const double size = user_init.empty() ? 1.0 : user_init[0];
      return {size, std::clamp(m / size, 0.01, 0.99)};
    }
    case FamilyId::nbinom: {
      const double mm = std::max(m, 1e-3), var = sd * sd;
      const double size = var > mm ? mm * mm / (var - mm) : 100.0;
      return {size, size / (size + mm)};
    }
    case FamilyId::vm:
    case FamilyId::wrpcauchy: {
      double c = 0, s = 0;
      for (std::size_t i = 0; i < v.z.size(); ++i) {
        c += v.w[i] * std::cos(v.z[i]);
        s += v.w[i] * std::sin(v.z[i]);
      }
      c /= v.total();
      s /= v.total();
      const double mu = std::atan2(s, c);
      const double r = std::sqrt(c * c + s * s);
      if (f.id == FamilyId::vm) return {mu, kappa_from_resultant(r)};
      return {mu, std::clamp(r, 0.01, 0.99)};
    }
    case FamilyId::zipois: {
      double zeros = 0;
      for (std::size_t i = 0; i < v.z.size(); ++i)
        if (v.z[i] == 0) zeros += v.w[i];
      const double p0 = zeros / v.total();
      const double zi = std::clamp(0.5 * p0, 0.01, 0.9);
      return {std::max(m / (1 - zi), 1e-3), zi};
    }
    case FamilyId::zigamma2: {
      WeightedValues pos;
      double zeros = 0;
      for (std::size_t i = 0; i < v.z.size(); ++i) {
        if (v.z[i] > 0) {
          pos.z.push_back(v.z[i]);
          pos.w.push_back(v.w[i]);
        } else {
          zeros += v.w[i];
        }
      }
      const double zi = std::clamp(zeros / v.total(), 0.01, 0.99);
      if (pos.z.empty()) return {1.0, 1.0, zi};
      double psd = std::sqrt(pos.var());
      if (!(psd > 0)) psd = std::max(fallback_sd, 1e-3);
      return {pos.mean(), psd, zi};
    }
  }
  return {};
}

}  // namespace

std::vector<ObservationSpec> suggest_initial(const ModelSpec& spec, const Dataset& d, int K, std::uint64_t seed) {
  if (K < 2) throw ModelError("number of states must be >= 2");
  if (spec.observations.empty()) throw ModelError("model has no observation variables");
  const auto V = static_cast<Eigen::Index>(spec.observations.size());
  std::vector<const Column*> cols;
  for (const auto& o : spec.observations) {
    if (!d.has_response(o.name)) throw ModelError("data has no response column '" + o.name + "'");
    cols.push_back(&d.response(o.name));
  }
  // complete rows, deduplicated with multiplicities
  std::map<std::vector<double>, double> unique;
  for (std::size_t r = 0; r < d.n_rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(V));
    bool complete = true;
    for (Eigen::Index v = 0; v < V; ++v) {
      row[static_cast<std::size_t>(v)] = cols[static_cast<std::size_t>(v)]->values[r];
      if (is_missing(row[static_cast<std::size_t>(v)])) complete = false;
    }
    if (complete) unique[row] += 1.0;
  }
  if (static_cast<int>(unique.size()) < K) {
    throw ModelError("fewer distinct complete observations (" + std::to_string(unique.size()) + ") than states (" +
                     std::to_string(K) + ")");
  }
  const auto n = static_cast<Eigen::Index>(unique.size());
  Eigen::MatrixXd raw(n, V);
  Eigen::VectorXd w(n);
  {
    Eigen::Index i = 0;
    for (const auto& [row, count] : unique) {
      for (Eigen::Index v = 0; v < V; ++v) raw(i, v) = row[static_cast<std::size_t>(v)];
      w[i++] = count;
    }
  }
  const double wt = w.sum();
  Eigen::VectorXd mean = (raw.transpose() * w) / wt;
  Eigen::VectorXd sd(V);
  for (Eigen::Index v = 0; v < V; ++v) {
    const double var = (w.array() * (raw.col(v).array() - mean[v]).square()).sum() / wt;
    sd[v] = var > 0 ? std::sqrt(var) : 1.0;
  }
  Eigen::MatrixXd X = (raw.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();

  std::mt19937_64 rng(seed);
  Clustering best;
  for (int restart = 0; restart < 10; ++restart) {
    Clustering c = kmeans_weighted(X, w, K, rng);
    if (c.sse < best.sse) best = std::move(c);
  }
  // order states by the centre of the first variable
  std::vector<int> order(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) order[static_cast<std::size_t>(k)] = k;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return best.centres(a, 0) < best.centres(b, 0); });

  std::vector<ObservationSpec> out = spec.observations;
  for (Eigen::Index v = 0; v < V; ++v) {
    auto& o = out[static_cast<std::size_t>(v)];
    const auto& f = family(o.dist);
    o.init.assign(f.n_params(), std::vector<double>(static_cast<std::size_t>(K), 0.0));
    for (int s = 0; s < K; ++s) {
      const int k = order[static_cast<std::size_t>(s)];
      WeightedValues vals;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (best.label[static_cast<std::size_t>(i)] != k) continue;
        vals.z.push_back(raw(i, v));
        vals.w.push_back(w[i]);
      }
      std::vector<double> user;
      const auto& orig = spec.observations[static_cast<std::size_t>(v)].init;
      for (const auto& par : orig) user.push_back(par.empty() ? 1.0 : par[std::min(par.size() - 1, std::size_t(s))]);
      const auto est = moment_estimates(f, vals, sd[v] / K, user);
      for (std::size_t l = 0; l < f.n_params(); ++l) o.init[l][static_cast<std::size_t>(s)] = est[l];
    }
  }
  return out;
}

}  // namespace mixhmm
