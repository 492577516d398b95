#include "mixhmm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mixhmm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_inf(double v) { return std::isfinite(v) ? v : kInf; }

}  // namespace

OptimResult nelder_mead(const ObjectiveFn& f, const Eigen::VectorXd& x0, const OptimSettings& s) {
  const auto n = x0.size();
  OptimResult r;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++r.evaluations;
    return finite_or_inf(f(x));
  };
  if (n == 0) {
    r.x = x0;
    r.f = eval(x0);
    r.converged = true;
    r.message = "no free parameters";
    return r;
  }

  // adaptive coefficients (Gao and Han) behave better beyond a few dimensions
  const double dn = static_cast<double>(n);
  const double c_reflect = 1.0, c_expand = 1.0 + 2.0 / dn;
  const double c_contract = 0.75 - 0.5 / dn, c_shrink = 1.0 - 1.0 / dn;

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> fv(static_cast<std::size_t>(n + 1));
  fv[0] = eval(x0);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& p = pts[static_cast<std::size_t>(i + 1)];
    p[i] += s.step * std::max(1.0, std::abs(x0[i]));
    fv[static_cast<std::size_t>(i + 1)] = eval(p);
  }

  std::vector<std::size_t> order(pts.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    std::vector<Eigen::VectorXd> p2;
    std::vector<double> f2;
    for (auto i : order) {
      p2.push_back(pts[i]);
      f2.push_back(fv[i]);
    }
    pts.swap(p2);
    fv.swap(f2);
  };

  sort_simplex();
  while (true) {
    const double best = fv.front(), worst = fv.back();
    if (std::isfinite(worst) && worst - best <= s.tol * (std::abs(best) + s.tol)) {
      r.converged = true;
      r.message = "relative objective change below tolerance";
      break;
    }
    if (r.iterations >= s.max_iter) {
      r.message = "iteration limit reached";
      break;
    }
    ++r.iterations;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
    centroid /= dn;
    const auto& xw = pts.back();

    const Eigen::VectorXd xr = centroid + c_reflect * (centroid - xw);
    const double fr = eval(xr);
    bool shrink = false;
    if (fr < fv.front()) {
      const Eigen::VectorXd xe = centroid + c_expand * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        pts.back() = xe;
        fv.back() = fe;
      } else {
        pts.back() = xr;
        fv.back() = fr;
      }
    } else if (fr < fv[fv.size() - 2]) {
      pts.back() = xr;
      fv.back() = fr;
    } else if (fr < fv.back()) {
      const Eigen::VectorXd xc = centroid + c_contract * (xr - centroid);
      const double fc = eval(xc);
      if (fc <= fr) {
        pts.back() = xc;
        fv.back() = fc;
      } else {
        shrink = true;
      }
    } else {
      const Eigen::VectorXd xc = centroid - c_contract * (centroid - xw);
      const double fc = eval(xc);
      if (fc < fv.back()) {
        pts.back() = xc;
        fv.back() = fc;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (std::size_t i = 1; i < pts.size(); ++i) {
        pts[i] = pts[0] + c_shrink * (pts[i] - pts[0]);
        fv[i] = eval(pts[i]);
      }
    }
    sort_simplex();
    r.trace.push_back(fv.front());
  }
  r.x = pts.front();
  r.f = fv.front();
  return r;
}

OptimResult bfgs(const ObjectiveFn& f, const ObjectiveGradFn& fg, const Eigen::VectorXd& x0, const OptimSettings& s) {
  const auto n = x0.size();
  OptimResult r;
  Eigen::VectorXd x = x0, g(n);
  double fx = fg(x, g);
  ++r.evaluations;
  if (!std::isfinite(fx) || !g.allFinite()) {
    r.x = x;
    r.f = fx;
    r.message = "objective or gradient not finite at the starting point";
    return r;
  }
  if (n == 0) {
    r.x = x;
    r.f = fx;
    r.converged = true;
    r.message = "no free parameters";
    return r;
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  while (true) {
    r.gradient_norm = g.lpNorm<Eigen::Infinity>();
    if (r.gradient_norm < s.gtol) {
      r.converged = true;
      r.message = "gradient below tolerance";
      break;
    }
    if (r.iterations >= s.max_iter) {
      r.message = "iteration limit reached";
      break;
    }
    ++r.iterations;

    Eigen::VectorXd d = -H * g;
    double slope = g.dot(d);
    if (!(slope < 0)) {
      H.setIdentity();
      fresh = true;
      d = -g;
      slope = g.dot(d);
    }
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (dmax > 5.0) {
      d *= 5.0 / dmax;
      slope = g.dot(d);
    }

    double t = 1.0, fn = kInf;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      fn = finite_or_inf(f(x + t * d));
      ++r.evaluations;
      if (fn <= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      // safeguarded quadratic interpolation of the step
      double tq = 0.5 * t;
      if (std::isfinite(fn)) {
        const double denom = 2.0 * (fn - fx - slope * t);
        if (denom > 0) tq = std::clamp(-slope * t * t / denom, 0.1 * t, 0.5 * t);
      }
      t = tq;
    }
    if (!accepted) {
      if (!fresh) {
        H.setIdentity();
        fresh = true;
        --r.iterations;
        continue;
      }
      r.converged = r.gradient_norm < 1e-3;
      r.message = "line search could not decrease the objective";
      break;
    }

    const Eigen::VectorXd step = t * d;
    Eigen::VectorXd xn = x + step, gn(n);
    const double fnew = fg(xn, gn);
    ++r.evaluations;
    if (!std::isfinite(fnew) || !gn.allFinite()) {
      r.message = "gradient not finite";
      break;
    }
    const Eigen::VectorXd y = gn - g;
    const double change = fx - fnew;
    x = xn;
    g = gn;
    fx = fnew;
    r.trace.push_back(fx);

    const double ys = y.dot(step);
    if (ys > 1e-10 * y.norm() * step.norm()) {
      if (fresh) {
        H *= ys / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / ys;
      const Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n) - rho * y * step.transpose();
      H = V.transpose() * H * V + rho * step * step.transpose();
    }
    if (std::abs(change) <= s.tol * (std::abs(fx) + s.tol)) {
      r.converged = true;
      r.message = "relative objective change below tolerance";
      r.gradient_norm = g.lpNorm<Eigen::Infinity>();
      break;
    }
  }
  r.x = x;
  r.f = fx;
  return r;
}

}  // namespace mixhmm
