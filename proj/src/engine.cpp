#include "mixhmm/engine.hpp"

#include <array>
#include <atomic>
#include <functional>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace mixhmm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kStationaryStep = 1e-5;

}  // namespace

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Engine::Engine(const Model& m, int threads) : m_(m), K_(m.n_states()), threads_(threads) {
  for (const auto& p : m_.predictors()) is_obs_.push_back(!p.transition);
}

void Engine::compute_eta(std::size_t s, const ParameterSet& p, SeriesInputs& in) const {
  const auto& sv = m_.data().series()[s];
  in.begin = static_cast<Eigen::Index>(sv.begin);
  in.T = static_cast<Eigen::Index>(sv.size());
  const auto& preds = m_.predictors();
  in.eta.resize(in.T, static_cast<Eigen::Index>(preds.size()));
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& pr = preds[k];
    const auto& d = pr.design;
    auto col = in.eta.col(static_cast<Eigen::Index>(k));
    if (d.n_fixed() == 1 && d.has_intercept) {
      col.setConstant(p.alpha[pr.alpha_begin]);
    } else {
      col.noalias() = d.X.middleRows(in.begin, in.T) * p.alpha.segment(pr.alpha_begin, d.n_fixed());
    }
    if (d.n_random() > 0) {
      col.noalias() += d.R.middleRows(in.begin, in.T) * p.beta.segment(pr.beta_begin, d.n_random());
    }
  }
}

void Engine::compute_emissions(std::size_t s, SeriesInputs& in, bool derivs) const {
  (void)s;
  const Eigen::Index T = in.T;
  in.log_emis.setZero(T, K_);
  if (derivs) in.dlogf.setZero(T, in.eta.cols());
  in.valid = true;
  const auto& responses = m_.data().responses();
  std::array<double, 4> w{}, d{};
  for (std::size_t v = 0; v < m_.n_vars(); ++v) {
    const auto& f = m_.family_of(v);
    const std::size_t L = f.n_params();
    const auto& z = responses[static_cast<std::size_t>(m_.response_columns()[v])].values;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double zt = z[static_cast<std::size_t>(in.begin + t)];
      if (is_missing(zt)) continue;
      for (int j = 0; j < K_; ++j) {
        for (std::size_t l = 0; l < L; ++l) w[l] = link_invert(f, l, in.eta(t, m_.obs_predictor(v, l, j)));
        double lp;
        try {
          lp = log_pdf(f, zt, std::span<const double>(w.data(), L));
        } catch (const std::domain_error&) {
          in.valid = false;
          return;
        }
        in.log_emis(t, j) += lp;
        if (derivs && std::isfinite(lp)) {
          dlogpdf_deta(f, zt, std::span<const double>(w.data(), L), std::span<double>(d.data(), L));
          for (std::size_t l = 0; l < L; ++l) {
            const int k = m_.obs_predictor(v, l, j);
            double g = d[l];
            if (f.id == FamilyId::wrpcauchy && l == 1 && std::abs(in.eta(t, k)) > 15.0) g = 0.0;
            in.dlogf(t, k) = g;
          }
        }
      }
    }
  }
  if (m_.data().has_known_state()) {
    const auto& known = m_.data().known_state();
    for (Eigen::Index t = 0; t < T; ++t) {
      const int ks = known[static_cast<std::size_t>(in.begin + t)];
      if (ks <= 0) continue;
      for (int j = 0; j < K_; ++j) {
        if (j != ks - 1) in.log_emis(t, j) = kNegInf;
      }
    }
  }
  if (in.log_emis.array().isNaN().any()) {
    in.valid = false;
    return;
  }
  in.emis_max = in.log_emis.rowwise().maxCoeff();
  in.emis.resize(T, K_);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double m = in.emis_max[t];
    for (int j = 0; j < K_; ++j) in.emis(t, j) = m == kNegInf ? 0.0 : std::exp(in.log_emis(t, j) - m);
  }
}

void Engine::compute_tpms(SeriesInputs& in) const {
  const Eigen::Index T = in.T;
  const auto KK = static_cast<std::size_t>(K_ * K_);
  in.tpm.resize(static_cast<std::size_t>(T) * KK);
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(K_, K_);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int i = 0; i < K_; ++i) {
      for (int j = 0; j < K_; ++j) {
        const int k = m_.transition_predictor(i, j);
        if (k >= 0) e(i, j) = in.eta(t, k);
      }
    }
    Eigen::Map<Eigen::MatrixXd> g(in.tpm.data() + static_cast<std::size_t>(t) * KK, K_, K_);
    tpm_from_eta(e, m_.zeros(), g);
  }
}

void Engine::compute_delta(std::size_t s, const ParameterSet& p, SeriesInputs& in) const {
  try {
    const Eigen::Map<const Eigen::MatrixXd> g0(in.tpm.data(), K_, K_);
    in.delta = m_.initial_distribution(p, s, g0);
  } catch (const ModelError&) {
    in.valid = false;
  }
}

void Engine::prepare(std::size_t s, const ParameterSet& p, SeriesInputs& in, bool derivs) const {
  compute_eta(s, p, in);
  compute_tpms(in);
  compute_emissions(s, in, derivs);
  if (in.valid) compute_delta(s, p, in);
}

void Engine::forward(const SeriesInputs& in, SeriesPass& out) const {
  const Eigen::Index T = in.T;
  out.phi.resize(T, K_);
  out.log_scale.resize(T);
  out.loglik = 0.0;
  out.zero_row = -1;
  Eigen::VectorXd a(K_);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double m = in.emis_max[t];
    if (m == kNegInf) {
      out.zero_row = t;
      out.loglik = kNegInf;
      return;
    }
    if (t == 0) {
      for (int j = 0; j < K_; ++j) a[j] = in.delta[j] * in.emis(t, j);
    } else {
      const double* g = in.gamma(t, K_);
      for (int j = 0; j < K_; ++j) {
        double acc = 0.0;
        for (int i = 0; i < K_; ++i) acc += out.phi(t - 1, i) * g[j * K_ + i];
        a[j] = acc * in.emis(t, j);
      }
    }
    const double c = a.sum();
    if (!(c > 0.0)) {
      out.zero_row = t;
      out.loglik = kNegInf;
      return;
    }
    out.phi.row(t) = a.transpose() / c;
    out.log_scale[t] = std::log(c) + m;
    out.loglik += out.log_scale[t];
  }
}

void Engine::forward_backward(std::size_t s, const SeriesInputs& in, bool gradient, SeriesPass& out) const {
  const Eigen::Index T = in.T;
  forward(in, out);
  const auto P = in.eta.cols();
  if (gradient) {
    out.g_eta.setZero(T, P);
    out.g_delta.setZero(K_ - 1);
  }
  if (!std::isfinite(out.loglik)) {
    out.u.setZero(T, K_);
    return;
  }
  out.u.resize(T, K_);
  Eigen::VectorXd b = Eigen::VectorXd::Ones(K_), bprev(K_), v(K_), rowsum(K_);
  Eigen::MatrixXd xi(K_, K_);
  out.u.row(T - 1) = out.phi.row(T - 1);
  for (Eigen::Index t = T - 1; t >= 1; --t) {
    const double* g = in.gamma(t, K_);
    const double inv_c = std::exp(in.emis_max[t] - out.log_scale[t]);
    for (int j = 0; j < K_; ++j) v[j] = in.emis(t, j) * inv_c * b[j];
    for (int i = 0; i < K_; ++i) {
      double acc = 0.0;
      for (int j = 0; j < K_; ++j) acc += g[j * K_ + i] * v[j];
      bprev[i] = acc;
    }
    if (gradient) {
      for (int i = 0; i < K_; ++i) {
        double sum = 0.0;
        for (int j = 0; j < K_; ++j) {
          xi(i, j) = out.phi(t - 1, i) * g[j * K_ + i] * v[j];
          sum += xi(i, j);
        }
        rowsum[i] = sum;
      }
      for (int i = 0; i < K_; ++i) {
        for (int j = 0; j < K_; ++j) {
          const int k = m_.transition_predictor(i, j);
          if (k >= 0) out.g_eta(t, k) = xi(i, j) - g[j * K_ + i] * rowsum[i];
        }
      }
    }
    b = bprev;
    out.u.row(t - 1) = out.phi.row(t - 1).cwiseProduct(b.transpose());
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    const double total = out.u.row(t).sum();
    if (total > 0) out.u.row(t) /= total;
  }
  if (!gradient) return;

  for (Eigen::Index k = 0; k < P; ++k) {
    const auto& pr = m_.predictors()[static_cast<std::size_t>(k)];
    if (pr.transition) continue;
    out.g_eta.col(k) = out.u.col(pr.state).cwiseProduct(in.dlogf.col(k));
  }

  switch (m_.spec().hidden.initial_mode) {
    case InitialMode::estimated:
      for (int j = 1; j < K_; ++j) out.g_delta[j - 1] = out.u(0, j) - in.delta[j];
      break;
    case InitialMode::stationary: {
      // delta depends on the first row's transition matrix
      for (Eigen::Index k = 0; k < P; ++k) {
        if (!m_.predictors()[static_cast<std::size_t>(k)].transition) continue;
        Eigen::RowVectorXd e = in.eta.row(0);
        e[k] += kStationaryStep;
        const Eigen::VectorXd up = stationary(m_.tpm_of_row(e));
        e[k] -= 2 * kStationaryStep;
        const Eigen::VectorXd dn = stationary(m_.tpm_of_row(e));
        double acc = 0.0;
        for (int j = 0; j < K_; ++j) {
          if (in.delta[j] > 0) acc += out.u(0, j) / in.delta[j] * (up[j] - dn[j]) / (2 * kStationaryStep);
        }
        out.g_eta(0, k) += acc;
      }
      break;
    }
    case InitialMode::fixed: break;
  }
  (void)s;
}

void Engine::accumulate(std::size_t s, const SeriesPass& pass, Eigen::VectorXd* g_alpha, Eigen::VectorXd* g_beta,
                        Eigen::VectorXd* g_delta) const {
  const auto& sv = m_.data().series()[s];
  const auto begin = static_cast<Eigen::Index>(sv.begin);
  const auto T = static_cast<Eigen::Index>(sv.size());
  const auto& preds = m_.predictors();
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& pr = preds[k];
    const auto& d = pr.design;
    const auto gk = pass.g_eta.col(static_cast<Eigen::Index>(k));
    if (g_alpha) {
      if (d.n_fixed() == 1 && d.has_intercept) {
        (*g_alpha)[pr.alpha_begin] += gk.sum();
      } else {
        g_alpha->segment(pr.alpha_begin, d.n_fixed()).noalias() += d.X.middleRows(begin, T).transpose() * gk;
      }
    }
    if (g_beta && d.n_random() > 0) {
      g_beta->segment(pr.beta_begin, d.n_random()).noalias() += d.R.middleRows(begin, T).transpose() * gk;
    }
  }
  if (g_delta) {
    const int grp = m_.delta_group(s);
    if (grp >= 0) g_delta->segment(static_cast<Eigen::Index>(grp) * (K_ - 1), K_ - 1) += pass.g_delta;
  }
}

Evaluation Engine::evaluate(const ParameterSet& p, bool gradient, std::vector<SeriesInputs>* keep) const {
  const std::size_t ns = m_.data().n_series();
  Evaluation ev;
  if (gradient) {
    ev.g_alpha.setZero(m_.n_alpha());
    ev.g_beta.setZero(m_.n_beta());
    ev.g_delta.setZero(m_.n_delta());
  }
  if (keep) keep->resize(ns);

  struct Part {
    double loglik = 0.0;
    Eigen::Index zero_row = -1;
    Eigen::VectorXd ga, gb, gd;
  };
  auto run = [&](std::size_t s, Part& part) {
    SeriesInputs local;
    SeriesInputs& in = keep ? (*keep)[s] : local;
    prepare(s, p, in, gradient);
    if (!in.valid) {
      part.loglik = kNegInf;
      return;
    }
    SeriesPass pass;
    if (gradient) {
      forward_backward(s, in, true, pass);
    } else {
      forward(in, pass);
    }
    part.loglik = pass.loglik;
    if (pass.zero_row >= 0) part.zero_row = in.begin + pass.zero_row;
    if (gradient && std::isfinite(pass.loglik)) {
      part.ga.setZero(m_.n_alpha());
      part.gb.setZero(m_.n_beta());
      part.gd.setZero(m_.n_delta());
      accumulate(s, pass, &part.ga, &part.gb, &part.gd);
    }
  };
  auto reduce = [&](const Part& part) {
    ev.loglik += part.loglik;
    if (ev.zero_row < 0 && part.zero_row >= 0) ev.zero_row = part.zero_row;
    if (gradient && part.ga.size() > 0) {
      ev.g_alpha += part.ga;
      ev.g_beta += part.gb;
      ev.g_delta += part.gd;
    }
  };

  if (threads_ <= 1 || ns <= 1) {
    for (std::size_t s = 0; s < ns; ++s) {
      Part part;
      run(s, part);
      reduce(part);
    }
  } else {
    std::vector<Part> parts(ns);
    parallel_for(ns, threads_, [&](std::size_t s) { run(s, parts[s]); });
    for (const auto& part : parts) reduce(part);
  }
  return ev;
}

Eigen::MatrixXd Engine::beta_hessian(const ParameterSet& p, const std::vector<SeriesInputs>& base, double h) const {
  const Eigen::Index q = m_.n_beta();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(q, q);
  const auto& preds = m_.predictors();
  std::vector<int> owner(static_cast<std::size_t>(q));
  for (std::size_t k = 0; k < preds.size(); ++k) {
    for (Eigen::Index c = 0; c < preds[k].design.n_random(); ++c) {
      owner[static_cast<std::size_t>(preds[k].beta_begin + c)] = static_cast<int>(k);
    }
  }
  const bool stationary_mode = m_.spec().hidden.initial_mode == InitialMode::stationary;

  parallel_for(static_cast<std::size_t>(q), threads_, [&](std::size_t cu) {
    const auto c = static_cast<Eigen::Index>(cu);
    const int k = owner[cu];
    const auto& pr = preds[static_cast<std::size_t>(k)];
    const Eigen::Index local = c - pr.beta_begin;
    Eigen::VectorXd col = Eigen::VectorXd::Zero(q);
    SeriesInputs in;
    SeriesPass pass;
    for (int s : m_.series_of_beta()[cu]) {
      const auto su = static_cast<std::size_t>(s);
      for (int sign : {1, -1}) {
        in = base[su];
        in.eta.col(k) += (sign * h) * pr.design.R.col(local).segment(in.begin, in.T);
        if (pr.transition) {
          compute_tpms(in);
          if (stationary_mode) compute_delta(su, p, in);
        } else {
          compute_emissions(su, in, true);
        }
        if (!in.valid) throw std::domain_error("parameters left their domain while differentiating");
        forward_backward(su, in, true, pass);
        if (!std::isfinite(pass.loglik)) throw std::domain_error("likelihood vanished while differentiating");
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(q);
        accumulate(su, pass, nullptr, &gb, nullptr);
        col += sign * gb;
      }
    }
    H.col(c) = -col / (2 * h);
  });
  return 0.5 * (H + H.transpose());
}

}  // namespace mixhmm
