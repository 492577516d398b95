#include "mixhmm/dists.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace mixhmm {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogitClamp = 30.0;
constexpr double kRhoClamp = 15.0;

const std::vector<DistFamily>& registry() {
  using enum Link;
  static const std::vector<DistFamily> r = {
      {FamilyId::norm, "norm", {"mean", "sd"}, {identity, log}, Support::real, false, {false, false}},
      {FamilyId::gamma2, "gamma2", {"mean", "sd"}, {log, log}, Support::positive, false, {false, false}},
      {FamilyId::pois, "pois", {"rate"}, {log}, Support::counts, true, {false}},
      {FamilyId::exp, "exp", {"rate"}, {log}, Support::positive, false, {false}},
      {FamilyId::beta, "beta", {"shape1", "shape2"}, {log, log}, Support::unit_interval, false, {false, false}},
      {FamilyId::binom, "binom", {"size", "prob"}, {identity, logit}, Support::counts, true, {true, false}},
      {FamilyId::nbinom, "nbinom", {"size", "prob"}, {log, logit}, Support::counts, true, {false, false}},
      {FamilyId::vm, "vm", {"mu", "kappa"}, {circular, log}, Support::circle, false, {false, false}},
      {FamilyId::wrpcauchy, "wrpcauchy", {"mu", "rho"}, {circular, logit}, Support::circle, false, {false, false}},
      {FamilyId::zipois, "zipois", {"rate", "z"}, {log, logit}, Support::counts, true, {false, false}},
      {FamilyId::zigamma2, "zigamma2", {"mean", "sd", "z"}, {log, log, logit}, Support::positive, false,
       {false, false, false}},
  };
  return r;
}

bool is_count(double z) { return z >= 0 && std::floor(z) == z && std::isfinite(z); }

double log_i0(double kappa) {
  if (kappa < 500.0) return std::log(boost::math::cyl_bessel_i(0, kappa));
  const double k = kappa;
  return k - 0.5 * std::log(2 * kPi * k) + std::log1p(1 / (8 * k) + 9 / (128 * k * k));
}

double gamma2_log_pdf(double z, double mean, double sd) {
  if (!(z > 0) || !std::isfinite(z)) return kNegInf;
  const double shape = mean * mean / (sd * sd);
  const double scale = sd * sd / mean;
  return -std::lgamma(shape) - shape * std::log(scale) + (shape - 1) * std::log(z) - z / scale;
}

double gamma2_cdf(double z, double mean, double sd) {
  if (!(z > 0)) return 0.0;
  if (std::isinf(z)) return 1.0;
  const double shape = mean * mean / (sd * sd);
  const double scale = sd * sd / mean;
  return boost::math::gamma_p(shape, z / scale);
}

double pois_log_pmf(double z, double rate) {
  if (!is_count(z)) return kNegInf;
  return z * std::log(rate) - rate - std::lgamma(z + 1);
}

double pois_cdf(double z, double rate) {
  if (z < 0) return 0.0;
  if (std::isinf(z)) return 1.0;
  return boost::math::gamma_q(std::floor(z) + 1, rate);
}

// Unwrapped antiderivative of the centred wrapped Cauchy density; G(x+2pi) = G(x) + 1.
double wrpcauchy_antiderivative(double x, double rho) {
  const double c = (1 + rho) / (1 - rho);
  const double turns = std::floor((x + kPi) / (2 * kPi));
  const double r = x - 2 * kPi * turns;  // in [-pi, pi)
  return turns + 0.5 + std::atan(c * std::tan(r / 2)) / kPi;
}

double vm_cdf_centred(double x, double kappa) {
  // integral of the centred density from -pi to x, x in [-pi, pi]
  const double norm = 2 * kPi;
  const double li0 = log_i0(kappa);
  auto f = [&](double t) { return std::exp(kappa * std::cos(t) - li0) / norm; };
  if (x <= -kPi) return 0.0;
  if (x >= kPi) return 1.0;
  // integrate the shorter side for accuracy near the tails
  if (x <= 0) return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -kPi, x, 10, 1e-13);
  return 1.0 - boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, x, kPi, 10, 1e-13);
}

double circular_cdf(FamilyId id, double z, double mu, double shape) {
  if (z <= -kPi) return 0.0;
  if (z >= kPi) return 1.0;
  if (id == FamilyId::wrpcauchy) {
    if (shape == 0) return (z + kPi) / (2 * kPi);
    return wrpcauchy_antiderivative(z - mu, shape) - wrpcauchy_antiderivative(-kPi - mu, shape);
  }
  // von Mises: shift the integration window so that the centred cdf applies
  const double a = wrap_angle(-kPi - mu);
  const double b = wrap_angle(z - mu);
  double v = vm_cdf_centred(b, shape) - vm_cdf_centred(a, shape);
  if (v < 0) v += 1.0;
  return std::clamp(v, 0.0, 1.0);
}

double sample_vm(double mu, double kappa, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (kappa < 1e-8) return wrap_angle(-kPi + 2 * kPi * unif(rng));
  const double tau = 1 + std::sqrt(1 + 4 * kappa * kappa);
  const double rho = (tau - std::sqrt(2 * tau)) / (2 * kappa);
  const double r = (1 + rho * rho) / (2 * rho);
  double f = 0;
  for (;;) {
    const double u1 = unif(rng);
    const double u2 = unif(rng);
    const double z = std::cos(kPi * u1);
    f = (1 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2 - c) - u2 > 0 || std::log(c / u2) + 1 - c >= 0) break;
  }
  const double u3 = unif(rng);
  const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::clamp(f, -1.0, 1.0));
  return wrap_angle(mu + theta);
}

double sample_gamma2(double mean, double sd, Rng& rng) {
  std::gamma_distribution<double> g(mean * mean / (sd * sd), sd * sd / mean);
  return g(rng);
}

void require(bool ok, const DistFamily& f, const char* what) {
  if (!ok) throw std::domain_error(f.name + ": parameter " + what + " outside its domain");
}

}  // namespace

std::size_t DistFamily::param_index(std::string_view param) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i] == param) return i;
  }
  throw std::invalid_argument("distribution '" + name + "' has no parameter '" + std::string(param) + "'");
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : registry()) out.push_back(f.name);
    return out;
  }();
  return names;
}

const DistFamily& family(std::string_view name) {
  for (const auto& f : registry()) {
    if (f.name == name) return f;
  }
  std::string valid;
  for (const auto& n : family_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown distribution '" + std::string(name) + "'; valid options: " + valid);
}

const DistFamily& family(FamilyId id) {
  for (const auto& f : registry()) {
    if (f.id == id) return f;
  }
  throw std::logic_error("unregistered family");
}

double wrap_angle(double x) {
  if (x > -kPi && x <= kPi) return x;
  double y = std::fmod(x + kPi, 2 * kPi);
  if (y <= 0) y += 2 * kPi;
  return y - kPi;
}

void check_domain(const DistFamily& f, std::span<const double> w) {
  if (w.size() != f.n_params()) {
    throw std::domain_error(f.name + ": expected " + std::to_string(f.n_params()) + " parameters");
  }
  for (double v : w) require(std::isfinite(v), f, "value");
  auto prob = [](double p) { return p >= 0 && p <= 1; };
  switch (f.id) {
    case FamilyId::norm: require(w[1] > 0, f, "sd"); break;
    case FamilyId::gamma2: require(w[0] > 0 && w[1] > 0, f, "mean/sd"); break;
    case FamilyId::pois:
    case FamilyId::exp: require(w[0] > 0, f, "rate"); break;
    case FamilyId::beta: require(w[0] > 0 && w[1] > 0, f, "shape"); break;
    case FamilyId::binom: require(w[0] >= 0 && prob(w[1]), f, "size/prob"); break;
    case FamilyId::nbinom: require(w[0] > 0 && w[1] > 0 && w[1] <= 1, f, "size/prob"); break;
    case FamilyId::vm: require(w[1] >= 0, f, "kappa"); break;
    case FamilyId::wrpcauchy: require(w[1] >= 0 && w[1] < 1, f, "rho"); break;
    case FamilyId::zipois: require(w[0] > 0 && prob(w[1]), f, "rate/z"); break;
    case FamilyId::zigamma2: require(w[0] > 0 && w[1] > 0 && prob(w[2]), f, "mean/sd/z"); break;
  }
}

double log_pdf(const DistFamily& f, double z, std::span<const double> w) {
  check_domain(f, w);
  if (std::isnan(z)) return kNegInf;
  switch (f.id) {
    case FamilyId::norm: {
      const double r = (z - w[0]) / w[1];
      return -0.5 * r * r - std::log(w[1]) - 0.5 * std::log(2 * kPi);
    }
    case FamilyId::gamma2: return gamma2_log_pdf(z, w[0], w[1]);
    case FamilyId::pois: return pois_log_pmf(z, w[0]);
    case FamilyId::exp: return z >= 0 && std::isfinite(z) ? std::log(w[0]) - w[0] * z : kNegInf;
    case FamilyId::beta: {
      if (!(z > 0 && z < 1)) return kNegInf;
      return (w[0] - 1) * std::log(z) + (w[1] - 1) * std::log1p(-z) -
             (std::lgamma(w[0]) + std::lgamma(w[1]) - std::lgamma(w[0] + w[1]));
    }
    case FamilyId::binom: {
      if (!is_count(z) || z > w[0]) return kNegInf;
      const double p = w[1];
      const double lchoose = std::lgamma(w[0] + 1) - std::lgamma(z + 1) - std::lgamma(w[0] - z + 1);
      const double a = z > 0 ? z * std::log(p) : 0.0;
      const double b = w[0] - z > 0 ? (w[0] - z) * std::log1p(-p) : 0.0;
      return lchoose + a + b;
    }
    case FamilyId::nbinom: {
      if (!is_count(z)) return kNegInf;
      const double b = z > 0 ? z * std::log1p(-w[1]) : 0.0;
      return std::lgamma(z + w[0]) - std::lgamma(w[0]) - std::lgamma(z + 1) + w[0] * std::log(w[1]) + b;
    }
    case FamilyId::vm:
      return w[1] * std::cos(z - w[0]) - std::log(2 * kPi) - log_i0(w[1]);
    case FamilyId::wrpcauchy: {
      const double rho = w[1];
      return std::log1p(-rho * rho) - std::log(2 * kPi) -
             std::log(1 + rho * rho - 2 * rho * std::cos(z - w[0]));
    }
    case FamilyId::zipois: {
      if (!is_count(z)) return kNegInf;
      const double zeta = w[1];
      if (z == 0) return std::log(zeta + (1 - zeta) * std::exp(-w[0]));
      return std::log1p(-zeta) + pois_log_pmf(z, w[0]);
    }
    case FamilyId::zigamma2: {
      const double zeta = w[2];
      if (z == 0) return std::log(zeta);
      return std::log1p(-zeta) + gamma2_log_pdf(z, w[0], w[1]);
    }
  }
  return kNegInf;
}

double cdf(const DistFamily& f, double z, std::span<const double> w) {
  check_domain(f, w);
  switch (f.id) {
    case FamilyId::norm: return 0.5 * std::erfc(-(z - w[0]) / (w[1] * std::numbers::sqrt2));
    case FamilyId::gamma2: return gamma2_cdf(z, w[0], w[1]);
    case FamilyId::pois: return pois_cdf(z, w[0]);
    case FamilyId::exp: return z <= 0 ? 0.0 : -std::expm1(-w[0] * z);
    case FamilyId::beta:
      if (z <= 0) return 0.0;
      if (z >= 1) return 1.0;
      return boost::math::ibeta(w[0], w[1], z);
    case FamilyId::binom: {
      if (z < 0) return 0.0;
      const double k = std::floor(z);
      if (k >= w[0]) return 1.0;
      if (w[1] <= 0) return 1.0;
      if (w[1] >= 1) return 0.0;
      return boost::math::ibetac(k + 1, w[0] - k, w[1]);
    }
    case FamilyId::nbinom: {
      if (z < 0) return 0.0;
      if (w[1] >= 1) return 1.0;
      return boost::math::ibeta(w[0], std::floor(z) + 1, w[1]);
    }
    case FamilyId::vm:
    case FamilyId::wrpcauchy: return circular_cdf(f.id, z, w[0], w[1]);
    case FamilyId::zipois:
      if (z < 0) return 0.0;
      return w[1] + (1 - w[1]) * pois_cdf(z, w[0]);
    case FamilyId::zigamma2:
      if (z < 0) return 0.0;
      return w[2] + (1 - w[2]) * gamma2_cdf(z, w[0], w[1]);
  }
  return 0.0;
}

double cdf_lower(const DistFamily& f, double z, std::span<const double> w) {
  if (f.discrete) {
    if (z <= 0) return 0.0;
    const double k = std::ceil(z) - 1;
    return cdf(f, k, w);
  }
  if (f.id == FamilyId::zigamma2 && z == 0) {
    check_domain(f, w);
    return 0.0;
  }
  return cdf(f, z, w);
}

double sample(const DistFamily& f, std::span<const double> w, Rng& rng) {
  check_domain(f, w);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  switch (f.id) {
    case FamilyId::norm: return std::normal_distribution<double>(w[0], w[1])(rng);
    case FamilyId::gamma2: return sample_gamma2(w[0], w[1], rng);
    case FamilyId::pois: return static_cast<double>(std::poisson_distribution<long long>(w[0])(rng));
    case FamilyId::exp: return std::exponential_distribution<double>(w[0])(rng);
    case FamilyId::beta: {
      const double a = std::gamma_distribution<double>(w[0], 1.0)(rng);
      const double b = std::gamma_distribution<double>(w[1], 1.0)(rng);
      return a / (a + b);
    }
    case FamilyId::binom: {
      if (std::floor(w[0]) != w[0]) throw std::domain_error("binom: sampling needs an integer size");
      return static_cast<double>(std::binomial_distribution<long long>(static_cast<long long>(w[0]), w[1])(rng));
    }
    case FamilyId::nbinom: {
      if (w[1] >= 1) return 0.0;
      const double lambda = std::gamma_distribution<double>(w[0], (1 - w[1]) / w[1])(rng);
      if (lambda <= 0) return 0.0;
      return static_cast<double>(std::poisson_distribution<long long>(lambda)(rng));
    }
    case FamilyId::vm: return sample_vm(w[0], w[1], rng);
    case FamilyId::wrpcauchy: {
      const double u = unif(rng);
      if (w[1] <= 0) return wrap_angle(-kPi + 2 * kPi * u);
      const double scale = -std::log(w[1]);
      return wrap_angle(w[0] + scale * std::tan(kPi * (u - 0.5)));
    }
    case FamilyId::zipois: {
      if (unif(rng) < w[1]) return 0.0;
      return static_cast<double>(std::poisson_distribution<long long>(w[0])(rng));
    }
    case FamilyId::zigamma2: {
      if (unif(rng) < w[2]) return 0.0;
      return sample_gamma2(w[0], w[1], rng);
    }
  }
  return 0.0;
}

double link_apply(Link link, double omega) {
  switch (link) {
    case Link::identity: return omega;
    case Link::log:
      if (!(omega > 0)) throw std::domain_error("log link needs a positive value");
      return std::log(omega);
    case Link::logit:
      if (!(omega > 0 && omega < 1)) throw std::domain_error("logit link needs a value in (0, 1)");
      return std::log(omega / (1 - omega));
    case Link::circular: {
      if (!(omega > -kPi && omega < kPi)) throw std::domain_error("circular link needs a value in (-pi, pi)");
      const double p = (omega + kPi) / (2 * kPi);
      return std::log(p / (1 - p));
    }
  }
  return omega;
}

namespace {

double inv_logit(double eta) {
  eta = std::clamp(eta, -kLogitClamp, kLogitClamp);
  return eta >= 0 ? 1 / (1 + std::exp(-eta)) : std::exp(eta) / (1 + std::exp(eta));
}

}  // namespace

double link_invert(Link link, double eta) {
  switch (link) {
    case Link::identity: return eta;
    case Link::log: return std::exp(std::min(eta, 700.0));
    case Link::logit: return inv_logit(eta);
    case Link::circular: return 2 * kPi * inv_logit(eta) - kPi;
  }
  return eta;
}

double link_invert_deriv(Link link, double eta) {
  switch (link) {
    case Link::identity: return 1.0;
    case Link::log: return std::exp(std::min(eta, 700.0));
    case Link::logit:
    case Link::circular: {
      if (std::abs(eta) > kLogitClamp) return 0.0;
      const double p = inv_logit(eta);
      return (link == Link::circular ? 2 * kPi : 1.0) * p * (1 - p);
    }
  }
  return 1.0;
}

double link_invert(const DistFamily& f, std::size_t param, double eta) {
  if (f.id == FamilyId::wrpcauchy && param == 1) eta = std::clamp(eta, -kRhoClamp, kRhoClamp);
  return link_invert(f.links[param], eta);
}

double link_invert_deriv(const DistFamily& f, std::size_t param, double eta) {
  if (f.id == FamilyId::wrpcauchy && param == 1 && std::abs(eta) > kRhoClamp) return 0.0;
  return link_invert_deriv(f.links[param], eta);
}

void dlogpdf_deta(const DistFamily& f, double z, std::span<const double> w, std::span<double> out) {
  const std::size_t np = f.n_params();
  std::array<double, 4> eta{};
  for (std::size_t l = 0; l < np; ++l) eta[l] = link_apply(f.links[l], w[l]);

  switch (f.id) {
    case FamilyId::norm: {
      const double r = (z - w[0]) / w[1];
      out[0] = r / w[1];
      out[1] = r * r - 1.0;  // d/dlog(sd)
      return;
    }
    case FamilyId::pois: out[0] = z - w[0]; return;
    case FamilyId::exp: out[0] = 1.0 - w[0] * z; return;
    case FamilyId::gamma2: {
      if (!(z > 0)) {
        out[0] = out[1] = 0.0;
        return;
      }
      const double m = w[0], s = w[1];
      const double a = m * m / (s * s), th = s * s / m;
      const double da = -boost::math::digamma(a) - std::log(th) + std::log(z);
      const double dth = -a / th + z / (th * th);
      out[0] = (da * 2 * m / (s * s) + dth * (-s * s / (m * m))) * m;
      out[1] = (da * (-2 * m * m / (s * s * s)) + dth * (2 * s / m)) * s;
      return;
    }
    default: break;
  }

  // Richardson-extrapolated central differences on the link scale.
  std::array<double, 4> nat{};
  auto eval = [&](std::size_t l, double e) {
    for (std::size_t k = 0; k < np; ++k) nat[k] = w[k];
    nat[l] = link_invert(f, l, e);
    return log_pdf(f, z, std::span<const double>(nat.data(), np));
  };
  for (std::size_t l = 0; l < np; ++l) {
    if (f.held_fixed[l]) {
      out[l] = 0.0;
      continue;
    }
    const double h = 1e-3;
    const double d1 = (eval(l, eta[l] + h) - eval(l, eta[l] - h)) / (2 * h);
    const double d2 = (eval(l, eta[l] + h / 2) - eval(l, eta[l] - h / 2)) / h;
    out[l] = (4 * d2 - d1) / 3;
  }
}

}  // namespace mixhmm
