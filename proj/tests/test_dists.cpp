#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "mixhmm/dists.hpp"

using namespace mixhmm;

namespace {

constexpr double kPi = std::numbers::pi;

struct Case {
  const char* name;
  std::vector<double> omega;
};

// one representative parameter vector per family
const std::vector<Case>& cases() {
  static const std::vector<Case> c{
      {"norm", {1.5, 2.0}},       {"gamma2", {3.0, 2.0}},      {"pois", {4.5}},
      {"exp", {0.7}},             {"beta", {2.5, 1.5}},        {"binom", {12, 0.3}},
      {"nbinom", {3.0, 0.4}},     {"vm", {0.5, 2.0}},          {"wrpcauchy", {-1.0, 0.6}},
      {"zipois", {3.0, 0.25}},    {"zigamma2", {2.0, 1.5, 0.2}},
  };
  return c;
}

template <class F>
double integrate(F f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-12);
}

double pdf(const DistFamily& f, double z, const std::vector<double>& w) { return std::exp(log_pdf(f, z, w)); }

// integral of the continuous part of the density over the support
double continuous_mass(const DistFamily& f, const std::vector<double>& w) {
  auto dens = [&](double z) { return pdf(f, z, w); };
  switch (f.support) {
    case Support::real: return integrate(dens, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    case Support::positive: {
      boost::math::quadrature::tanh_sinh<double> ts;
      return ts.integrate(dens, 0.0, std::numeric_limits<double>::infinity());
    }
    case Support::unit_interval: {
      boost::math::quadrature::tanh_sinh<double> ts;
      return ts.integrate(dens, 0.0, 1.0);
    }
    case Support::circle: return integrate(dens, -kPi, kPi);
    case Support::counts: break;
  }
  return 0.0;
}

std::vector<double> draws(const DistFamily& f, const std::vector<double>& w, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = sample(f, w, rng);
  return out;
}

// sup |F_n - F| over both sides of every jump of the empirical cdf
double ks_distance(const DistFamily& f, const std::vector<double>& w, std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  std::size_t i = 0;
  while (i < x.size()) {
    std::size_t j = i;
    while (j < x.size() && x[j] == x[i]) ++j;
    const double below = static_cast<double>(i) / n;
    const double upto = static_cast<double>(j) / n;
    d = std::max(d, std::abs(upto - cdf(f, x[i], w)));
    d = std::max(d, std::abs(below - cdf_lower(f, x[i], w)));
    i = j;
  }
  return d;
}

}  // namespace

TEST_CASE("log_pdf reference values") {
  const std::vector<double> std_normal{0.0, 1.0};
  CHECK(log_pdf(family("norm"), 0.0, std_normal) == doctest::Approx(-0.5 * std::log(2 * kPi)).epsilon(1e-14));
  CHECK(log_pdf(family("norm"), 0.0, std_normal) == doctest::Approx(-0.9189385).epsilon(1e-7));
  const std::vector<double> rate1{1.0};
  CHECK(log_pdf(family("pois"), 0.0, rate1) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("gamma2 mean/sd matches the shape/scale gamma density") {
  for (const auto& [m, s, z] : std::vector<std::tuple<double, double, double>>{{3, 2, 3}, {15, 5, 9}, {0.5, 1.2, 0.1}}) {
    const double shape = m * m / (s * s);
    const double scale = s * s / m;
    const double oracle = (shape - 1) * std::log(z) - z / scale - std::lgamma(shape) - shape * std::log(scale);
    const std::vector<double> w{m, s};
    CHECK(log_pdf(family("gamma2"), z, w) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("log_pdf outside the support is -inf and bad parameters throw") {
  const std::vector<double> g{3.0, 2.0};
  CHECK(log_pdf(family("gamma2"), -1.0, g) == -std::numeric_limits<double>::infinity());
  const std::vector<double> r{2.0};
  CHECK(log_pdf(family("pois"), 1.5, r) == -std::numeric_limits<double>::infinity());
  CHECK(log_pdf(family("pois"), -1.0, r) == -std::numeric_limits<double>::infinity());
  const std::vector<double> bad_sd{0.0, -1.0};
  CHECK_THROWS_AS(log_pdf(family("norm"), 0.0, bad_sd), std::domain_error);
  const std::vector<double> bad_rho{0.0, 1.0};
  CHECK_THROWS_AS(log_pdf(family("wrpcauchy"), 0.0, bad_rho), std::domain_error);
}

TEST_CASE("unknown family names list the valid ones") {
  try {
    (void)family("gaussian");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find("gamma2") != std::string::npos);
    CHECK(msg.find("wrpcauchy") != std::string::npos);
  }
}

TEST_CASE("cdf reference values") {
  const std::vector<double> n{2.0, 3.0};
  CHECK(cdf(family("norm"), 2.0, n) == doctest::Approx(0.5).epsilon(1e-14));
  const std::vector<double> e{1.7};
  CHECK(cdf(family("exp"), 0.0, e) == 0.0);
}

TEST_CASE("wrapped Cauchy cdf agrees with quadrature of its density") {
  const double rho = 0.8;
  // density written out directly, independent of the library
  auto dens = [&](double x) { return (1 - rho * rho) / (2 * kPi * (1 + rho * rho - 2 * rho * std::cos(x))); };
  const std::vector<double> w{0.0, rho};
  for (double z : {0.0, -2.5, -0.3, 1.0, 3.0}) {
    const double oracle = integrate(dens, -kPi, z);
    CHECK(cdf(family("wrpcauchy"), z, w) == doctest::Approx(oracle).epsilon(1e-10));
  }
  CHECK(cdf(family("wrpcauchy"), 0.0, w) == doctest::Approx(0.5).epsilon(1e-12));
  const std::vector<double> shifted{2.0, 0.5};
  auto dens2 = [&](double x) { return (1 - 0.25) / (2 * kPi * (1 + 0.25 - std::cos(x - 2.0))); };
  for (double z : {-3.0, 0.0, 2.5}) {
    CHECK(cdf(family("wrpcauchy"), z, shifted) == doctest::Approx(integrate(dens2, -kPi, z)).epsilon(1e-10));
  }
}

TEST_CASE("densities integrate to one") {
  for (const auto& c : cases()) {
    CAPTURE(c.name);
    const DistFamily& f = family(c.name);
    double total = 0.0;
    if (f.discrete) {
      for (int z = 0; z < 2000; ++z) total += pdf(f, z, c.omega);
    } else {
      total = continuous_mass(f, c.omega);
      if (f.id == FamilyId::zigamma2) total += c.omega[2];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("cdf derivative equals the density") {
  for (const auto& c : cases()) {
    const DistFamily& f = family(c.name);
    if (f.discrete) continue;
    CAPTURE(c.name);
    double lo = -4, hi = 4;
    if (f.support == Support::positive) lo = 0.05, hi = 8;
    if (f.support == Support::unit_interval) lo = 0.02, hi = 0.98;
    if (f.support == Support::circle) lo = -3.0, hi = 3.0;
    for (int i = 0; i < 20; ++i) {
      const double z = lo + (hi - lo) * (i + 0.5) / 20.0;
      const double h = 1e-5 * std::max(1.0, std::abs(z));
      const double fd = (cdf(f, z + h, c.omega) - cdf(f, z - h, c.omega)) / (2 * h);
      CHECK(fd == doctest::Approx(pdf(f, z, c.omega)).epsilon(1e-4));
    }
  }
}

TEST_CASE("cdf is nondecreasing and discrete left limits step at atoms") {
  for (const auto& c : cases()) {
    CAPTURE(c.name);
    const DistFamily& f = family(c.name);
    double prev = 0.0;
    for (int i = 0; i <= 400; ++i) {
      const double z = f.discrete ? i * 0.1 : -3.2 + i * 0.03;
      const double v = cdf(f, z, c.omega);
      CHECK(v >= prev - 1e-15);
      CHECK(v <= 1.0);
      prev = v;
    }
    if (f.discrete) {
      for (int z = 0; z < 10; ++z) {
        CHECK(cdf(f, z, c.omega) - cdf_lower(f, z, c.omega) == doctest::Approx(pdf(f, z, c.omega)).epsilon(1e-10));
        CHECK(cdf_lower(f, z, c.omega) == doctest::Approx(z == 0 ? 0.0 : cdf(f, z - 1, c.omega)).epsilon(1e-12));
      }
    }
  }
  const std::vector<double> zg{2.0, 1.5, 0.2};
  CHECK(cdf_lower(family("zigamma2"), 0.0, zg) == 0.0);
  CHECK(cdf(family("zigamma2"), 0.0, zg) == doctest::Approx(0.2));
}

TEST_CASE("samples follow the cdf") {
  for (const auto& c : cases()) {
    CAPTURE(c.name);
    const DistFamily& f = family(c.name);
    const auto x = draws(f, c.omega, 100000, 2024);
    CHECK(ks_distance(f, c.omega, x) < 0.01);
  }
}

TEST_CASE("gamma2 sample moments") {
  const std::vector<double> w{15.0, 5.0};
  const auto x = draws(family("gamma2"), w, 100000, 5);
  double mean = 0, sq = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(x.size() - 1));
  CHECK(std::abs(mean - 15.0) < 0.1);
  CHECK(std::abs(sd - 5.0) < 0.1);
}

TEST_CASE("full zero inflation only produces zeros") {
  const std::vector<double> w{4.0, 1.0};
  for (double v : draws(family("zipois"), w, 1000, 3)) CHECK(v == 0.0);
}

TEST_CASE("sampling is reproducible for a seed") {
  for (const auto& c : cases()) {
    CAPTURE(c.name);
    const DistFamily& f = family(c.name);
    CHECK(draws(f, c.omega, 200, 77) == draws(f, c.omega, 200, 77));
  }
}

TEST_CASE("links") {
  CHECK(link_apply(Link::log, 1.0) == 0.0);
  CHECK(link_apply(Link::logit, 0.5) == 0.0);
  CHECK(link_apply(Link::circular, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS(link_apply(Link::logit, 0.0));
  CHECK_THROWS(link_apply(Link::logit, 1.0));
  CHECK_THROWS(link_apply(Link::log, 0.0));

  for (double w : {-3.0, 0.0, 1e-3, 2.5, 1e6}) {
    CHECK(link_invert(Link::identity, link_apply(Link::identity, w)) == w);
  }
  for (double w : {1e-8, 0.3, 1.0, 42.0, 1e8}) {
    CHECK(link_invert(Link::log, link_apply(Link::log, w)) == doctest::Approx(w).epsilon(1e-12));
  }
  for (double w : {1e-6, 0.1, 0.5, 0.9, 1 - 1e-6}) {
    CHECK(link_invert(Link::logit, link_apply(Link::logit, w)) == doctest::Approx(w).epsilon(1e-12));
  }
  for (double w : {-3.1, -1.0, 0.25, 3.1}) {
    CHECK(link_invert(Link::circular, link_apply(Link::circular, w)) == doctest::Approx(w).epsilon(1e-12));
  }
}

TEST_CASE("link derivatives match finite differences") {
  for (Link l : {Link::identity, Link::log, Link::logit, Link::circular}) {
    for (double eta : {-2.0, -0.1, 0.0, 0.7, 3.0}) {
      const double h = 1e-6;
      const double fd = (link_invert(l, eta + h) - link_invert(l, eta - h)) / (2 * h);
      CHECK(link_invert_deriv(l, eta) == doctest::Approx(fd).epsilon(1e-7));
    }
  }
}

TEST_CASE("log-density gradient on the link scale matches finite differences") {
  for (const auto& c : cases()) {
    CAPTURE(c.name);
    const DistFamily& f = family(c.name);
    std::vector<double> eta(f.n_params());
    for (std::size_t k = 0; k < f.n_params(); ++k) eta[k] = link_apply(f.links[k], c.omega[k]);
    auto value = [&](const std::vector<double>& e, double z) {
      std::vector<double> w(e.size());
      for (std::size_t k = 0; k < e.size(); ++k) w[k] = link_invert(f, k, e[k]);
      return log_pdf(f, z, w);
    };
    const std::vector<double> zs = f.discrete ? std::vector<double>{0, 1, 3, 7}
                                   : f.support == Support::unit_interval ? std::vector<double>{0.1, 0.5, 0.8}
                                   : f.support == Support::circle ? std::vector<double>{-2.0, 0.3, 2.9}
                                                                  : std::vector<double>{0.0, 0.4, 1.7, 5.0};
    for (double z : zs) {
      if (f.support == Support::positive && z == 0.0 && f.id != FamilyId::zigamma2) continue;
      std::vector<double> g(f.n_params());
      dlogpdf_deta(f, z, c.omega, g);
      for (std::size_t k = 0; k < f.n_params(); ++k) {
        if (f.held_fixed[k]) continue;
        const double h = 1e-6;
        auto up = eta, dn = eta;
        up[k] += h;
        dn[k] -= h;
        const double fd = (value(up, z) - value(dn, z)) / (2 * h);
        CAPTURE(k);
        CAPTURE(z);
        CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(kPi) == kPi);
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  CHECK(wrap_angle(0.3 + 8 * kPi) == doctest::Approx(0.3));
}
