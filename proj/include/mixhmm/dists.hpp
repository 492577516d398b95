#ifndef MIXHMM_DISTS_HPP
#define MIXHMM_DISTS_HPP

#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mixhmm {

using Rng = std::mt19937_64;

enum class Link { identity, log, logit, circular };

enum class Support { real, positive, unit_interval, circle, counts };

enum class FamilyId { norm, gamma2, pois, exp, beta, binom, nbinom, vm, wrpcauchy, zipois, zigamma2 };

/// State-dependent observation distribution. Parameter order and links
/// follow the family codes used in model files ("gamma2": mean, sd, ...).
struct DistFamily {
  FamilyId id;
  std::string name;
  std::vector<std::string> params;
  std::vector<Link> links;
  Support support;
  bool discrete;
  /// Parameters held at their initial value during fitting (binomial size).
  std::vector<bool> held_fixed;

  std::size_t n_params() const { return params.size(); }
  /// Index of a parameter by name; throws std::invalid_argument.
  std::size_t param_index(std::string_view param) const;
};

const DistFamily& family(std::string_view name);
const DistFamily& family(FamilyId id);
const std::vector<std::string>& family_names();

/// Log density (log mass for discrete families). Returns -inf outside the
/// support. Throws std::domain_error when omega is outside its domain.
double log_pdf(const DistFamily& f, double z, std::span<const double> omega);

/// P(Z <= z).
double cdf(const DistFamily& f, double z, std::span<const double> omega);
/// P(Z < z): the left limit, which differs from cdf at atoms.
double cdf_lower(const DistFamily& f, double z, std::span<const double> omega);

double sample(const DistFamily& f, std::span<const double> omega, Rng& rng);

/// d log f / d eta for every parameter, where eta is the link-scale value.
void dlogpdf_deta(const DistFamily& f, double z, std::span<const double> omega, std::span<double> out);

/// Throws std::domain_error when omega is not in the natural domain.
void check_domain(const DistFamily& f, std::span<const double> omega);

/// Link h: natural scale -> real line. Boundary values throw.
double link_apply(Link link, double omega);
/// Inverse link h^-1. Logit-type links clamp |eta| to 30 so the result
/// stays strictly inside the domain.
double link_invert(Link link, double eta);
/// d omega / d eta.
double link_invert_deriv(Link link, double eta);

/// Parameter-aware inverse link; wrpcauchy's rho clamps |eta| to 15.
double link_invert(const DistFamily& f, std::size_t param, double eta);
double link_invert_deriv(const DistFamily& f, std::size_t param, double eta);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double x);

}  // namespace mixhmm

#endif  // MIXHMM_DISTS_HPP
