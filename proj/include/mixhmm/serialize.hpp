#ifndef MIXHMM_SERIALIZE_HPP
#define MIXHMM_SERIALIZE_HPP

#include <string>

#include <Eigen/Dense>

#include "mixhmm/likelihood.hpp"
#include "mixhmm/model.hpp"

namespace mixhmm {

/// Model specification from its JSON text. Throws ModelError with the
/// offending key on malformed input.
ModelSpec parse_spec(const std::string& json_text);
ModelSpec load_spec(const std::string& path);
/// Canonical JSON form; parse_spec(spec_to_json(s)) reproduces s.
std::string spec_to_json(const ModelSpec& spec);

/// Table of estimates: block,name,estimate,se. Blocks are coef_fe,
/// coef_re, log_lambda, lambda, sd_re, delta0, tpm, delta and obspar (the
/// last three at the first data row). se is empty without a covariance.
std::string estimates_csv(const Model& m, const FitResult& fit);
/// Reads coef_fe, coef_re, log_lambda and delta0 back into the model's
/// layout; every parameter of the model must be present.
ParameterSet parse_estimates(const Model& m, const std::string& csv_text);

/// Square table with a "name" column followed by one column per joint
/// parameter.
std::string covariance_csv(const Model& m, const Eigen::MatrixXd& cov);
Eigen::MatrixXd parse_covariance(const Model& m, const std::string& csv_text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mixhmm

#endif  // MIXHMM_SERIALIZE_HPP
