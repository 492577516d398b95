#ifndef MIXHMM_SIMULATE_HPP
#define MIXHMM_SIMULATE_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "mixhmm/model.hpp"

namespace mixhmm {

struct SimConfig {
  ModelSpec spec;
  /// Parameters in the layout of the model built on the template table;
  /// empty means the spec's initial values.
  std::optional<ParameterSet> params;
  /// Covariates, one row per simulated time step (required when the
  /// model uses covariates). An "ID" labelling is taken from here when
  /// series_lengths is empty.
  std::optional<Dataset> covariates;
  std::vector<std::size_t> series_lengths;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Seed of substream `index` derived from `seed`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

/// Simulates states and responses on the rows (series layout and
/// covariates) of the model's data. The result carries the true states
/// as the known-state column. Lagged responses are fed back sequentially.
Dataset simulate(const Model& m, const ParameterSet& p, std::uint64_t seed, int threads = 1);

/// Builds a template table from the config, compiles the model on it and
/// simulates. Placeholder responses in the template are drawn from the
/// spec's initial values; they only matter for the knots of splines in
/// lagged responses.
Dataset simulate(const SimConfig& config);

/// x_1 = midpoint, x_t = reflect(x_{t-1} + e_t) with e_t ~ N(0, step_sd^2),
/// folding values back into [lo, hi].
std::vector<double> reflected_random_walk(std::size_t n, double step_sd, double lo, double hi, std::uint64_t seed);

}  // namespace mixhmm

#endif  // MIXHMM_SIMULATE_HPP
