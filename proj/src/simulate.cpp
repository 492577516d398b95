#include "mixhmm/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>

#include "mixhmm/engine.hpp"

namespace mixhmm {
namespace {

bool is_lag(const std::string& name) { return name.rfind("lag(", 0) == 0 && name.back() == ')'; }

int draw_index(const Eigen::Ref<const Eigen::VectorXd>& prob, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * prob.sum();
  double acc = 0.0;
  int last = 0;
  for (Eigen::Index j = 0; j < prob.size(); ++j) {
    if (prob[j] <= 0) continue;
    acc += prob[j];
    last = static_cast<int>(j);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Dataset simulate(const Model& m, const ParameterSet& p, std::uint64_t seed, int threads) {
  const Dataset& d = m.data();
  const std::size_t n = d.n_rows();
  const std::size_t V = m.n_vars();
  const bool sequential = m.spec().has_lagged_responses();
  const auto& preds = m.predictors();

  std::vector<std::vector<double>> z(V, std::vector<double>(n, kMissing));
  std::vector<int> states(n, 0);
  Eigen::MatrixXd eta_all;
  if (!sequential) eta_all = m.eta_training(p);

  // index of each response variable among the lag targets
  std::map<std::string, std::size_t> var_of;
  for (std::size_t v = 0; v < V; ++v) var_of[m.spec().observations[v].name] = v;

  parallel_for(d.n_series(), threads, [&](std::size_t s) {
    const auto& sv = d.series()[s];
    Rng rng(substream_seed(seed, s));
    Eigen::RowVectorXd eta(static_cast<Eigen::Index>(preds.size()));
    auto eta_at = [&](std::size_t r) {
      if (!sequential) {
        eta = eta_all.row(static_cast<Eigen::Index>(r));
        return;
      }
      auto value_of = [&](const std::string& name) -> double {
        if (is_lag(name) && r > sv.begin) {
          const auto it = var_of.find(name.substr(4, name.size() - 5));
          if (it != var_of.end()) return z[it->second][r - 1];
        }
        return d.covariate(name).values[r];
      };
      for (std::size_t k = 0; k < preds.size(); ++k) {
        const auto& pr = preds[k];
        Eigen::RowVectorXd x(pr.design.n_fixed()), rr(pr.design.n_random());
        design_row(pr.design, value_of, x, rr);
        double e = x.dot(p.alpha.segment(pr.alpha_begin, pr.design.n_fixed()));
        if (pr.design.n_random() > 0) e += rr.dot(p.beta.segment(pr.beta_begin, pr.design.n_random()));
        eta[static_cast<Eigen::Index>(k)] = e;
      }
    };
    int prev = 0;
    for (std::size_t r = sv.begin; r < sv.end; ++r) {
      eta_at(r);
      const Eigen::MatrixXd gamma = m.tpm_of_row(eta);
      int st;
      if (r == sv.begin) {
        st = draw_index(m.initial_distribution(p, s, gamma), rng);
      } else {
        st = draw_index(gamma.row(prev).transpose(), rng);
      }
      states[r] = st + 1;
      for (std::size_t v = 0; v < V; ++v) {
        const Eigen::MatrixXd w = m.obspar_of_row(v, eta);
        const Eigen::VectorXd col = w.col(st);
        z[v][r] = sample(m.family_of(v), std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                         rng);
      }
      prev = st;
    }
  });

  std::vector<Column> responses;
  for (std::size_t v = 0; v < V; ++v) {
    Column c;
    c.name = m.spec().observations[v].name;
    c.values = std::move(z[v]);
    responses.push_back(std::move(c));
  }
  std::vector<Column> covariates;
  for (const auto& c : d.covariates()) {
    if (!is_lag(c.name)) covariates.push_back(c);
  }
  return Dataset::from_columns(d.row_labels(), std::move(responses), std::move(covariates), std::move(states));
}

Dataset simulate(const SimConfig& config) {
  std::vector<std::string> labels;
  std::size_t n = 0;
  if (!config.series_lengths.empty()) {
    for (std::size_t s = 0; s < config.series_lengths.size(); ++s) {
      const std::string label = config.series_lengths.size() == 1 ? "1" : std::to_string(s + 1);
      labels.insert(labels.end(), config.series_lengths[s], label);
    }
    n = labels.size();
  } else if (config.covariates) {
    labels = config.covariates->row_labels();
    n = labels.size();
  } else {
    throw ModelError("simulation needs series lengths or a covariate table");
  }
  std::vector<Column> covariates;
  if (config.covariates) {
    if (config.covariates->n_rows() != n) {
      throw ModelError("covariate table has " + std::to_string(config.covariates->n_rows()) +
                       " rows but the series lengths add up to " + std::to_string(n));
    }
    covariates = config.covariates->covariates();
  }
  for (const auto& name : config.spec.covariate_names()) {
    if (is_lag(name)) continue;
    const bool present = std::any_of(covariates.begin(), covariates.end(), [&](const Column& c) {
      return c.name == name;
    });
    if (!present) throw ModelError("simulation needs covariate '" + name + "'");
  }

  // placeholder responses drawn from the initial values of random states
  Rng rng(substream_seed(config.seed, 0xffffffffu));
  std::uniform_int_distribution<int> pick(0, config.spec.n_states - 1);
  std::vector<Column> responses;
  for (const auto& o : config.spec.observations) {
    const auto& f = family(o.dist);
    Column c;
    c.name = o.name;
    c.values.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      const auto j = static_cast<std::size_t>(pick(rng));
      std::vector<double> w;
      for (const auto& par : o.init) w.push_back(j < par.size() ? par[j] : par.at(0));
      c.values[r] = sample(f, w, rng);
    }
    responses.push_back(std::move(c));
  }
  const Dataset tmpl = Dataset::from_columns(labels, std::move(responses), std::move(covariates));
  const Model m(config.spec, tmpl);
  const ParameterSet p = config.params ? *config.params : m.initial_parameters();
  if (p.alpha.size() != m.n_alpha() || p.beta.size() != m.n_beta() || p.delta0.size() != m.n_delta()) {
    throw ModelError("simulation parameters do not match the model layout");
  }
  Dataset out = simulate(m, p, config.seed, config.threads);
  // keep every supplied covariate, not only the ones the model uses
  if (config.covariates) out = out.with_covariates(config.covariates->covariates());
  return out;
}

std::vector<double> reflected_random_walk(std::size_t n, double step_sd, double lo, double hi, std::uint64_t seed) {
  if (!(lo < hi)) throw std::invalid_argument("reflected random walk needs lo < hi");
  std::vector<double> x(n);
  if (n == 0) return x;
  Rng rng(seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  const double width = hi - lo;
  x[0] = 0.5 * (lo + hi);
  for (std::size_t t = 1; t < n; ++t) {
    double y = x[t - 1] + step_sd * eps(rng) - lo;
    // fold onto [0, width] with period 2 * width
    y = std::fmod(y, 2 * width);
    if (y < 0) y += 2 * width;
    if (y > width) y = 2 * width - y;
    x[t] = lo + y;
  }
  return x;
}

}  // namespace mixhmm
