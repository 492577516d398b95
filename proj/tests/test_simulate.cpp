#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "mixhmm/likelihood.hpp"
#include "mixhmm/log.hpp"
#include "mixhmm/serialize.hpp"
#include "mixhmm/simulate.hpp"

using namespace mixhmm;

namespace {

const char* kTwoNormal = R"J({"n_states":2,
  "observation":{"z":{"dist":"norm","init":{"mean":[-5,5],"sd":[1,1]}}},
  "hidden":{"tpm":[[0.9,0.1],[0.1,0.9]],"initial_state":"stationary"}})J";

Dataset simulate_spec(const std::string& json, std::vector<std::size_t> lengths, std::uint64_t seed, int threads = 1) {
  SimConfig cfg;
  cfg.spec = parse_spec(json);
  cfg.series_lengths = std::move(lengths);
  cfg.seed = seed;
  cfg.threads = threads;
  return simulate(cfg);
}

// lengths of maximal runs of each label, in order
std::map<int, std::vector<int>> run_lengths(const std::vector<int>& labels) {
  std::map<int, std::vector<int>> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    // runs cut by the end of the series are censored
    if (j < labels.size() && i > 0) out[labels[i]].push_back(static_cast<int>(j - i));
    i = j;
  }
  return out;
}

}  // namespace

TEST_CASE("identity chain started in state 1 never leaves it") {
  std::vector<std::string> seen;
  const auto previous = set_warning_sink([&](const std::string& w) { seen.push_back(w); });
  const std::string json = R"J({"n_states":2,
    "observation":{"z":{"dist":"norm","init":{"mean":[0,1],"sd":[1,1]}}},
    "hidden":{"zeros":[[1,2],[2,1]],"initial_state":"fixed","fixed_states":[1]}})J";
  const Dataset d = simulate_spec(json, {200, 50}, 3);
  set_warning_sink(previous);
  REQUIRE(d.has_known_state());
  for (int s : d.known_state()) CHECK(s == 1);
}

TEST_CASE("time in state and geometric dwell times") {
  const Dataset d = simulate_spec(kTwoNormal, {100000}, 5);
  const auto& st = d.known_state();
  const double in1 = static_cast<double>(std::count(st.begin(), st.end(), 1)) / static_cast<double>(st.size());
  CHECK(std::abs(in1 - 0.5) < 0.01);
  // both states share the same dwell law, so their runs are pooled
  std::vector<int> runs;
  for (const auto& [state, r] : run_lengths(st)) runs.insert(runs.end(), r.begin(), r.end());
  double mean = 0.0;
  for (int r : runs) mean += r;
  mean /= static_cast<double>(runs.size());
  CHECK(std::abs(mean - 10.0) < 0.3);
  std::map<int, double> freq;
  for (int r : runs) freq[r] += 1.0 / static_cast<double>(runs.size());
  double tv = 0.0;
  for (int r = 1; r <= std::max(freq.rbegin()->first, 300); ++r) {
    tv += std::abs((freq.count(r) ? freq[r] : 0.0) - 0.1 * std::pow(0.9, r - 1));
  }
  CHECK(0.5 * tv < 0.05);
  // responses follow the state-dependent normal
  double sum = 0.0;
  for (std::size_t r = 0; r < st.size(); ++r) sum += d.response("z").values[r] - (st[r] == 1 ? -5.0 : 5.0);
  CHECK(std::abs(sum / static_cast<double>(st.size())) < 0.02);
}

TEST_CASE("simulation is reproducible for a seed and independent of threads") {
  const std::vector<std::size_t> lengths{300, 200, 250};
  const std::string a = to_csv(simulate_spec(kTwoNormal, lengths, 11));
  CHECK(a == to_csv(simulate_spec(kTwoNormal, lengths, 11)));
  CHECK(a == to_csv(simulate_spec(kTwoNormal, lengths, 11, 3)));
  CHECK(a != to_csv(simulate_spec(kTwoNormal, lengths, 12)));
  CHECK(substream_seed(11, 0) != substream_seed(11, 1));
  CHECK(substream_seed(11, 0) != substream_seed(12, 0));
}

TEST_CASE("series layout follows the lengths or the covariate table") {
  const Dataset d = simulate_spec(kTwoNormal, {30, 20}, 1);
  REQUIRE(d.n_series() == 2);
  CHECK(d.series()[0].size() == 30);
  CHECK(d.series()[1].size() == 20);

  const std::string json = R"J({"n_states":2,
    "observation":{"z":{"dist":"norm","formula":{"mean":"intercept + linear(x)"},"init":{"mean":[-5,5],"sd":[1,1]}}}})J";
  SimConfig cfg;
  cfg.spec = parse_spec(json);
  cfg.series_lengths = {10};
  CHECK_THROWS_AS(simulate(cfg), ModelError);
  const std::vector<double> x = reflected_random_walk(40, 0.1, -1, 1, 2);
  std::vector<std::string> ids(40, "a");
  std::fill(ids.begin() + 25, ids.end(), "b");
  cfg.covariates = Dataset::from_columns(ids, {}, {Column{"x", x, false, {}}});
  cfg.series_lengths.clear();
  const Dataset e = simulate(cfg);
  REQUIRE(e.n_series() == 2);
  CHECK(e.series()[0].size() == 25);
  CHECK(e.covariate("x").values == x);
  cfg.series_lengths = {10, 10};
  CHECK_THROWS(simulate(cfg));
}

TEST_CASE("reflected random walk") {
  const auto still = reflected_random_walk(100, 0.0, -1.0, 1.0, 1);
  for (double v : still) CHECK(v == 0.0);
  const auto shifted = reflected_random_walk(5, 0.0, 2.0, 6.0, 1);
  CHECK(shifted.front() == 4.0);

  const auto x = reflected_random_walk(100000, 0.1, -1.0, 1.0, 7);
  CHECK(x.front() == 0.0);
  CHECK(*std::min_element(x.begin(), x.end()) >= -1.0);
  CHECK(*std::max_element(x.begin(), x.end()) <= 1.0);
  // large steps must also fold back inside
  const auto wild = reflected_random_walk(10000, 5.0, -1.0, 1.0, 8);
  CHECK(*std::min_element(wild.begin(), wild.end()) >= -1.0);
  CHECK(*std::max_element(wild.begin(), wild.end()) <= 1.0);

  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  double ks = 0.0;
  const double n = static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double u = (s[i] + 1.0) / 2.0;
    ks = std::max({ks, std::abs(static_cast<double>(i + 1) / n - u), std::abs(static_cast<double>(i) / n - u)});
  }
  CHECK(ks < 0.05);
  CHECK(reflected_random_walk(50, 0.3, -1, 1, 9) == reflected_random_walk(50, 0.3, -1, 1, 9));
}

TEST_CASE("lagged responses are fed back sequentially") {
  // single regime AR(1): z_t = 1 + 0.6 z_{t-1} + e_t
  const std::string json = R"J({"n_states":2,
    "observation":{"z":{"dist":"norm","formula":{"mean":"intercept + linear(lag(z))"},"init":{"mean":[1,1],"sd":[0.5,0.5]}}},
    "init":{"z.mean.state1.lag(z)":0.6,"z.mean.state2.lag(z)":0.6}})J";
  const Dataset d = simulate_spec(json, {20000}, 13);
  const auto& z = d.response("z").values;
  double mx = 0, my = 0;
  const double n = static_cast<double>(z.size() - 1);
  for (std::size_t t = 1; t < z.size(); ++t) mx += z[t - 1], my += z[t];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t t = 1; t < z.size(); ++t) {
    sxy += (z[t - 1] - mx) * (z[t] - my);
    sxx += (z[t - 1] - mx) * (z[t - 1] - mx);
  }
  const double slope = sxy / sxx;
  CHECK(std::abs(slope - 0.6) < 0.02);
  CHECK(std::abs(my - 1.0 / 0.4) < 0.05);
  CHECK_FALSE(d.has_covariate("lag(z)"));
}

TEST_CASE("expanded state space reproduces a negative binomial dwell law") {
  // two aggregate states, each made of three phases that repeat with
  // probability q and advance otherwise; the dwell time in an aggregate
  // is a sum of three geometric(1 - q) variables
  constexpr int m = 3;
  constexpr double q = 0.6;
  const int K = 2 * m;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(K, K);
  std::string zeros;
  for (int i = 0; i < K; ++i) {
    const int next = (i + 1) % K;
    G(i, i) = q;
    G(i, next) = 1 - q;
    for (int j = 0; j < K; ++j) {
      if (j == i || j == next) continue;
      zeros += std::string(zeros.empty() ? "" : ",") + "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
    }
  }
  std::string tpm = "[";
  std::string means = "[", sds = "[";
  for (int i = 0; i < K; ++i) {
    tpm += std::string(i ? "," : "") + "[";
    for (int j = 0; j < K; ++j) tpm += std::string(j ? "," : "") + std::to_string(G(i, j));
    tpm += "]";
    means += std::string(i ? "," : "") + (i < m ? "-3" : "3");
    sds += std::string(i ? "," : "") + "1";
  }
  const std::string json = "{\"n_states\":" + std::to_string(K) +
                           ",\"observation\":{\"z\":{\"dist\":\"norm\",\"init\":{\"mean\":" + means + "],\"sd\":" + sds +
                           "]}}},\"hidden\":{\"tpm\":" + tpm + "],\"zeros\":[" + zeros +
                           "],\"initial_state\":\"fixed\",\"fixed_states\":[1]}}";
  const Dataset d = simulate_spec(json, {100000}, 17);
  std::vector<int> aggregate;
  for (int s : d.known_state()) aggregate.push_back(s <= m ? 1 : 2);

  // target pmf: P(D = r) = C(r-1, m-1) (1-q)^m q^(r-m), r >= m
  auto target = [&](int r) {
    if (r < m) return 0.0;
    const double logc = std::lgamma(r) - std::lgamma(m) - std::lgamma(r - m + 1);
    return std::exp(logc + m * std::log(1 - q) + (r - m) * std::log(q));
  };
  for (const auto& [state, runs] : run_lengths(aggregate)) {
    CAPTURE(state);
    REQUIRE(runs.size() > 1000);
    std::map<int, double> freq;
    for (int r : runs) freq[r] += 1.0 / static_cast<double>(runs.size());
    const int top = std::max(freq.rbegin()->first, 200);
    double tv = 0.0;
    for (int r = 1; r <= top; ++r) tv += std::abs((freq.count(r) ? freq[r] : 0.0) - target(r));
    tv *= 0.5;
    CHECK(tv < 0.05);
  }
}

TEST_CASE("simulate then fit recovers intercept-only parameters") {
  const Dataset d = simulate_spec(kTwoNormal, {5000}, 19).with_known_state({});
  ModelSpec spec = parse_spec(kTwoNormal);
  spec.observations[0].init = {{-3, 3}, {2, 2}};
  const Model m(spec, d);
  FitOptions opt;
  opt.method = OptimMethod::quasi_newton;
  const FitResult r = fit(m, m.initial_parameters(), opt);
  REQUIRE(r.convergence.converged);
  const Model truth_model(parse_spec(kTwoNormal), d);
  const Eigen::VectorXd truth = truth_model.joint_of(truth_model.initial_parameters());
  const Eigen::VectorXd est = m.joint_of(r.estimates);
  REQUIRE(r.covariance.rows() == est.size());
  for (Eigen::Index i = 0; i < est.size(); ++i) {
    CAPTURE(m.joint_names()[static_cast<std::size_t>(i)]);
    const double se = std::sqrt(r.covariance(i, i));
    CHECK(std::abs(est[i] - truth[i]) < 3 * se);
  }
}
