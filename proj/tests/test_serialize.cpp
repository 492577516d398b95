#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mixhmm/likelihood.hpp"
#include "mixhmm/serialize.hpp"
#include "mixhmm/simulate.hpp"

using namespace mixhmm;

namespace {

const char* kPetrelStyle = R"J({"n_states":3,
  "observation":{"step":{"dist":"gamma2","init":{"mean":[1,5,10],"sd":[1,3,5]}},
                 "angle":{"dist":"wrpcauchy","init":{"mu":[0,0,0],"rho":[0.1,0.5,0.9]}}},
  "hidden":{"formula":[[".","intercept + re(ID) + spline(d2c, k=10)","."],
                       ["intercept + re(ID) + spline(d2c, k=10)",".","intercept + re(ID) + spline(d2c, k=10)"],
                       [".","intercept + re(ID) + spline(d2c, k=10)","."]],
            "zeros":[[1,3],[3,1]]},
  "factors":["ID"],
  "constraints":{"fixed":["angle.mu.state1.(Intercept)","angle.mu.state2.(Intercept)","angle.mu.state3.(Intercept)"]}})J";

const char* kTwoNormal = R"J({"n_states":2,
  "observation":{"z":{"dist":"norm","init":{"mean":[-5,5],"sd":[1,1]}}},
  "hidden":{"tpm":[[0.9,0.1],[0.1,0.9]]}})J";

std::string error_of(const std::string& json) {
  try {
    (void)parse_spec(json);
  } catch (const ModelError& e) {
    return e.what();
  }
  return {};
}

// three birds of 100 steps each, d2c increasing along the track
Dataset petrel_like_data() {
  std::vector<double> d2c;
  std::vector<std::string> ids;
  Column f{"ID", {}, true, {"b0", "b1", "b2"}};
  for (int i = 0; i < 300; ++i) {
    d2c.push_back((i % 100) * 2.1);
    ids.push_back("b" + std::to_string(i / 100));
    f.values.push_back(i / 100);
  }
  SimConfig cfg;
  cfg.spec = parse_spec(kPetrelStyle);
  cfg.covariates = Dataset::from_columns(ids, {}, {Column{"d2c", d2c, false, {}}, f});
  cfg.seed = 3;
  return simulate(cfg).with_known_state({});
}

}  // namespace

TEST_CASE("petrel-style spec parses and round-trips") {
  const ModelSpec spec = parse_spec(kPetrelStyle);
  CHECK(spec.n_states == 3);
  REQUIRE(spec.observations.size() == 2);
  CHECK(spec.observations[0].name == "step");
  CHECK(spec.observations[1].dist == "wrpcauchy");
  CHECK(spec.hidden.structural_zeros == std::vector<std::pair<int, int>>{{1, 3}, {3, 1}});
  CHECK(format_formula(spec.hidden.formulas[0][1]) == "intercept + re(ID) + spline(d2c, k=10)");
  CHECK(spec.hidden.formulas[0][2].empty());
  CHECK(spec.constraints.fixed.size() == 3);

  const std::string once = spec_to_json(spec);
  const ModelSpec again = parse_spec(once);
  CHECK(spec_to_json(again) == once);
  CHECK(again.factors == spec.factors);
  CHECK(again.constraints.fixed == spec.constraints.fixed);
  CHECK(again.observations[0].init == spec.observations[0].init);

  // the spec compiles on data with the named covariates
  const Model m(spec, petrel_like_data());
  CHECK(m.n_lambda() == 8);
  CHECK(m.n_free() == m.n_theta() - 3);
}

TEST_CASE("round trip keeps every section") {
  const std::string json = R"J({"n_states":2,
    "observation":{"c":{"dist":"pois","formula":{"rate":"intercept + cyclic(hour, k=6, period=24)"},"init":{"rate":[1,8]}}},
    "hidden":{"formula":"intercept + poly(x, 2)","tpm":[[0.8,0.2],[0.3,0.7]],"initial_state":"fixed","fixed_states":[2,1],
              "delta0_per_series":true},
    "constraints":{"shared":{"g":["S1>S2.(Intercept)","S2>S1.(Intercept)"]}},
    "init":{"S1>S2.x":0.25},
    "options":{"method":"quasi-newton","max_iter":50,"tol":1e-6,"seed":9,"n_post":10,"level":0.9,"threads":2}})J";
  const ModelSpec s = parse_spec(json);
  CHECK(s.hidden.initial_mode == InitialMode::fixed);
  CHECK(s.hidden.fixed_states == std::vector<int>{2, 1});
  CHECK(s.hidden.delta0_per_series);
  CHECK(s.hidden.tpm0(1, 0) == 0.3);
  CHECK(s.options.method == OptimMethod::quasi_newton);
  CHECK(s.options.max_iter == 50);
  CHECK(s.options.level == 0.9);
  CHECK(s.init.at("S1>S2.x") == 0.25);
  const std::string once = spec_to_json(s);
  const ModelSpec t = parse_spec(once);
  CHECK(spec_to_json(t) == once);
  CHECK(t.options.seed == 9);
  CHECK(t.options.threads == 2);
  CHECK(t.constraints.shared == s.constraints.shared);
  CHECK(format_formula(t.observations[0].formulas[0]) == format_formula(s.observations[0].formulas[0]));
}

TEST_CASE("spec errors name the offending key") {
  const std::string bad_dist = error_of(R"J({"n_states":2,"observation":{"z":{"dist":"gauss","init":{"mean":[0,1],"sd":[1,1]}}}})J");
  CHECK(bad_dist.find("norm") != std::string::npos);
  CHECK(bad_dist.find("wrpcauchy") != std::string::npos);

  const std::string unknown = error_of(R"J({"n_states":2,"observations":{}})J");
  CHECK(unknown.find("observations") != std::string::npos);

  const std::string wrong_length = error_of(R"J({"n_states":2,"observation":{"z":{"dist":"norm","init":{"mean":[0],"sd":[1,1]}}}})J");
  CHECK(wrong_length.find("mean") != std::string::npos);

  const std::string bad_param = error_of(R"J({"n_states":2,"observation":{"z":{"dist":"norm","init":{"mu":[0,1],"sd":[1,1]}}}})J");
  CHECK(bad_param.find("mean") != std::string::npos);

  const std::string bad_zero = error_of(R"J({"n_states":2,"observation":{"z":{"dist":"norm","init":{"mean":[0,1],"sd":[1,1]}}},
    "hidden":{"zeros":[[1,1]]}})J");
  CHECK(bad_zero.find("zeros") != std::string::npos);

  const std::string bad_mode = error_of(R"J({"n_states":2,"observation":{"z":{"dist":"norm","init":{"mean":[0,1],"sd":[1,1]}}},
    "hidden":{"initial_state":"random"}})J");
  CHECK(bad_mode.find("stationary") != std::string::npos);

  CHECK_FALSE(error_of("{not json").empty());
  CHECK_FALSE(error_of(R"J({"n_states":2,"observation":{"z":{"dist":"norm","formula":{"mean":"spline(x, k=2)"},
    "init":{"mean":[0,1],"sd":[1,1]}}}})J").empty());
}

TEST_CASE("estimates table round-trips") {
  const Dataset d = petrel_like_data();
  const Model m(parse_spec(kPetrelStyle), d);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  FitResult fit;
  fit.estimates = m.initial_parameters();
  for (auto& v : fit.estimates.beta) v = 0.3 * g(rng);
  for (auto& v : fit.estimates.log_lambda) v = g(rng);
  const std::string csv = estimates_csv(m, fit);
  const ParameterSet back = parse_estimates(m, csv);
  CHECK(back.alpha == fit.estimates.alpha);
  CHECK(back.beta == fit.estimates.beta);
  CHECK(back.log_lambda == fit.estimates.log_lambda);
  CHECK(back.delta0 == fit.estimates.delta0);

  // sd_re and lambda rows are derived from log lambda
  const std::string first = m.lambda_names()[0];
  const double ll = fit.estimates.log_lambda[0];
  const auto sd_at = csv.find("sd_re," + first + ",");
  REQUIRE(sd_at != std::string::npos);
  const auto start = sd_at + std::string("sd_re," + first + ",").size();
  const double sd = std::stod(csv.substr(start, csv.find(',', start) - start));
  CHECK(sd == doctest::Approx(1.0 / std::sqrt(std::exp(ll))).epsilon(1e-14));
  CHECK(csv.find("tpm,S1>S3,0,") != std::string::npos);

  // a missing parameter is an error
  const std::string first_fe = "coef_fe," + m.alpha_names()[0] + ",";
  std::string cut = csv;
  const auto at = cut.find(first_fe);
  cut.erase(at, cut.find('\n', at) - at + 1);
  CHECK_THROWS_AS(parse_estimates(m, cut), ModelError);
}

TEST_CASE("covariance table round-trips") {
  const Dataset d = simulate(SimConfig{parse_spec(kTwoNormal), {}, {}, {200}, 7, 1}).with_known_state({});
  const Model m(parse_spec(kTwoNormal), d);
  const Eigen::Index n = m.n_joint();
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(n, n);
  const Eigen::MatrixXd cov = A * A.transpose() / 3.0;
  const Eigen::MatrixXd back = parse_covariance(m, covariance_csv(m, cov));
  CHECK(back == cov);
  FitResult fit;
  fit.estimates = m.initial_parameters();
  fit.covariance = cov;
  const std::string csv = estimates_csv(m, fit);
  CHECK(csv.find(",,") == std::string::npos);
}

TEST_CASE("text files") {
  const auto dir = std::filesystem::temp_directory_path() / "mixhmm_serialize_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "spec.json").string();
  write_text_file(path, kTwoNormal);
  CHECK(read_text_file(path) == kTwoNormal);
  CHECK(load_spec(path).observations[0].name == "z");
  CHECK_THROWS(read_text_file((dir / "absent.json").string()));
  std::filesystem::remove_all(dir);
}
