#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mixhmm/data.hpp"
#include "mixhmm/log.hpp"

using namespace mixhmm;

namespace {

Column numeric(std::string name, std::vector<double> v) {
  Column c;
  c.name = std::move(name);
  c.values = std::move(v);
  return c;
}

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / ("mixhmm_test_" + stem + ".csv")).string();
}

bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

TEST_CASE("csv without ID column is one series") {
  std::string text = "z,x\n";
  for (int i = 0; i < 100; ++i) text += std::to_string(i * 0.5) + "," + std::to_string(i) + "\n";
  CsvOptions opt;
  opt.responses = {"z"};
  opt.covariates = {"x"};
  const Dataset d = parse_csv(text, opt);
  CHECK(d.n_rows() == 100);
  REQUIRE(d.n_series() == 1);
  CHECK(d.series()[0].size() == 100);
  CHECK(d.time_index()[99] == 99);
  CHECK(d.response("z").values[3] == doctest::Approx(1.5));
}

TEST_CASE("empty input is a load error") {
  CsvOptions opt;
  opt.responses = {"z"};
  CHECK_THROWS_AS(parse_csv("", opt), LoadError);
  const std::string path = temp_path("empty");
  { std::ofstream f(path); }
  CHECK_THROWS_AS(load_csv(path, opt), LoadError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv(temp_path("does_not_exist"), opt), LoadError);
}

TEST_CASE("ID values group into series") {
  CsvOptions opt;
  opt.responses = {"z"};
  const Dataset d = parse_csv("ID,z\nA,1\nA,2\nB,3\nB,4\nB,5\n", opt);
  REQUIRE(d.n_series() == 2);
  CHECK(d.series()[0].label == "A");
  CHECK(d.series()[0].size() == 2);
  CHECK(d.series()[1].size() == 3);
  CHECK(d.time_index()[2] == 0);
  CHECK(d.series_of_row()[4] == 1);
}

TEST_CASE("load errors name the problem") {
  CsvOptions opt;
  opt.responses = {"z"};
  opt.covariates = {"x"};
  try {
    (void)parse_csv("z\n1\n", opt);
    FAIL("expected an error");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
  }
  try {
    (void)parse_csv("z,x\n1,2\n1,abc\n", opt);
    FAIL("expected an error");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  // undeclared strings in a numeric covariate are rejected rather than treated as levels
  CHECK_THROWS_AS(parse_csv("z,x\n1,a\n", opt), LoadError);
}

TEST_CASE("missing responses are preserved and known states checked") {
  CsvOptions opt;
  opt.responses = {"z"};
  const Dataset d = parse_csv("z,state\n1,1\nNA,\n,2\n4,NA\n", opt);
  CHECK(is_missing(d.response("z").values[1]));
  CHECK(is_missing(d.response("z").values[2]));
  REQUIRE(d.has_known_state());
  CHECK(d.known_state() == std::vector<int>{1, 0, 2, 0});
  CHECK_THROWS(parse_csv("z,state\n1,0\n", opt));
  CHECK_THROWS(parse_csv("z,state\n1,1.5\n", opt));
}

TEST_CASE("irregular time column warns and is ignored") {
  std::vector<std::string> warnings;
  auto previous = set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  CsvOptions opt;
  opt.responses = {"z"};
  const Dataset regular = parse_csv("time,z\n1,0\n2,0\n3,0\n", opt);
  CHECK(warnings.empty());
  const Dataset irregular = parse_csv("time,z\n1,0\n2,0\n5,0\n", opt);
  CHECK(warnings.size() == 1);
  CHECK(irregular.n_rows() == 3);
  CHECK_FALSE(irregular.has_covariate("time"));
  set_warning_sink(previous);
}

TEST_CASE("factor covariates keep their levels") {
  CsvOptions opt;
  opt.responses = {"z"};
  opt.covariates = {"g"};
  opt.factors = {"g"};
  const Dataset d = parse_csv("z,g\n1,b\n2,a\n3,b\n", opt);
  const Column& g = d.covariate("g");
  CHECK(g.categorical);
  REQUIRE(g.n_levels() == 2);
  CHECK(g.levels[static_cast<std::size_t>(g.values[0])] == "b");
  CHECK(g.levels[static_cast<std::size_t>(g.values[1])] == "a");
  CHECK(g.values[0] == g.values[2]);
}

TEST_CASE("fill_covariate_gaps carries values forward then backward") {
  const auto fill = [](std::vector<double> v) {
    const Dataset d = Dataset::from_columns({}, {}, {numeric("x", std::move(v))});
    return fill_covariate_gaps(d).covariate("x").values;
  };
  CHECK(fill({1, kMissing, kMissing, 4}) == std::vector<double>{1, 1, 1, 4});
  CHECK(fill({kMissing, kMissing, 7}) == std::vector<double>{7, 7, 7});
  CHECK(fill({3, 2, 1}) == std::vector<double>{3, 2, 1});
}

TEST_CASE("fill_covariate_gaps works per series and leaves responses alone") {
  const Dataset d = Dataset::from_columns({"A", "A", "B", "B"}, {numeric("z", {kMissing, 1, 2, kMissing})},
                                          {numeric("x", {5, kMissing, kMissing, 9})});
  const Dataset f = fill_covariate_gaps(d);
  CHECK(f.covariate("x").values == std::vector<double>{5, 5, 9, 9});
  CHECK(is_missing(f.response("z").values[0]));
  CHECK(is_missing(f.response("z").values[3]));
}

TEST_CASE("covariate missing for a whole series is an error naming it") {
  const Dataset d =
      Dataset::from_columns({"A", "A", "B", "B"}, {}, {numeric("speed", {1, 2, kMissing, kMissing})});
  try {
    (void)fill_covariate_gaps(d);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find("speed") != std::string::npos);
    CHECK(msg.find("B") != std::string::npos);
  }
}

TEST_CASE("fill_covariate_gaps is idempotent") {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution gap(0.3);
  std::normal_distribution<double> value;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::string> labels;
    std::vector<double> x;
    for (int s = 0; s < 3; ++s) {
      for (int t = 0; t < 15; ++t) {
        labels.push_back(std::to_string(s));
        x.push_back(t == 7 || !gap(rng) ? value(rng) : kMissing);
      }
    }
    const Dataset once = fill_covariate_gaps(Dataset::from_columns(labels, {}, {numeric("x", x)}));
    const Dataset twice = fill_covariate_gaps(once);
    CHECK(once.covariate("x").values == twice.covariate("x").values);
  }
}

TEST_CASE("split_series partitions rows") {
  const Dataset one = Dataset::from_columns({}, {numeric("z", {1, 2, 3})}, {});
  CHECK(split_series(one).size() == 1);

  const Dataset two = Dataset::from_columns({"A", "A", "B"}, {numeric("z", {1, 2, 3})}, {});
  const auto views = split_series(two);
  REQUIRE(views.size() == 2);
  CHECK(views[0].size() == 2);
  CHECK(views[1].size() == 1);
  std::size_t total = 0;
  std::size_t next = 0;
  for (const auto& v : views) {
    CHECK(v.begin == next);
    next = v.end;
    total += v.size();
  }
  CHECK(total == two.n_rows());

  CHECK_THROWS(Dataset::from_columns({"A", "B", "A"}, {numeric("z", {1, 2, 3})}, {}));
  const std::vector<std::string> bad{"A", "B", "A"};
  CHECK_THROWS(group_contiguous(bad));
}

TEST_CASE("csv write then load reproduces values") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> value(0.0, 1e3);
  std::vector<std::string> labels;
  std::vector<double> z, x;
  std::vector<int> states;
  for (int i = 0; i < 40; ++i) {
    labels.push_back(i < 25 ? "first" : "second");
    z.push_back(i % 7 == 3 ? kMissing : value(rng) / 3.0);
    x.push_back(value(rng) * 1e-5);
    states.push_back(i % 5 == 0 ? 0 : 1 + i % 3);
  }
  Column g;
  g.name = "g";
  g.categorical = true;
  g.levels = {"lo", "hi"};
  for (int i = 0; i < 40; ++i) g.values.push_back(i % 2);
  const Dataset d = Dataset::from_columns(labels, {numeric("z", z)}, {numeric("x", x), g}, states);

  const std::string path = temp_path("roundtrip");
  write_csv(d, path);
  CsvOptions opt;
  opt.responses = {"z"};
  opt.covariates = {"x", "g"};
  opt.factors = {"g"};
  const Dataset back = load_csv(path, opt);
  std::filesystem::remove(path);

  REQUIRE(back.n_rows() == d.n_rows());
  CHECK(back.row_labels() == d.row_labels());
  CHECK(back.known_state() == d.known_state());
  for (std::size_t i = 0; i < d.n_rows(); ++i) {
    CHECK(same_value(back.response("z").values[i], z[i]));
    CHECK(back.covariate("x").values[i] == x[i]);
    const Column& bg = back.covariate("g");
    CHECK(bg.levels[static_cast<std::size_t>(bg.values[i])] == g.levels[static_cast<std::size_t>(g.values[i])]);
  }
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 123456789.123456789}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}
