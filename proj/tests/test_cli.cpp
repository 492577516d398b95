#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "mixhmm/data.hpp"
#include "mixhmm/serialize.hpp"

#ifndef MIXHMM_CLI_PATH
#error "MIXHMM_CLI_PATH must name the mixhmm executable"
#endif

namespace fs = std::filesystem;
using namespace mixhmm;

namespace {

const char* kSpec = R"J({"n_states":2,
  "observation":{"z":{"dist":"norm","init":{"mean":[-3,3],"sd":[1,1]}}},
  "hidden":{"tpm":[[0.9,0.1],[0.1,0.9]],"initial_state":"stationary"},
  "options":{"method":"quasi-newton","n_post":200}})J";

class Workdir {
 public:
  Workdir() : path_(fs::temp_directory_path() / ("mixhmm_cli_test_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workdir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int run(const std::string& args, const Workdir& w) {
  const std::string cmd = std::string(MIXHMM_CLI_PATH) + " " + args + " > " + (w / "stdout.txt") + " 2> " + (w / "stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) { return read_text_file(path); }

std::vector<std::vector<std::string>> rows_of(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    out.push_back(cells);
  }
  return out;
}

}  // namespace

TEST_CASE("simulate, fit, decode, predict, residuals, check and suggest-init") {
  Workdir w;
  write_text_file(w / "spec.json", kSpec);
  REQUIRE(run("simulate --spec " + (w / "spec.json") + " --n 1500 --seed 4 --out " + (w / "sim"), w) == 0);
  const std::string simulated = w / "sim/simulated.csv";
  REQUIRE(fs::exists(simulated));

  // the state column makes a fit supervised; drop it and blank a few responses
  CsvOptions opt;
  opt.responses = {"z"};
  const Dataset full = load_csv(simulated, opt);
  REQUIRE(full.has_known_state());
  Column z = full.response("z");
  z.values[10] = kMissing;
  z.values[11] = kMissing;
  write_csv(full.with_known_state({}).with_responses({z}), w / "data.csv");
  const std::string common = " --spec " + (w / "spec.json") + " --data " + (w / "data.csv");

  REQUIRE(run("fit" + common + " --out " + (w / "fit"), w) == 0);
  const auto conv = nlohmann::json::parse(slurp(w / "fit/convergence.json"));
  CHECK(conv["converged"].get<bool>());
  CHECK(conv["method"].get<std::string>() == "quasi-newton");
  CHECK(fs::exists(w / "fit/covariance.csv"));
  const std::string estimates = slurp(w / "fit/estimates.csv");
  CHECK(estimates.rfind("block,name,estimate,se\n", 0) == 0);
  CHECK(estimates.find("obspar,z.mean.state1,-3") != std::string::npos);

  REQUIRE(run("decode" + common + " --fit " + (w / "fit") + " --out " + (w / "dec"), w) == 0);
  const auto states = rows_of(w / "dec/states.csv");
  REQUIRE(states.size() == 1501);
  CHECK(states[0] == std::vector<std::string>{"ID", "row", "state"});
  int agree = 0;
  for (std::size_t r = 0; r < 1500; ++r) agree += std::stoi(states[r + 1][2]) == full.known_state()[r];
  CHECK(agree >= 1450);
  CHECK(rows_of(w / "dec/stateprobs.csv")[0].size() == 4);

  REQUIRE(run("predict" + common + " --fit " + (w / "fit") + " --what tpm --rows 1,2 --out " + (w / "pred"), w) == 0);
  const auto pred = rows_of(w / "pred/predictions.csv");
  REQUIRE(pred.size() == 9);
  CHECK(pred[0] == std::vector<std::string>{"row", "name", "mean", "lcl", "ucl"});
  for (std::size_t i = 1; i < pred.size(); ++i) {
    const double mean = std::stod(pred[i][2]), lcl = std::stod(pred[i][3]), ucl = std::stod(pred[i][4]);
    CHECK(lcl <= mean);
    CHECK(mean <= ucl);
  }

  REQUIRE(run("residuals" + common + " --fit " + (w / "fit") + " --out " + (w / "res"), w) == 0);
  const auto res = rows_of(w / "res/residuals.csv");
  CHECK(res[0] == std::vector<std::string>{"ID", "row", "z"});
  CHECK(res[11][2] == "NA");
  CHECK(res[12][2] == "NA");
  CHECK(res[13][2] != "NA");

  REQUIRE(run("check" + common + " --fit " + (w / "fit") + " --stat 'mean(z)' --stat 'acf1(z)' --n-sims 100 --out " +
                  (w / "chk"),
              w) == 0);
  const auto chk = rows_of(w / "chk/check.csv");
  REQUIRE(chk.size() == 3);
  for (std::size_t i = 1; i < 3; ++i) {
    const double tail = std::stod(chk[i][2]);
    CHECK(tail > 0.005);
    CHECK(tail < 0.995);
  }

  REQUIRE(run("suggest-init" + common + " --out " + (w / "sug"), w) == 0);
  const ModelSpec suggested = load_spec(w / "sug/suggested_spec.json");
  CHECK(suggested.observations[0].init[0][0] < 0);
  CHECK(suggested.observations[0].init[0][1] > 0);

  // simulate from the fitted parameters
  REQUIRE(run("simulate --spec " + (w / "spec.json") + " --n 100 --fit " + (w / "fit") + " --out " + (w / "sim2"), w) == 0);
  CHECK(fs::exists(w / "sim2/simulated.csv"));
}

TEST_CASE("symmetric chain predicts a uniform stationary distribution") {
  Workdir w;
  write_text_file(w / "spec.json", kSpec);
  REQUIRE(run("simulate --spec " + (w / "spec.json") + " --n 50 --out " + (w / "sim"), w) == 0);
  // estimates taken straight from the spec's initial values
  const std::string common = " --spec " + (w / "spec.json") + " --data " + (w / "sim/simulated.csv");
  REQUIRE(run("fit" + common + " --max-iter 0 --out " + (w / "fit"), w) == 2);
  REQUIRE(run("predict" + common + " --fit " + (w / "fit") + " --what delta --n-post 0 --out " + (w / "pred"), w) == 0);
  const auto pred = rows_of(w / "pred/predictions.csv");
  REQUIRE(pred.size() == 3);
  CHECK(std::stod(pred[1][2]) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pred[1][3].empty());
}

TEST_CASE("exit codes") {
  Workdir w;
  write_text_file(w / "spec.json", kSpec);
  CHECK(run("", w) == 1);
  CHECK(run("fit --bogus", w) == 1);
  CHECK(run("fit --data nowhere.csv", w) == 1);
  CHECK(run("fit --spec " + (w / "spec.json") + " --data " + (w / "missing.csv"), w) == 1);
  CHECK(slurp(w / "stderr.txt").find("missing.csv") != std::string::npos);
  write_text_file(w / "bad.json", R"({"n_states":2,"observation":{"z":{"dist":"gauss"}}})");
  CHECK(run("simulate --spec " + (w / "bad.json") + " --n 10", w) == 1);
  CHECK(slurp(w / "stderr.txt").find("gamma2") != std::string::npos);

  REQUIRE(run("simulate --spec " + (w / "spec.json") + " --n 300 --out " + (w / "sim"), w) == 0);
  const std::string common = " --spec " + (w / "spec.json") + " --data " + (w / "sim/simulated.csv");
  CHECK(run("decode" + common, w) == 1);
  CHECK(slurp(w / "stderr.txt").find("mixhmm fit") != std::string::npos);
  CHECK(run("fit" + common + " --method simplex", w) == 1);
  // an iteration limit reached is not converged but still writes results
  CHECK(run("fit" + common + " --max-iter 1 --method nelder-mead --out " + (w / "fit"), w) == 2);
  CHECK(fs::exists(w / "fit/estimates.csv"));
  CHECK_FALSE(nlohmann::json::parse(slurp(w / "fit/convergence.json"))["converged"].get<bool>());
}

TEST_CASE("seeded runs are reproducible") {
  Workdir w;
  write_text_file(w / "spec.json", kSpec);
  const std::string sim = "simulate --spec " + (w / "spec.json") + " --lengths 100,80 --seed 21 --out ";
  REQUIRE(run(sim + (w / "a"), w) == 0);
  REQUIRE(run(sim + (w / "b"), w) == 0);
  CHECK(slurp(w / "a/simulated.csv") == slurp(w / "b/simulated.csv"));
  REQUIRE(run("simulate --spec " + (w / "spec.json") + " --lengths 100,80 --seed 22 --out " + (w / "c"), w) == 0);
  CHECK(slurp(w / "a/simulated.csv") != slurp(w / "c/simulated.csv"));
  CHECK(rows_of(w / "a/simulated.csv")[0] == std::vector<std::string>{"ID", "z", "state"});

  const std::string common = " --spec " + (w / "spec.json") + " --data " + (w / "a/simulated.csv");
  REQUIRE(run("fit" + common + " --out " + (w / "fa"), w) == 0);
  REQUIRE(run("fit" + common + " --out " + (w / "fb"), w) == 0);
  CHECK(slurp(w / "fa/estimates.csv") == slurp(w / "fb/estimates.csv"));
  const std::string pred = "predict" + common + " --fit " + (w / "fa") + " --seed 3 --out ";
  REQUIRE(run(pred + (w / "p1"), w) == 0);
  REQUIRE(run(pred + (w / "p2"), w) == 0);
  CHECK(slurp(w / "p1/predictions.csv") == slurp(w / "p2/predictions.csv"));
}
