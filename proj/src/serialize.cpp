#include "mixhmm/serialize.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mixhmm/inference.hpp"

namespace mixhmm {
namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ModelError("spec " + where + ": " + what);
}

void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) fail(where, "expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      std::string valid;
      for (const auto& a : allowed) valid += (valid.empty() ? "" : ", ") + a;
      fail(where, "unknown key '" + key + "' (valid: " + valid + ")");
    }
  }
}

template <typename T>
T get_as(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(where, "value has the wrong type");
  }
}

Formula formula_of(const Json& j, const std::string& where) {
  if (!j.is_string()) fail(where, "formula must be a string");
  try {
    return parse_formula(j.get<std::string>());
  } catch (const ModelError& e) {
    fail(where, e.what());
  }
}

std::string formula_text(const Formula& f) { return f.empty() ? "." : format_formula(f); }

Eigen::MatrixXd matrix_of(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(where, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) fail(where, "rows must have equal length");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_as<double>(row[static_cast<std::size_t>(c)], where);
  }
  return m;
}

ObservationSpec observation_of(const std::string& name, const Json& j, const std::string& where, int K) {
  check_keys(j, where, {"name", "dist", "formula", "init"});
  ObservationSpec o;
  o.name = name;
  if (!j.contains("dist")) fail(where, "missing 'dist'");
  o.dist = get_as<std::string>(j["dist"], where + ".dist");
  const DistFamily* f;
  try {
    f = &family(o.dist);
  } catch (const std::invalid_argument& e) {
    fail(where + ".dist", e.what());
  }
  auto param_of = [&](const std::string& p, const std::string& w) {
    try {
      return f->param_index(p);
    } catch (const std::invalid_argument& e) {
      fail(w, e.what());
    }
  };
  o.formulas.assign(f->n_params(), Formula{});
  if (j.contains("formula")) {
    const auto& fj = j["formula"];
    if (fj.is_string()) {
      // one formula for the first parameter
      o.formulas[0] = formula_of(fj, where + ".formula");
    } else {
      check_keys(fj, where + ".formula", std::set<std::string>(f->params.begin(), f->params.end()));
      for (const auto& [p, text] : fj.items()) o.formulas[param_of(p, where + ".formula")] = formula_of(text, where + ".formula." + p);
    }
  }
  if (!j.contains("init")) fail(where, "missing 'init'");
  const auto& ij = j["init"];
  check_keys(ij, where + ".init", std::set<std::string>(f->params.begin(), f->params.end()));
  o.init.assign(f->n_params(), {});
  for (const auto& [p, vals] : ij.items()) {
    o.init[param_of(p, where + ".init")] = get_as<std::vector<double>>(vals, where + ".init." + p);
  }
  for (std::size_t l = 0; l < f->n_params(); ++l) {
    if (o.init[l].empty()) fail(where + ".init", "missing initial values for '" + f->params[l] + "'");
    if (o.init[l].size() != static_cast<std::size_t>(K)) {
      fail(where + ".init." + f->params[l], "expected " + std::to_string(K) + " values, one per state, got " +
                                                std::to_string(o.init[l].size()));
    }
  }
  return o;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_table(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(cell);
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        row.push_back(cell);
        rows.push_back(row);
      }
      row.clear();
      cell.clear();
      any = false;
    } else {
      cell += c;
      any = true;
    }
  }
  if (any || !cell.empty()) {
    row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

double number_of(const std::string& s) {
  if (s.empty() || s == "NA") return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ModelError("not a number: '" + s + "'");
  }
  if (pos != s.size()) throw ModelError("not a number: '" + s + "'");
  return v;
}

}  // namespace

ModelSpec parse_spec(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError(std::string("spec is not valid JSON: ") + e.what());
  }
  check_keys(j, "root", {"n_states", "observation", "hidden", "factors", "constraints", "init", "options"});
  ModelSpec spec;
  if (!j.contains("n_states")) fail("root", "missing 'n_states'");
  spec.n_states = get_as<int>(j["n_states"], "n_states");
  if (spec.n_states < 2) fail("n_states", "number of states must be >= 2");
  const int K = spec.n_states;
  spec.hidden.K = K;

  if (!j.contains("observation")) fail("root", "missing 'observation'");
  const auto& oj = j["observation"];
  if (oj.is_object()) {
    for (const auto& [name, body] : oj.items()) spec.observations.push_back(observation_of(name, body, "observation." + name, K));
  } else if (oj.is_array()) {
    for (std::size_t i = 0; i < oj.size(); ++i) {
      const std::string where = "observation[" + std::to_string(i) + "]";
      if (!oj[i].is_object() || !oj[i].contains("name")) fail(where, "missing 'name'");
      spec.observations.push_back(observation_of(get_as<std::string>(oj[i]["name"], where), oj[i], where, K));
    }
  } else {
    fail("observation", "expected an object keyed by variable name");
  }
  if (spec.observations.empty()) fail("observation", "at least one variable is needed");

  if (j.contains("hidden")) {
    const auto& hj = j["hidden"];
    check_keys(hj, "hidden", {"formula", "tpm", "initial_state", "fixed_states", "zeros", "delta0", "delta0_per_series"});
    auto& h = spec.hidden;
    if (hj.contains("formula")) {
      const auto& fj = hj["formula"];
      h.formulas.assign(K, std::vector<Formula>(K));
      if (fj.is_string()) {
        const Formula f = formula_of(fj, "hidden.formula");
        for (int a = 0; a < K; ++a)
          for (int b = 0; b < K; ++b)
            if (a != b) h.formulas[a][b] = f;
      } else {
        if (!fj.is_array() || fj.size() != static_cast<std::size_t>(K)) fail("hidden.formula", "expected a K x K grid");
        for (int a = 0; a < K; ++a) {
          const auto& row = fj[static_cast<std::size_t>(a)];
          if (!row.is_array() || row.size() != static_cast<std::size_t>(K)) fail("hidden.formula", "expected a K x K grid");
          for (int b = 0; b < K; ++b) {
            if (a == b) continue;
            h.formulas[a][b] = formula_of(row[static_cast<std::size_t>(b)], "hidden.formula");
          }
        }
      }
    }
    if (hj.contains("tpm")) h.tpm0 = matrix_of(hj["tpm"], "hidden.tpm");
    if (hj.contains("initial_state")) {
      const auto mode = get_as<std::string>(hj["initial_state"], "hidden.initial_state");
      if (mode == "estimated") h.initial_mode = InitialMode::estimated;
      else if (mode == "stationary") h.initial_mode = InitialMode::stationary;
      else if (mode == "fixed") h.initial_mode = InitialMode::fixed;
      else fail("hidden.initial_state", "unknown mode '" + mode + "' (valid: estimated, stationary, fixed)");
    }
    if (hj.contains("fixed_states")) h.fixed_states = get_as<std::vector<int>>(hj["fixed_states"], "hidden.fixed_states");
    if (hj.contains("zeros")) {
      for (const auto& z : hj["zeros"]) {
        const auto pair = get_as<std::vector<int>>(z, "hidden.zeros");
        if (pair.size() != 2) fail("hidden.zeros", "each zero is a pair [i, j]");
        if (pair[0] < 1 || pair[0] > K || pair[1] < 1 || pair[1] > K || pair[0] == pair[1]) {
          fail("hidden.zeros", "zero (" + std::to_string(pair[0]) + "," + std::to_string(pair[1]) +
                                    ") must be an off-diagonal pair in 1.." + std::to_string(K));
        }
        h.structural_zeros.emplace_back(pair[0], pair[1]);
      }
    }
    if (hj.contains("delta0")) {
      const auto d = get_as<std::vector<double>>(hj["delta0"], "hidden.delta0");
      h.delta0 = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    }
    if (hj.contains("delta0_per_series")) h.delta0_per_series = get_as<bool>(hj["delta0_per_series"], "hidden.delta0_per_series");
  }

  if (j.contains("factors")) spec.factors = get_as<std::vector<std::string>>(j["factors"], "factors");
  if (j.contains("constraints")) {
    const auto& cj = j["constraints"];
    check_keys(cj, "constraints", {"fixed", "shared"});
    if (cj.contains("fixed")) spec.constraints.fixed = get_as<std::vector<std::string>>(cj["fixed"], "constraints.fixed");
    if (cj.contains("shared")) {
      if (!cj["shared"].is_object()) fail("constraints.shared", "expected an object of named groups");
      for (const auto& [g, names] : cj["shared"].items()) {
        spec.constraints.shared[g] = get_as<std::vector<std::string>>(names, "constraints.shared." + g);
      }
    }
  }
  if (j.contains("init")) {
    if (!j["init"].is_object()) fail("init", "expected an object of parameter values");
    for (const auto& [name, v] : j["init"].items()) spec.init[name] = get_as<double>(v, "init." + name);
  }
  if (j.contains("options")) {
    const auto& o = j["options"];
    check_keys(o, "options", {"method", "max_iter", "tol", "seed", "n_post", "level", "threads", "covariance"});
    auto& opt = spec.options;
    if (o.contains("method")) {
      const auto m = get_as<std::string>(o["method"], "options.method");
      if (m == "nelder-mead") opt.method = OptimMethod::nelder_mead;
      else if (m == "quasi-newton") opt.method = OptimMethod::quasi_newton;
      else fail("options.method", "unknown method '" + m + "' (valid: nelder-mead, quasi-newton)");
    }
    if (o.contains("max_iter")) opt.max_iter = get_as<int>(o["max_iter"], "options.max_iter");
    if (o.contains("tol")) opt.tol = get_as<double>(o["tol"], "options.tol");
    if (o.contains("seed")) opt.seed = get_as<std::uint64_t>(o["seed"], "options.seed");
    if (o.contains("n_post")) opt.n_post = get_as<int>(o["n_post"], "options.n_post");
    if (o.contains("level")) opt.level = get_as<double>(o["level"], "options.level");
    if (o.contains("threads")) opt.threads = get_as<int>(o["threads"], "options.threads");
    if (o.contains("covariance")) opt.covariance = get_as<bool>(o["covariance"], "options.covariance");
    if (opt.max_iter < 0) fail("options.max_iter", "must be >= 0");
    if (!(opt.tol >= 0)) fail("options.tol", "must be >= 0");
    if (opt.n_post < 0) fail("options.n_post", "must be >= 0");
    if (!(opt.level > 0 && opt.level < 1)) fail("options.level", "must lie in (0, 1)");
    if (opt.threads < 1) fail("options.threads", "must be >= 1");
  }
  return spec;
}

ModelSpec load_spec(const std::string& path) { return parse_spec(read_text_file(path)); }

std::string spec_to_json(const ModelSpec& spec) {
  Json j;
  const int K = spec.n_states;
  j["n_states"] = K;
  Json obs = Json::object();
  for (const auto& o : spec.observations) {
    const auto& f = family(o.dist);
    Json b;
    b["dist"] = o.dist;
    Json fj = Json::object();
    for (std::size_t l = 0; l < f.n_params(); ++l) {
      fj[f.params[l]] = formula_text(l < o.formulas.size() ? o.formulas[l] : Formula{});
    }
    b["formula"] = fj;
    Json ij = Json::object();
    for (std::size_t l = 0; l < f.n_params() && l < o.init.size(); ++l) ij[f.params[l]] = o.init[l];
    b["init"] = ij;
    obs[o.name] = b;
  }
  j["observation"] = obs;

  const auto& h = spec.hidden;
  Json hj;
  Json grid = Json::array();
  for (int a = 0; a < K; ++a) {
    Json row = Json::array();
    for (int b = 0; b < K; ++b) {
      if (a == b) {
        row.push_back(".");
      } else {
        const bool has = a < static_cast<int>(h.formulas.size()) && b < static_cast<int>(h.formulas[a].size());
        row.push_back(has ? formula_text(h.formulas[a][b]) : ".");
      }
    }
    grid.push_back(row);
  }
  hj["formula"] = grid;
  if (h.tpm0.size() > 0) hj["tpm"] = matrix_json(h.tpm0);
  switch (h.initial_mode) {
    case InitialMode::estimated: hj["initial_state"] = "estimated"; break;
    case InitialMode::stationary: hj["initial_state"] = "stationary"; break;
    case InitialMode::fixed: hj["initial_state"] = "fixed"; break;
  }
  if (!h.fixed_states.empty()) hj["fixed_states"] = h.fixed_states;
  Json zeros = Json::array();
  for (const auto& [a, b] : h.structural_zeros) zeros.push_back(Json::array({a, b}));
  hj["zeros"] = zeros;
  if (h.delta0.size() > 0) hj["delta0"] = std::vector<double>(h.delta0.data(), h.delta0.data() + h.delta0.size());
  hj["delta0_per_series"] = h.delta0_per_series;
  j["hidden"] = hj;

  j["factors"] = spec.factors;
  Json cj;
  cj["fixed"] = spec.constraints.fixed;
  Json shared = Json::object();
  for (const auto& [g, names] : spec.constraints.shared) shared[g] = names;
  cj["shared"] = shared;
  j["constraints"] = cj;
  Json init = Json::object();
  for (const auto& [name, v] : spec.init) init[name] = v;
  j["init"] = init;

  const auto& opt = spec.options;
  Json oj;
  oj["method"] = opt.method == OptimMethod::nelder_mead ? "nelder-mead" : "quasi-newton";
  oj["max_iter"] = opt.max_iter;
  oj["tol"] = opt.tol;
  oj["seed"] = opt.seed;
  oj["n_post"] = opt.n_post;
  oj["level"] = opt.level;
  oj["threads"] = opt.threads;
  oj["covariance"] = opt.covariance;
  j["options"] = oj;
  return j.dump(2) + "\n";
}

std::string estimates_csv(const Model& m, const FitResult& fit) {
  const auto& p = fit.estimates;
  const bool have_cov = fit.covariance.rows() == m.n_joint() && m.n_joint() > 0;
  Eigen::VectorXd se;
  if (have_cov) se = fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  std::ostringstream out;
  out << "block,name,estimate,se\n";
  auto line = [&](const std::string& block, const std::string& name, double v, double s) {
    out << block << ',' << quote(name) << ',' << format_double(v) << ',' << (std::isnan(s) ? "" : format_double(s))
        << '\n';
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const Eigen::Index na = m.n_alpha(), nb = m.n_beta(), nl = m.n_lambda();
  for (Eigen::Index i = 0; i < na; ++i) line("coef_fe", m.alpha_names()[static_cast<std::size_t>(i)], p.alpha[i], have_cov ? se[i] : nan);
  for (Eigen::Index i = 0; i < nb; ++i) line("coef_re", m.beta_names()[static_cast<std::size_t>(i)], p.beta[i], have_cov ? se[na + i] : nan);
  for (Eigen::Index i = 0; i < nl; ++i)
    line("log_lambda", m.lambda_names()[static_cast<std::size_t>(i)], p.log_lambda[i], have_cov ? se[na + nb + i] : nan);
  for (Eigen::Index i = 0; i < nl; ++i) line("lambda", m.lambda_names()[static_cast<std::size_t>(i)], std::exp(p.log_lambda[i]), nan);
  for (Eigen::Index i = 0; i < nl; ++i)
    line("sd_re", m.lambda_names()[static_cast<std::size_t>(i)], 1.0 / std::sqrt(std::exp(p.log_lambda[i])), nan);
  for (Eigen::Index i = 0; i < m.n_delta(); ++i)
    line("delta0", m.delta_names()[static_cast<std::size_t>(i)], p.delta0[i], have_cov ? se[na + nb + nl + i] : nan);
  for (auto what : {PredictWhat::tpm, PredictWhat::delta, PredictWhat::obspar}) {
    PredictionRequest req;
    req.what = what;
    req.rows = {0};
    req.n_post = 0;
    const auto pr = predict(m, p, req);
    const char* block = what == PredictWhat::tpm ? "tpm" : what == PredictWhat::delta ? "delta" : "obspar";
    for (std::size_t c = 0; c < pr.names.size(); ++c) line(block, pr.names[c], pr.mean(0, static_cast<Eigen::Index>(c)), nan);
  }
  return out.str();
}

ParameterSet parse_estimates(const Model& m, const std::string& csv_text) {
  const auto rows = parse_table(csv_text);
  if (rows.empty() || rows[0].size() < 3 || rows[0][0] != "block") throw ModelError("estimates table needs a block,name,estimate header");
  std::map<std::string, std::map<std::string, double>> by_block;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 3) throw ModelError("estimates table row " + std::to_string(r + 1) + " is short");
    by_block[rows[r][0]][rows[r][1]] = number_of(rows[r][2]);
  }
  auto fill = [&](const std::string& block, const std::vector<std::string>& names) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto it = by_block[block].find(names[i]);
      if (it == by_block[block].end()) throw ModelError("estimates table lacks " + block + " '" + names[i] + "'");
      v[static_cast<Eigen::Index>(i)] = it->second;
    }
    return v;
  };
  ParameterSet p;
  p.alpha = fill("coef_fe", m.alpha_names());
  p.beta = fill("coef_re", m.beta_names());
  p.log_lambda = fill("log_lambda", m.lambda_names());
  p.delta0 = fill("delta0", m.delta_names());
  return p;
}

std::string covariance_csv(const Model& m, const Eigen::MatrixXd& cov) {
  const auto names = m.joint_names();
  std::ostringstream out;
  out << "name";
  for (const auto& n : names) out << ',' << quote(n);
  out << '\n';
  for (Eigen::Index r = 0; r < cov.rows(); ++r) {
    out << quote(names[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < cov.cols(); ++c) out << ',' << format_double(cov(r, c));
    out << '\n';
  }
  return out.str();
}

Eigen::MatrixXd parse_covariance(const Model& m, const std::string& csv_text) {
  const auto rows = parse_table(csv_text);
  const auto names = m.joint_names();
  const auto n = static_cast<Eigen::Index>(names.size());
  if (rows.size() != names.size() + 1) throw ModelError("covariance table does not match the model's parameters");
  std::map<std::string, Eigen::Index> pos;
  for (Eigen::Index i = 0; i < n; ++i) pos[names[static_cast<std::size_t>(i)]] = i;
  const auto& header = rows[0];
  if (header.size() != names.size() + 1) throw ModelError("covariance table does not match the model's parameters");
  std::vector<Eigen::Index> col(names.size());
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto it = pos.find(header[c]);
    if (it == pos.end()) throw ModelError("covariance table has unknown parameter '" + header[c] + "'");
    col[c - 1] = it->second;
  }
  Eigen::MatrixXd cov(n, n);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto it = pos.find(rows[r][0]);
    if (it == pos.end() || rows[r].size() != header.size()) throw ModelError("covariance table row " + std::to_string(r + 1) + " is malformed");
    for (std::size_t c = 1; c < rows[r].size(); ++c) cov(it->second, col[c - 1]) = number_of(rows[r][c]);
  }
  return cov;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ModelError("failed writing '" + path + "'");
}

}  // namespace mixhmm
