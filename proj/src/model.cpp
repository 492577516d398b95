#include "mixhmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mixhmm/log.hpp"

namespace mixhmm {
namespace {

constexpr double kLogitCap = 30.0;

bool is_lag_name(const std::string& s) { return s.rfind("lag(", 0) == 0 && s.back() == ')'; }

std::string lag_target(const std::string& s) { return s.substr(4, s.size() - 5); }

double clamped_log_ratio(double num, double den) {
  if (num <= 0.0) return -kLogitCap;
  if (den <= 0.0) return kLogitCap;
  return std::clamp(std::log(num / den), -kLogitCap, kLogitCap);
}

void collect_covariates(const Formula& f, std::set<std::string>& out) {
  for (const auto& t : f) {
    if (t.kind != TermKind::intercept) out.insert(t.covariate);
  }
}

Dataset keep_covariates(const Dataset& d, const std::vector<std::string>& names) {
  std::vector<Column> cols;
  for (const auto& n : names) {
    if (!d.has_covariate(n)) throw ModelError("unknown covariate '" + n + "'");
    cols.push_back(d.covariate(n));
  }
  return d.with_covariates(std::move(cols));
}

}  // namespace

std::string delta_name(int state, const std::string& series) {
  std::string s = "delta0.";
  if (!series.empty()) s += series + ".";
  return s + "state" + std::to_string(state + 1);
}

std::vector<std::string> ModelSpec::response_names() const {
  std::vector<std::string> out;
  for (const auto& o : observations) out.push_back(o.name);
  return out;
}

std::vector<std::string> ModelSpec::covariate_names() const {
  std::set<std::string> names;
  for (const auto& o : observations) {
    for (const auto& f : o.formulas) collect_covariates(f, names);
  }
  for (const auto& row : hidden.formulas) {
    for (const auto& f : row) collect_covariates(f, names);
  }
  return {names.begin(), names.end()};
}

bool ModelSpec::has_lagged_responses() const {
  const auto names = covariate_names();
  return std::any_of(names.begin(), names.end(), is_lag_name);
}

// ---------------------------------------------------------------------------

Model::Model(ModelSpec spec, const Dataset& data) : spec_(std::move(spec)) {
  const int K = spec_.n_states;
  if (K < 2) throw ModelError("number of states must be >= 2");
  if (spec_.observations.empty()) throw ModelError("model has no observation variables");
  spec_.hidden.K = K;

  for (std::size_t v = 0; v < spec_.observations.size(); ++v) {
    auto& o = spec_.observations[v];
    const DistFamily* f = &family(o.dist);
    families_.push_back(f);
    if (!data.has_response(o.name)) throw ModelError("data has no response column '" + o.name + "'");
    if (o.formulas.size() > f->n_params()) {
      throw ModelError("too many parameter formulas for variable '" + o.name + "'");
    }
    o.formulas.resize(f->n_params());
    for (auto& fm : o.formulas) {
      if (fm.empty()) fm = Formula{Term{}};
    }
    if (o.init.size() != f->n_params()) {
      throw ModelError("variable '" + o.name + "' needs initial values for " + std::to_string(f->n_params()) +
                       " parameters");
    }
    for (std::size_t l = 0; l < o.init.size(); ++l) {
      if (o.init[l].size() != static_cast<std::size_t>(K)) {
        throw ModelError("variable '" + o.name + "' parameter '" + f->params[l] + "' needs " + std::to_string(K) +
                         " initial values");
      }
    }
    for (int j = 0; j < K; ++j) {
      std::vector<double> w(f->n_params());
      for (std::size_t l = 0; l < w.size(); ++l) w[l] = o.init[l][static_cast<std::size_t>(j)];
      try {
        check_domain(*f, w);
      } catch (const std::domain_error& e) {
        throw ModelError("initial values of '" + o.name + "' in state " + std::to_string(j + 1) + ": " + e.what());
      }
    }
  }

  auto& h = spec_.hidden;
  if (h.tpm0.size() == 0) h.tpm0 = default_tpm(K);
  if (h.tpm0.rows() != K || h.tpm0.cols() != K) throw ModelError("initial transition matrix must be K x K");
  for (int i = 0; i < K; ++i) {
    if ((h.tpm0.row(i).array() < 0).any() || std::abs(h.tpm0.row(i).sum() - 1.0) > 1e-8) {
      throw ModelError("row " + std::to_string(i + 1) + " of the initial transition matrix is not a distribution");
    }
  }
  zeros_ = h.zero_mask();
  if (h.formulas.empty()) h.formulas.assign(K, std::vector<Formula>(K, Formula{Term{}}));
  if (h.formulas.size() != static_cast<std::size_t>(K)) throw ModelError("transition formulas must form a K x K grid");
  for (auto& row : h.formulas) {
    if (row.size() != static_cast<std::size_t>(K)) throw ModelError("transition formulas must form a K x K grid");
  }
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      auto& f = h.formulas[i][j];
      if (i == j || zeros_(i, j)) {
        f.clear();
      } else if (f.empty()) {
        f = Formula{Term{}};
      }
      for (const auto& t : f) {
        if (t.state) throw ModelError("state-restricted terms are only allowed in observation formulas");
      }
    }
  }
  {
    Eigen::MatrixXd pattern = Eigen::MatrixXd::Ones(K, K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        if (zeros_(i, j)) pattern(i, j) = 0.0;
    const bool ok = is_irreducible(pattern) && is_aperiodic(pattern);
    if (!ok) {
      if (h.initial_mode == InitialMode::stationary) {
        throw ModelError("structural zeros make the chain reducible or periodic; the stationary initial "
                         "distribution is undefined, use \"fixed\" or \"estimated\"");
      }
      warn("structural zeros make the state process reducible or periodic");
    }
  }
  if (h.initial_mode == InitialMode::fixed) {
    if (h.fixed_states.empty()) throw ModelError("fixed initial distribution needs a state per series");
    for (int s : h.fixed_states) {
      if (s < 1 || s > K) throw ModelError("fixed initial state out of range");
    }
  }
  if (h.delta0.size() != 0) {
    if (h.delta0.size() != K || (h.delta0.array() < 0).any() || std::abs(h.delta0.sum() - 1.0) > 1e-8) {
      throw ModelError("initial distribution must be a probability vector of length K");
    }
  }

  // working copy of the data: responses, referenced covariates, known states
  Dataset d = with_lag_covariates(data);
  d = keep_covariates(d, spec_.covariate_names());
  d = fill_covariate_gaps(d);
  if (d.has_known_state()) {
    for (int s : d.known_state()) {
      if (s < 0 || s > K) throw ModelError("known state " + std::to_string(s) + " is outside 1.." + std::to_string(K));
    }
  }
  data_ = std::move(d);
  if (h.initial_mode == InitialMode::fixed && h.fixed_states.size() != 1 &&
      h.fixed_states.size() != data_.n_series()) {
    throw ModelError("fixed initial states: give one state or one per series");
  }
  for (const auto& o : spec_.observations) {
    const auto& cols = data_.responses();
    const auto it = std::find_if(cols.begin(), cols.end(), [&](const Column& c) { return c.name == o.name; });
    response_columns_.push_back(static_cast<int>(it - cols.begin()));
  }

  build_predictors();
  build_initial();
  resolve_constraints();
}

Dataset Model::with_lag_covariates(const Dataset& d) const {
  std::vector<Column> cols = d.covariates();
  bool added = false;
  for (const auto& name : spec_.covariate_names()) {
    if (!is_lag_name(name) || d.has_covariate(name)) continue;
    const std::string target = lag_target(name);
    if (!d.has_response(target)) {
      throw ModelError("lagged covariate '" + name + "' needs response '" + target + "'");
    }
    const auto& z = d.response(target).values;
    Column c;
    c.name = name;
    c.values.assign(d.n_rows(), kMissing);
    for (const auto& sv : d.series()) {
      for (std::size_t r = sv.begin + 1; r < sv.end; ++r) c.values[r] = z[r - 1];
    }
    cols.push_back(std::move(c));
    added = true;
  }
  return added ? d.with_covariates(std::move(cols)) : d;
}

void Model::build_predictors() {
  const int K = spec_.n_states;
  Eigen::Index a = 0, b = 0, lam = 0;
  auto add = [&](Predictor p, const Formula& f) {
    p.design = assemble(f, data_);
    p.alpha_begin = a;
    p.beta_begin = b;
    p.lambda_begin = lam;
    for (const auto& n : p.design.fixed_names) alpha_names_.push_back(p.name + "." + n);
    for (const auto& n : p.design.random_names) beta_names_.push_back(p.name + "." + n);
    for (const auto& pb : p.design.penalties) {
      SmoothingBlock sb;
      sb.predictor = static_cast<int>(predictors_.size());
      sb.beta_begin = b + pb.begin;
      sb.size = pb.size;
      sb.S = pb.S;
      sb.name = p.name + "." + pb.label;
      lambda_names_.push_back(sb.name);
      blocks_.push_back(std::move(sb));
    }
    a += p.design.n_fixed();
    b += p.design.n_random();
    lam += static_cast<Eigen::Index>(p.design.penalties.size());
    predictors_.push_back(std::move(p));
  };

  obs_index_.resize(spec_.observations.size());
  for (std::size_t v = 0; v < spec_.observations.size(); ++v) {
    const auto& o = spec_.observations[v];
    const auto& f = *families_[v];
    obs_index_[v].assign(f.n_params(), std::vector<int>(static_cast<std::size_t>(K), -1));
    for (std::size_t l = 0; l < f.n_params(); ++l) {
      for (int j = 0; j < K; ++j) {
        Formula terms = terms_for_state(o.formulas[l], j + 1);
        if (terms.empty()) {
          throw ModelError("parameter '" + f.params[l] + "' of '" + o.name + "' has no terms in state " +
                           std::to_string(j + 1));
        }
        if (f.held_fixed[l] && !(terms.size() == 1 && terms[0].kind == TermKind::intercept)) {
          throw ModelError("parameter '" + f.params[l] + "' of '" + o.name + "' is held fixed and takes no covariates");
        }
        Predictor p;
        p.var = static_cast<int>(v);
        p.param = static_cast<int>(l);
        p.state = j;
        p.name = o.name + "." + f.params[l] + ".state" + std::to_string(j + 1);
        obs_index_[v][l][static_cast<std::size_t>(j)] = static_cast<int>(predictors_.size());
        add(std::move(p), terms);
      }
    }
  }
  tr_index_ = Eigen::MatrixXi::Constant(K, K, -1);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      if (i == j || zeros_(i, j)) continue;
      Predictor p;
      p.transition = true;
      p.from = i;
      p.to = j;
      p.name = "S" + std::to_string(i + 1) + ">S" + std::to_string(j + 1);
      tr_index_(i, j) = static_cast<int>(predictors_.size());
      add(std::move(p), spec_.hidden.formulas[i][j]);
    }
  }

  if (spec_.hidden.initial_mode == InitialMode::estimated) {
    if (spec_.hidden.delta0_per_series) {
      for (const auto& sv : data_.series()) {
        for (int j = 1; j < K; ++j) delta_names_.push_back(delta_name(j, sv.label));
      }
    } else {
      for (int j = 1; j < K; ++j) delta_names_.push_back(delta_name(j));
    }
  }

  series_of_beta_.assign(static_cast<std::size_t>(b), {});
  for (const auto& p : predictors_) {
    const auto& R = p.design.R;
    for (Eigen::Index c = 0; c < R.cols(); ++c) {
      auto& list = series_of_beta_[static_cast<std::size_t>(p.beta_begin + c)];
      for (std::size_t s = 0; s < data_.n_series(); ++s) {
        const auto& sv = data_.series()[s];
        const auto len = static_cast<Eigen::Index>(sv.size());
        if ((R.col(c).segment(static_cast<Eigen::Index>(sv.begin), len).array() != 0.0).any()) {
          list.push_back(static_cast<int>(s));
        }
      }
    }
  }
}

void Model::build_initial() {
  const int K = spec_.n_states;
  initial_.alpha = Eigen::VectorXd::Zero(n_alpha());
  initial_.beta = Eigen::VectorXd::Zero(n_beta());
  initial_.log_lambda = Eigen::VectorXd::Zero(n_lambda());
  initial_.delta0 = Eigen::VectorXd::Zero(n_delta());

  for (const auto& p : predictors_) {
    if (!p.design.has_intercept) continue;
    double value = 0.0;
    if (p.transition) {
      const auto& g = spec_.hidden.tpm0;
      value = clamped_log_ratio(g(p.from, p.to), g(p.from, p.from));
    } else {
      const auto& f = *families_[static_cast<std::size_t>(p.var)];
      const double w = spec_.observations[static_cast<std::size_t>(p.var)]
                           .init[static_cast<std::size_t>(p.param)][static_cast<std::size_t>(p.state)];
      value = link_apply(f.links[static_cast<std::size_t>(p.param)], w);
    }
    initial_.alpha[p.alpha_begin] = value;
  }
  if (n_delta() > 0 && spec_.hidden.delta0.size() == K) {
    const auto& d0 = spec_.hidden.delta0;
    const Eigen::Index groups = n_delta() / (K - 1);
    for (Eigen::Index g = 0; g < groups; ++g) {
      for (int j = 1; j < K; ++j) initial_.delta0[g * (K - 1) + j - 1] = clamped_log_ratio(d0[j], d0[0]);
    }
  }

  const auto names = theta_names();
  Eigen::VectorXd theta = theta_of(initial_);
  for (const auto& [name, value] : spec_.init) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ModelError("initial value for unknown parameter '" + name + "'");
    theta[it - names.begin()] = value;
  }
  set_theta(initial_, theta);
}

void Model::resolve_constraints() {
  const auto names = theta_names();
  auto index_of = [&](const std::string& name) -> Eigen::Index {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      if (std::find(beta_names_.begin(), beta_names_.end(), name) != beta_names_.end()) {
        throw ModelError("random effect '" + name + "' cannot be fixed or shared");
      }
      throw ModelError("constraint refers to unknown parameter '" + name + "'");
    }
    return it - names.begin();
  };

  const auto n = static_cast<std::size_t>(n_theta());
  std::vector<int> tag(n, 0);  // 0 free, -1 fixed, >0 shared group id
  for (const auto& name : spec_.constraints.fixed) tag[static_cast<std::size_t>(index_of(name))] = -1;
  // parameters a family holds fixed (binomial size)
  for (const auto& p : predictors_) {
    if (p.transition) continue;
    if (families_[static_cast<std::size_t>(p.var)]->held_fixed[static_cast<std::size_t>(p.param)]) {
      for (Eigen::Index c = 0; c < p.design.n_fixed(); ++c) tag[static_cast<std::size_t>(p.alpha_begin + c)] = -1;
    }
  }

  Eigen::VectorXd theta = theta_of(initial_);
  int group_id = 0;
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& [label, members] : spec_.constraints.shared) {
    if (members.size() < 2) throw ModelError("shared group '" + label + "' needs at least two parameters");
    ++group_id;
    std::vector<std::size_t> idx;
    for (const auto& name : members) {
      const auto i = static_cast<std::size_t>(index_of(name));
      if (tag[i] == -1) throw ModelError("parameter '" + name + "' is both fixed and shared");
      if (tag[i] > 0) throw ModelError("parameter '" + name + "' is in two shared groups");
      tag[i] = group_id;
      idx.push_back(i);
    }
    for (std::size_t i : idx) theta[static_cast<Eigen::Index>(i)] = theta[static_cast<Eigen::Index>(idx[0])];
    groups.push_back(std::move(idx));
  }
  set_theta(initial_, theta);

  theta_group_.assign(n, -1);
  std::vector<int> group_free(groups.size() + 1, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tag[i] == -1) continue;
    if (tag[i] == 0) {
      theta_group_[i] = next++;
    } else {
      auto& g = group_free[static_cast<std::size_t>(tag[i])];
      if (g < 0) g = next++;
      theta_group_[i] = g;
    }
  }
  n_free_ = next;
}

int Model::delta_group(std::size_t series) const {
  if (spec_.hidden.initial_mode != InitialMode::estimated) return -1;
  return spec_.hidden.delta0_per_series ? static_cast<int>(series) : 0;
}

std::vector<std::string> Model::theta_names() const {
  std::vector<std::string> out = alpha_names_;
  for (const auto& n : lambda_names_) out.push_back(n);
  for (const auto& n : delta_names_) out.push_back(n);
  return out;
}

Eigen::VectorXd Model::theta_of(const ParameterSet& p) const {
  Eigen::VectorXd t(n_theta());
  t << p.alpha, p.log_lambda, p.delta0;
  return t;
}

void Model::set_theta(ParameterSet& p, const Eigen::Ref<const Eigen::VectorXd>& theta) const {
  p.alpha = theta.head(n_alpha());
  p.log_lambda = theta.segment(n_alpha(), n_lambda());
  p.delta0 = theta.tail(n_delta());
}

Eigen::VectorXd Model::free_of(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd f(n_free_);
  for (std::size_t i = theta_group_.size(); i-- > 0;) {
    if (theta_group_[i] >= 0) f[theta_group_[i]] = theta[static_cast<Eigen::Index>(i)];
  }
  return f;
}

Eigen::VectorXd Model::theta_from_free(const Eigen::VectorXd& free, const Eigen::VectorXd& theta) const {
  Eigen::VectorXd out = theta;
  for (std::size_t i = 0; i < theta_group_.size(); ++i) {
    if (theta_group_[i] >= 0) out[static_cast<Eigen::Index>(i)] = free[theta_group_[i]];
  }
  return out;
}

Eigen::MatrixXd Model::free_jacobian() const {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n_theta(), n_free_);
  for (std::size_t i = 0; i < theta_group_.size(); ++i) {
    if (theta_group_[i] >= 0) J(static_cast<Eigen::Index>(i), theta_group_[i]) = 1.0;
  }
  return J;
}

std::vector<std::string> Model::joint_names() const {
  std::vector<std::string> out = alpha_names_;
  out.insert(out.end(), beta_names_.begin(), beta_names_.end());
  for (const auto& n : lambda_names_) out.push_back(n);
  out.insert(out.end(), delta_names_.begin(), delta_names_.end());
  return out;
}

Eigen::VectorXd Model::joint_of(const ParameterSet& p) const {
  Eigen::VectorXd v(n_joint());
  v << p.alpha, p.beta, p.log_lambda, p.delta0;
  return v;
}

ParameterSet Model::from_joint(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  ParameterSet p;
  p.alpha = v.head(n_alpha());
  p.beta = v.segment(n_alpha(), n_beta());
  p.log_lambda = v.segment(n_alpha() + n_beta(), n_lambda());
  p.delta0 = v.tail(n_delta());
  return p;
}

std::vector<bool> Model::joint_fixed() const {
  std::vector<bool> out(static_cast<std::size_t>(n_joint()), false);
  for (std::size_t i = 0; i < theta_group_.size(); ++i) {
    if (theta_group_[i] >= 0) continue;
    auto k = static_cast<Eigen::Index>(i);
    if (k >= n_alpha()) k += n_beta();
    out[static_cast<std::size_t>(k)] = true;
  }
  return out;
}

Eigen::MatrixXd Model::eta_training(const ParameterSet& p) const {
  Eigen::MatrixXd eta(static_cast<Eigen::Index>(data_.n_rows()), static_cast<Eigen::Index>(predictors_.size()));
  for (std::size_t k = 0; k < predictors_.size(); ++k) {
    const auto& pr = predictors_[k];
    auto col = eta.col(static_cast<Eigen::Index>(k));
    col = pr.design.X * p.alpha.segment(pr.alpha_begin, pr.design.n_fixed());
    if (pr.design.n_random() > 0) col += pr.design.R * p.beta.segment(pr.beta_begin, pr.design.n_random());
  }
  return eta;
}

std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> Model::design_newdata(const Dataset& newdata) const {
  Dataset nd = with_lag_covariates(newdata);
  nd = keep_covariates(nd, spec_.covariate_names());
  nd = fill_covariate_gaps(nd);
  std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> out;
  out.reserve(predictors_.size());
  for (const auto& pr : predictors_) out.push_back(design_rows(pr.design, nd));
  return out;
}

Eigen::MatrixXd Model::eta_from_designs(const std::vector<Predictor>& preds,
                                        const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& designs,
                                        const ParameterSet& p) {
  const Eigen::Index n = designs.empty() ? 0 : designs[0].first.rows();
  Eigen::MatrixXd eta(n, static_cast<Eigen::Index>(preds.size()));
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& pr = preds[k];
    auto col = eta.col(static_cast<Eigen::Index>(k));
    col = designs[k].first * p.alpha.segment(pr.alpha_begin, pr.design.n_fixed());
    if (pr.design.n_random() > 0) col += designs[k].second * p.beta.segment(pr.beta_begin, pr.design.n_random());
  }
  return eta;
}

Eigen::MatrixXd Model::eta_newdata(const ParameterSet& p, const Dataset& newdata) const {
  return eta_from_designs(predictors_, design_newdata(newdata), p);
}

Eigen::MatrixXd Model::tpm_of_row(const Eigen::Ref<const Eigen::RowVectorXd>& eta) const {
  const int K = spec_.n_states;
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(K, K);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      const int k = tr_index_(i, j);
      if (k >= 0) e(i, j) = eta[k];
    }
  }
  return tpm_from_eta(e, zeros_);
}

Eigen::MatrixXd Model::obspar_of_row(std::size_t var, const Eigen::Ref<const Eigen::RowVectorXd>& eta) const {
  const auto& f = *families_[var];
  const int K = spec_.n_states;
  Eigen::MatrixXd w(static_cast<Eigen::Index>(f.n_params()), K);
  for (std::size_t l = 0; l < f.n_params(); ++l) {
    for (int j = 0; j < K; ++j) {
      w(static_cast<Eigen::Index>(l), j) = link_invert(f, l, eta[obs_predictor(var, l, j)]);
    }
  }
  return w;
}

Eigen::VectorXd Model::initial_distribution(const ParameterSet& p, std::size_t series,
                                            const Eigen::MatrixXd& first_tpm) const {
  const int K = spec_.n_states;
  switch (spec_.hidden.initial_mode) {
    case InitialMode::estimated: {
      const int g = delta_group(series);
      return delta_from_logits(p.delta0.segment(static_cast<Eigen::Index>(g) * (K - 1), K - 1));
    }
    case InitialMode::stationary: return stationary(first_tpm);
    case InitialMode::fixed: {
      const auto& fs = spec_.hidden.fixed_states;
      const int s = fs.size() == 1 ? fs[0] : fs[series];
      Eigen::VectorXd d = Eigen::VectorXd::Zero(K);
      d[s - 1] = 1.0;
      return d;
    }
  }
  return {};
}

}  // namespace mixhmm
