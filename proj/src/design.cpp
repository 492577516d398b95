#include "mixhmm/design.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>

#include "mixhmm/log.hpp"

namespace mixhmm {

// ---------------------------------------------------------------------------
// Term DSL

std::string Term::label() const {
  switch (kind) {
    case TermKind::intercept: return "(Intercept)";
    case TermKind::linear: return covariate;
    case TermKind::poly: return "poly(" + covariate + "," + std::to_string(degree) + ")";
    case TermKind::spline_cubic: return "spline(" + covariate + ")";
    case TermKind::spline_cyclic: return "cyclic(" + covariate + ")";
    case TermKind::random_intercept: return "re(" + covariate + ")";
  }
  return {};
}

std::string Term::to_string() const {
  std::string body;
  switch (kind) {
    case TermKind::intercept: body = "intercept"; break;
    case TermKind::linear: body = "linear(" + covariate + ")"; break;
    case TermKind::poly: body = "poly(" + covariate + ", " + std::to_string(degree) + ")"; break;
    case TermKind::spline_cubic: body = "spline(" + covariate + ", k=" + std::to_string(k) + ")"; break;
    case TermKind::spline_cyclic:
      body = "cyclic(" + covariate + ", k=" + std::to_string(k) + ", period=" + format_double(period) + ")";
      break;
    case TermKind::random_intercept: body = "re(" + covariate + ")"; break;
  }
  if (state) return "state" + std::to_string(*state) + "(" + body + ")";
  return body;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_top_level(std::string_view s, char sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    else if (s[i] == ')') --depth;
    if (depth < 0) throw ModelError("unbalanced parentheses in '" + std::string(s) + "'");
    if (s[i] == sep && depth == 0) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (depth != 0) throw ModelError("unbalanced parentheses in '" + std::string(s) + "'");
  out.push_back(trim(s.substr(start)));
  return out;
}

bool is_identifier(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '.'; });
}

// Covariate reference: identifier or lag(identifier).
bool is_covariate_ref(const std::string& s) {
  if (is_identifier(s)) return true;
  if (s.rfind("lag(", 0) == 0 && s.back() == ')') return is_identifier(trim(s.substr(4, s.size() - 5)));
  return false;
}

double to_number(const std::string& s, const std::string& ctx) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ModelError("expected a number in '" + ctx + "'");
  return v;
}

int to_int(const std::string& s, const std::string& ctx) {
  const double v = to_number(s, ctx);
  if (std::floor(v) != v) throw ModelError("expected an integer in '" + ctx + "'");
  return static_cast<int>(v);
}

Term parse_term(const std::string& text) {
  if (text == "intercept" || text == "1") return Term{};
  const auto open = text.find('(');
  if (open == std::string::npos) {
    if (!is_identifier(text)) throw ModelError("cannot parse term '" + text + "'");
    { Term t; t.kind = TermKind::linear; t.covariate = text; return t; }
  }
  if (text.back() != ')') throw ModelError("cannot parse term '" + text + "'");
  const std::string head = trim(std::string_view(text).substr(0, open));
  const std::string inner = text.substr(open + 1, text.size() - open - 2);

  if (head.size() > 5 && head.rfind("state", 0) == 0 &&
      std::all_of(head.begin() + 5, head.end(), [](unsigned char c) { return std::isdigit(c); })) {
    Term t = parse_term(trim(inner));
    if (t.state) throw ModelError("nested state restriction in '" + text + "'");
    t.state = to_int(head.substr(5), text);
    return t;
  }
  if (head == "lag") {
    if (!is_covariate_ref(text)) throw ModelError("cannot parse term '" + text + "'");
    { Term t; t.kind = TermKind::linear; t.covariate = text; return t; }
  }

  const auto args = split_top_level(inner, ',');
  if (args.empty() || !is_covariate_ref(args[0])) {
    throw ModelError("term '" + text + "' needs a covariate name as first argument");
  }
  Term t;
  t.covariate = args[0];
  std::vector<std::string> positional;
  std::vector<std::pair<std::string, std::string>> named;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const auto eq = args[i].find('=');
    if (eq == std::string::npos) positional.push_back(args[i]);
    else named.emplace_back(trim(args[i].substr(0, eq)), trim(args[i].substr(eq + 1)));
  }
  auto reject_extra = [&](std::size_t max_positional, std::initializer_list<const char*> keys) {
    if (positional.size() > max_positional) throw ModelError("too many arguments in '" + text + "'");
    for (const auto& [k, v] : named) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* key) { return k == key; })) {
        throw ModelError("unknown argument '" + k + "' in '" + text + "'");
      }
    }
  };
  auto named_value = [&](const char* key) -> std::optional<std::string> {
    for (const auto& [k, v] : named) {
      if (k == key) return v;
    }
    return std::nullopt;
  };

  if (head == "linear") {
    reject_extra(0, {});
    t.kind = TermKind::linear;
  } else if (head == "poly") {
    reject_extra(1, {"degree"});
    t.kind = TermKind::poly;
    if (!positional.empty()) t.degree = to_int(positional[0], text);
    if (auto v = named_value("degree")) t.degree = to_int(*v, text);
  } else if (head == "spline") {
    reject_extra(1, {"k"});
    t.kind = TermKind::spline_cubic;
    if (!positional.empty()) t.k = to_int(positional[0], text);
    if (auto v = named_value("k")) t.k = to_int(*v, text);
  } else if (head == "cyclic") {
    reject_extra(2, {"k", "period"});
    t.kind = TermKind::spline_cyclic;
    if (!positional.empty()) t.k = to_int(positional[0], text);
    if (positional.size() > 1) t.period = to_number(positional[1], text);
    if (auto v = named_value("k")) t.k = to_int(*v, text);
    if (auto v = named_value("period")) t.period = to_number(*v, text);
  } else if (head == "re") {
    reject_extra(0, {});
    t.kind = TermKind::random_intercept;
  } else {
    throw ModelError("unknown term '" + head + "' (expected intercept, linear, poly, spline, cyclic, re, stateN)");
  }
  return t;
}

}  // namespace

void validate_formula(const Formula& f) {
  std::set<std::optional<int>> intercepts;
  for (const auto& t : f) {
    if (t.state && *t.state < 1) throw ModelError("state index must be >= 1 in '" + t.to_string() + "'");
    switch (t.kind) {
      case TermKind::poly:
        if (t.degree < 1) throw ModelError("poly degree must be >= 1");
        break;
      case TermKind::spline_cubic:
        if (t.k < 3) throw ModelError("spline basis dimension k must be >= 3");
        break;
      case TermKind::spline_cyclic:
        if (t.k < 3) throw ModelError("spline basis dimension k must be >= 3");
        if (!(t.period > 0)) throw ModelError("cyclic spline needs period > 0");
        break;
      case TermKind::intercept:
        if (!intercepts.insert(t.state).second || (t.state && intercepts.count(std::nullopt)) ||
            (!t.state && intercepts.size() > 1)) {
          throw ModelError("a linear predictor has at most one intercept term");
        }
        break;
      default: break;
    }
  }
}

Formula parse_formula(std::string_view text) {
  const std::string s = trim(text);
  if (s.empty() || s == "." || s == "0") return {};
  Formula f;
  for (const auto& part : split_top_level(s, '+')) {
    if (part.empty()) throw ModelError("empty term in formula '" + s + "'");
    f.push_back(parse_term(part));
  }
  validate_formula(f);
  return f;
}

std::string format_formula(const Formula& f) {
  std::string out;
  for (const auto& t : f) out += (out.empty() ? "" : " + ") + t.to_string();
  return out;
}

Formula terms_for_state(const Formula& f, int state) {
  Formula out;
  for (const auto& t : f) {
    if (!t.state || *t.state == state) {
      Term u = t;
      u.state.reset();
      out.push_back(u);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// B-splines

namespace {

double cardinal_cubic(double u) {
  if (u < 0 || u >= 4) return 0.0;
  if (u < 1) return u * u * u / 6;
  if (u < 2) return (-3 * u * u * u + 12 * u * u - 12 * u + 4) / 6;
  if (u < 3) return (3 * u * u * u - 24 * u * u + 60 * u - 44) / 6;
  const double v = 4 - u;
  return v * v * v / 6;
}

// All B-spline basis values of the given degree at x, for knot vector t.
// `span` satisfies t[span] <= x <= t[span + 1] with t[span] < t[span + 1].
Eigen::VectorXd bspline_all(const std::vector<double>& t, int degree, double x, int span) {
  const int n_basis = static_cast<int>(t.size()) - degree - 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis);
  std::vector<double> N(degree + 1, 0.0), left(degree + 1), right(degree + 1);
  N[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - t[span + 1 - j];
    right[j] = t[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  for (int r = 0; r <= degree; ++r) {
    const int idx = span - degree + r;
    if (idx >= 0 && idx < n_basis) out[idx] = N[r];
  }
  return out;
}

int find_span(const std::vector<double>& t, int degree, int k, double x) {
  // valid spans are degree .. k-1 for a clamped knot vector of size k+degree+1
  int lo = degree, hi = k - 1;
  if (x >= t[hi]) {
    while (hi > degree && t[hi] == t[hi + 1]) --hi;
    return hi;
  }
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (t[mid] <= x) lo = mid;
    else hi = mid - 1;
  }
  return lo;
}

Eigen::MatrixXd second_difference(int k, bool cyclic) {
  const int rows = cyclic ? k : k - 2;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(rows, k);
  for (int r = 0; r < rows; ++r) {
    D(r, r % k) += 1.0;
    D(r, (r + 1) % k) += -2.0;
    D(r, (r + 2) % k) += 1.0;
  }
  return D;
}

}  // namespace

SplineBasis SplineBasis::build(std::span<const double> x, int k, bool cyclic, double period, bool center) {
  if (k < 3) throw ModelError("spline basis dimension k must be >= 3");
  if (x.empty()) throw ModelError("spline needs at least one covariate value");
  for (double v : x) {
    if (!std::isfinite(v)) throw ModelError("spline covariate contains non-finite values");
  }
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (static_cast<int>(u.size()) < k) {
    throw ModelError("spline needs at least k = " + std::to_string(k) + " distinct covariate values, got " +
                     std::to_string(u.size()));
  }

  SplineBasis b;
  b.k_ = k;
  b.cyclic_ = cyclic;
  b.lo_ = u.front();
  b.hi_ = u.back();
  if (cyclic) {
    if (!(period > 0)) throw ModelError("cyclic spline needs period > 0");
    b.period_ = period;
    for (int j = 0; j < k; ++j) b.knots_.push_back(period * j / k);
  } else {
    // cubic when k >= 4; k = 3 falls back to a quadratic (no interior knots)
    b.degree_ = std::min(3, k - 1);
    b.knots_.assign(static_cast<std::size_t>(b.degree_) + 1, b.lo_);
    const int n_interior = k - b.degree_ - 1;
    for (int j = 1; j <= n_interior; ++j) {
      const double pos = static_cast<double>(j) / (n_interior + 1) * static_cast<double>(u.size() - 1);
      const auto i = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - static_cast<double>(i);
      const double q = i + 1 < u.size() ? u[i] * (1 - frac) + u[i + 1] * frac : u[i];
      b.knots_.push_back(q);
    }
    for (int j = 0; j <= b.degree_; ++j) b.knots_.push_back(b.hi_);
  }

  b.raw_penalty_ = [&] {
    const Eigen::MatrixXd D = second_difference(k, cyclic);
    return Eigen::MatrixXd(D.transpose() * D);
  }();

  b.centered_ = center;
  Eigen::MatrixXd S = b.raw_penalty_;
  if (center) {
    b.means_ = b.evaluate_raw(x).colwise().mean();
    S = b.raw_penalty_.bottomRightCorner(k - 1, k - 1);
  }
  const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  S.diagonal().array() += 1e-4 * top;
  b.penalty_ = S;
  return b;
}

Eigen::RowVectorXd SplineBasis::cubic_values(double x) const {
  return bspline_all(knots_, degree_, x, find_span(knots_, degree_, k_, x)).transpose();
}

Eigen::RowVectorXd SplineBasis::cubic_derivatives(double x) const {
  const int p = degree_;
  const int span = find_span(knots_, p, k_, x);
  const Eigen::VectorXd lower = bspline_all(knots_, p - 1, x, span);  // k+1 functions
  Eigen::RowVectorXd d(k_);
  for (int j = 0; j < k_; ++j) {
    const double a = knots_[j + p] - knots_[j];
    const double c = knots_[j + p + 1] - knots_[j + 1];
    d[j] = p * ((a > 0 ? lower[j] / a : 0.0) - (c > 0 ? lower[j + 1] / c : 0.0));
  }
  return d;
}

Eigen::RowVectorXd SplineBasis::raw_row(double x, bool* extrapolated) const {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(k_);
  if (cyclic_) {
    double xm = std::fmod(x, period_);
    if (xm < 0) xm += period_;
    const double pos = xm / (period_ / k_);
    for (int j = 0; j < k_; ++j) {
      double s = std::fmod(pos - j, static_cast<double>(k_));
      if (s < 0) s += k_;
      double v = 0;
      for (double w = s; w < 4; w += k_) v += cardinal_cubic(w);
      row[j] = v;
    }
    return row;
  }
  if (x < lo_ || x > hi_) {
    if (extrapolated) *extrapolated = true;
    const double edge = x < lo_ ? lo_ : hi_;
    return cubic_values(edge) + (x - edge) * cubic_derivatives(edge);
  }
  return cubic_values(x);
}

Eigen::MatrixXd SplineBasis::evaluate_raw(std::span<const double> x, bool* extrapolated) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), k_);
  for (std::size_t i = 0; i < x.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = raw_row(x[i], extrapolated);
  return out;
}

Eigen::MatrixXd SplineBasis::evaluate(std::span<const double> x, bool* extrapolated) const {
  Eigen::MatrixXd raw = evaluate_raw(x, extrapolated);
  if (!centered_) return raw;
  raw.rowwise() -= means_;
  return raw.rightCols(k_ - 1);
}

SplineResult build_spline_basis(std::span<const double> x, int k, bool cyclic, std::optional<double> period,
                                bool center) {
  if (cyclic && !period) throw ModelError("cyclic spline needs a period");
  SplineBasis b = SplineBasis::build(x, k, cyclic, period.value_or(0.0), center);
  return {b.evaluate(x), b.penalty(), std::move(b)};
}

RandomInterceptResult build_random_intercept(const Column& factor) {
  if (!factor.categorical) {
    throw ModelError("random intercept covariate '" + factor.name + "' must be declared as a factor");
  }
  const auto M = static_cast<Eigen::Index>(factor.n_levels());
  if (M < 2) {
    throw ModelError("random intercept on '" + factor.name + "' needs at least 2 levels (got " +
                     std::to_string(M) + ")");
  }
  const auto n = static_cast<Eigen::Index>(factor.values.size());
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, M);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double v = factor.values[static_cast<std::size_t>(r)];
    if (is_missing(v)) throw ModelError("factor '" + factor.name + "' has missing values");
    Z(r, static_cast<Eigen::Index>(v)) = 1.0;
  }
  return {std::move(Z), Eigen::MatrixXd::Identity(M, M)};
}

// ---------------------------------------------------------------------------
// Term encoders

Eigen::Index TermEncoder::n_columns() const {
  switch (term.kind) {
    case TermKind::intercept: return 1;
    case TermKind::linear: return categorical ? static_cast<Eigen::Index>(levels.size()) - 1 : 1;
    case TermKind::poly: return term.degree;
    case TermKind::spline_cubic:
    case TermKind::spline_cyclic: return spline->n_columns();
    case TermKind::random_intercept: return static_cast<Eigen::Index>(levels.size());
  }
  return 0;
}

Eigen::MatrixXd TermEncoder::evaluate_values(std::span<const double> v, bool* extrapolated) const {
  const auto n = static_cast<Eigen::Index>(v.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n_columns());
  switch (term.kind) {
    case TermKind::intercept: out.setOnes(); break;
    case TermKind::linear:
      for (Eigen::Index r = 0; r < n; ++r) {
        const double x = v[static_cast<std::size_t>(r)];
        if (!categorical) out(r, 0) = x;
        else if (!is_missing(x) && x >= 1) out(r, static_cast<Eigen::Index>(x) - 1) = 1.0;
      }
      break;
    case TermKind::poly:
      for (Eigen::Index r = 0; r < n; ++r) {
        const double z = (v[static_cast<std::size_t>(r)] - poly_center) / poly_scale;
        double p = 1.0;
        for (int d = 0; d < term.degree; ++d) {
          p *= z;
          out(r, d) = p;
        }
      }
      break;
    case TermKind::spline_cubic:
    case TermKind::spline_cyclic: out = spline->evaluate(v, extrapolated); break;
    case TermKind::random_intercept:
      for (Eigen::Index r = 0; r < n; ++r) {
        const double x = v[static_cast<std::size_t>(r)];
        if (!is_missing(x)) out(r, static_cast<Eigen::Index>(x)) = 1.0;
      }
      break;
  }
  return out;
}

Eigen::MatrixXd TermEncoder::evaluate(const Column& col, bool* extrapolated) const {
  if (!categorical) {
    if (col.categorical) throw ModelError("covariate '" + col.name + "' must be numeric");
    return evaluate_values(col.values, extrapolated);
  }
  if (!col.categorical) throw ModelError("covariate '" + col.name + "' must be a factor");
  std::vector<double> codes(col.values.size(), kMissing);
  bool unseen = false;
  for (std::size_t r = 0; r < codes.size(); ++r) {
    if (is_missing(col.values[r])) continue;
    const auto& level = col.levels[static_cast<std::size_t>(col.values[r])];
    const auto it = std::find(levels.begin(), levels.end(), level);
    if (it == levels.end()) unseen = true;
    else codes[r] = static_cast<double>(it - levels.begin());
  }
  if (unseen) {
    if (term.kind == TermKind::linear) {
      throw ModelError("factor '" + col.name + "' has levels not present in the training data");
    }
    warn("factor '" + col.name + "' has levels not present in the training data; their random effect is 0");
  }
  return evaluate_values(codes, extrapolated);
}

// ---------------------------------------------------------------------------
// Assembly

DesignBundle assemble(const Formula& terms, const Dataset& d) {
  validate_formula(terms);
  DesignBundle b;
  const auto n = static_cast<Eigen::Index>(d.n_rows());

  b.has_intercept = std::any_of(terms.begin(), terms.end(), [](const Term& t) { return t.kind == TermKind::intercept; });
  for (const auto& t : terms) {
    if (t.state) throw ModelError("state-restricted term reached assembly: " + t.to_string());
    TermEncoder enc;
    enc.term = t;
    if (t.kind != TermKind::intercept) {
      if (!d.has_covariate(t.covariate)) throw ModelError("unknown covariate '" + t.covariate + "'");
      const Column& col = d.covariate(t.covariate);
      for (double v : col.values) {
        if (is_missing(v)) throw ModelError("covariate '" + t.covariate + "' has missing values");
      }
      enc.categorical = col.categorical;
      if (col.categorical) enc.levels = col.levels;
      switch (t.kind) {
        case TermKind::poly: {
          if (col.categorical) throw ModelError("poly() needs a numeric covariate: '" + t.covariate + "'");
          Eigen::Map<const Eigen::ArrayXd> x(col.values.data(), n);
          enc.poly_center = x.mean();
          const double sd = std::sqrt((x - enc.poly_center).square().mean());
          enc.poly_scale = sd > 0 ? sd : 1.0;
          break;
        }
        case TermKind::spline_cubic:
        case TermKind::spline_cyclic:
          if (col.categorical) throw ModelError("spline needs a numeric covariate: '" + t.covariate + "'");
          enc.spline = SplineBasis::build(col.values, t.k, t.kind == TermKind::spline_cyclic, t.period,
                                          b.has_intercept);
          break;
        case TermKind::random_intercept:
          if (!col.categorical) {
            throw ModelError("random intercept covariate '" + t.covariate + "' must be declared as a factor");
          }
          if (col.n_levels() < 2) {
            throw ModelError("random intercept on '" + t.covariate + "' needs at least 2 levels");
          }
          break;
        case TermKind::linear:
          if (col.categorical && col.n_levels() < 2) {
            throw ModelError("factor '" + t.covariate + "' needs at least 2 levels");
          }
          break;
        default: break;
      }
    }
    b.encoders.push_back(std::move(enc));
  }

  Eigen::Index p = 0, q = 0;
  for (const auto& e : b.encoders) (e.term.penalized() ? q : p) += e.n_columns();
  b.X.resize(n, p);
  b.R.resize(n, q);

  // intercept first, then the other fixed terms, then random blocks
  Eigen::Index col_x = 0, col_r = 0;
  auto place = [&](std::size_t i) {
    const auto& enc = b.encoders[i];
    const Eigen::MatrixXd block =
        enc.term.kind == TermKind::intercept ? Eigen::MatrixXd::Ones(n, 1) : enc.evaluate(d.covariate(enc.term.covariate));
    const auto w = block.cols();
    if (enc.term.penalized()) {
      b.R.middleCols(col_r, w) = block;
      b.column_map.push_back({i, true, col_r, w});
      PenaltyBlock pb;
      pb.label = enc.term.label();
      pb.begin = col_r;
      pb.size = w;
      pb.S = enc.term.kind == TermKind::random_intercept ? Eigen::MatrixXd::Identity(w, w) : enc.spline->penalty();
      b.penalties.push_back(std::move(pb));
      for (Eigen::Index j = 0; j < w; ++j) {
        if (enc.term.kind == TermKind::random_intercept) {
          b.random_names.push_back(enc.term.label() + "." + enc.levels[static_cast<std::size_t>(j)]);
        } else {
          b.random_names.push_back(enc.term.label() + "." + std::to_string(j + 1));
        }
      }
      col_r += w;
    } else {
      b.X.middleCols(col_x, w) = block;
      b.column_map.push_back({i, false, col_x, w});
      for (Eigen::Index j = 0; j < w; ++j) {
        std::string name = enc.term.label();
        if (enc.term.kind == TermKind::poly) name += std::to_string(j + 1);
        if (enc.term.kind == TermKind::linear && enc.categorical) name += enc.levels[static_cast<std::size_t>(j) + 1];
        b.fixed_names.push_back(name);
      }
      col_x += w;
    }
  };
  for (std::size_t i = 0; i < b.encoders.size(); ++i) {
    if (b.encoders[i].term.kind == TermKind::intercept) place(i);
  }
  for (std::size_t i = 0; i < b.encoders.size(); ++i) {
    if (b.encoders[i].term.kind != TermKind::intercept && !b.encoders[i].term.penalized()) place(i);
  }
  for (std::size_t i = 0; i < b.encoders.size(); ++i) {
    if (b.encoders[i].term.penalized()) place(i);
  }
  // keep column_map in declaration order
  std::sort(b.column_map.begin(), b.column_map.end(),
            [](const ColumnRange& a, const ColumnRange& c) { return a.term < c.term; });
  return b;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> design_rows(const DesignBundle& bundle, const Dataset& newdata) {
  const auto n = static_cast<Eigen::Index>(newdata.n_rows());
  Eigen::MatrixXd X(n, bundle.n_fixed()), R(n, bundle.n_random());
  bool extrapolated = false;
  for (const auto& cr : bundle.column_map) {
    const auto& enc = bundle.encoders[cr.term];
    Eigen::MatrixXd block;
    if (enc.term.kind == TermKind::intercept) {
      block = Eigen::MatrixXd::Ones(n, 1);
    } else {
      if (!newdata.has_covariate(enc.term.covariate)) {
        throw ModelError("new data is missing covariate '" + enc.term.covariate + "'");
      }
      block = enc.evaluate(newdata.covariate(enc.term.covariate), &extrapolated);
    }
    (cr.random ? R : X).middleCols(cr.begin, cr.size) = block;
  }
  if (extrapolated) warn("covariate values outside the training range; splines extrapolated linearly");
  return {std::move(X), std::move(R)};
}

void design_row(const DesignBundle& bundle, const std::function<double(const std::string&)>& value_of,
                Eigen::Ref<Eigen::RowVectorXd> x_row, Eigen::Ref<Eigen::RowVectorXd> r_row) {
  for (const auto& cr : bundle.column_map) {
    const auto& enc = bundle.encoders[cr.term];
    if (enc.term.kind == TermKind::intercept) {
      x_row(cr.begin) = 1.0;
      continue;
    }
    const double v = value_of(enc.term.covariate);
    const Eigen::MatrixXd block = enc.evaluate_values(std::span<const double>(&v, 1));
    (cr.random ? r_row : x_row).segment(cr.begin, cr.size) = block.row(0);
  }
}

}  // namespace mixhmm
