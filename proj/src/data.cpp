#include "mixhmm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mixhmm/log.hpp"

namespace mixhmm {

// ---------------------------------------------------------------------------
// Dataset

namespace {

const Column* find_column(const std::vector<Column>& cols, const std::string& name) {
  for (const auto& c : cols) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

}  // namespace

const Column& Dataset::response(const std::string& name) const {
  if (const auto* c = find_column(responses_, name)) return *c;
  throw std::out_of_range("no response column '" + name + "'");
}

const Column& Dataset::covariate(const std::string& name) const {
  if (const auto* c = find_column(covariates_, name)) return *c;
  throw std::out_of_range("no covariate column '" + name + "'");
}

bool Dataset::has_response(const std::string& name) const {
  return find_column(responses_, name) != nullptr;
}

bool Dataset::has_covariate(const std::string& name) const {
  return find_column(covariates_, name) != nullptr;
}

std::vector<SeriesView> group_contiguous(std::span<const std::string> labels) {
  std::vector<SeriesView> out;
  std::set<std::string> closed;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!out.empty() && out.back().label == labels[i]) {
      out.back().end = i + 1;
      continue;
    }
    if (!out.empty()) closed.insert(out.back().label);
    if (closed.count(labels[i]) != 0) {
      throw LoadError("series '" + labels[i] + "' is not contiguous (row " + std::to_string(i + 1) +
                      "); rows of each ID must be grouped together");
    }
    out.push_back({labels[i], i, i + 1});
  }
  return out;
}

void Dataset::validate_and_index(const std::vector<std::string>& labels) {
  if (labels.empty()) {
    series_.clear();
    if (n_rows_ > 0) series_.push_back({"1", 0, n_rows_});
  } else {
    if (labels.size() != n_rows_) throw LoadError("series label count does not match row count");
    series_ = group_contiguous(labels);
  }
  series_of_row_.assign(n_rows_, 0);
  time_index_.assign(n_rows_, 0);
  for (std::size_t s = 0; s < series_.size(); ++s) {
    for (std::size_t r = series_[s].begin; r < series_[s].end; ++r) {
      series_of_row_[r] = static_cast<int>(s);
      time_index_[r] = static_cast<int>(r - series_[s].begin);
    }
  }
  for (const auto* cols : {&responses_, &covariates_}) {
    for (const auto& c : *cols) {
      if (c.values.size() != n_rows_) {
        throw LoadError("column '" + c.name + "' has " + std::to_string(c.values.size()) +
                        " rows, expected " + std::to_string(n_rows_));
      }
    }
  }
  if (!known_state_.empty()) {
    if (known_state_.size() != n_rows_) throw LoadError("state column length mismatch");
    for (std::size_t r = 0; r < n_rows_; ++r) {
      if (known_state_[r] < 0) {
        throw LoadError("state column must hold positive integers or NA (row " +
                        std::to_string(r + 1) + ")");
      }
    }
  }
}

Dataset Dataset::from_columns(std::vector<std::string> series_labels, std::vector<Column> responses,
                              std::vector<Column> covariates, std::vector<int> known_state) {
  Dataset d;
  std::size_t n = series_labels.size();
  if (n == 0) {
    if (!responses.empty()) n = responses.front().values.size();
    else if (!covariates.empty()) n = covariates.front().values.size();
    else n = known_state.size();
  }
  d.n_rows_ = n;
  d.responses_ = std::move(responses);
  d.covariates_ = std::move(covariates);
  d.known_state_ = std::move(known_state);
  d.validate_and_index(series_labels);
  return d;
}

std::vector<std::string> Dataset::row_labels() const {
  std::vector<std::string> labels(n_rows_);
  for (const auto& s : series_) {
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(s.begin),
              labels.begin() + static_cast<std::ptrdiff_t>(s.end), s.label);
  }
  return labels;
}

Dataset Dataset::with_covariates(std::vector<Column> covariates) const {
  return from_columns(row_labels(), responses_, std::move(covariates), known_state_);
}

Dataset Dataset::with_responses(std::vector<Column> responses) const {
  return from_columns(row_labels(), std::move(responses), covariates_, known_state_);
}

Dataset Dataset::with_known_state(std::vector<int> known_state) const {
  return from_columns(row_labels(), responses_, covariates_, std::move(known_state));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw LoadError("unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool is_na(const std::string& cell) { return cell.empty() || cell == "NA"; }

std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && cell.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

// Numeric time, or "YYYY-MM-DD[ T]HH:MM[:SS]" interpreted as UTC seconds.
std::optional<double> parse_time(const std::string& cell) {
  if (auto v = parse_number(cell)) return v;
  std::tm tm{};
  for (const char* fmt : {"%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M",
                          "%Y-%m-%dT%H:%M", "%Y-%m-%d"}) {
    std::istringstream in(cell);
    tm = {};
    in >> std::get_time(&tm, fmt);
    if (!in.fail()) return static_cast<double>(timegm(&tm));
  }
  return std::nullopt;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                         const std::string& source) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw LoadError(source + ": missing required column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

void check_time_spacing(const Dataset& d, const std::vector<double>& times, const std::string& source) {
  for (const auto& s : d.series()) {
    if (s.size() < 3) continue;
    const double step = times[s.begin + 1] - times[s.begin];
    for (std::size_t r = s.begin + 1; r < s.end; ++r) {
      const double dt = times[r] - times[r - 1];
      if (std::abs(dt - step) > 1e-9 * std::max(1.0, std::abs(step))) {
        warn(source + ": time intervals are not regular in series '" + s.label +
             "'; the time column is ignored");
        return;
      }
    }
  }
}

}  // namespace

Dataset parse_csv(const std::string& text, const CsvOptions& options, const std::string& source) {
  auto rows = split_csv(text);
  if (rows.empty()) throw LoadError(source + ": empty file (a header row is required)");
  std::vector<std::string> header;
  for (auto& h : rows.front()) header.push_back(trim(h));
  if (!header.empty() && header.front().rfind("\xEF\xBB\xBF", 0) == 0) header.front().erase(0, 3);
  const std::size_t n = rows.size() - 1;
  if (n == 0) throw LoadError(source + ": no data rows");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      throw LoadError(source + ": line " + std::to_string(r + 1) + " has " +
                      std::to_string(rows[r].size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
  }
  auto cell = [&](std::size_t r, std::size_t c) { return trim(rows[r + 1][c]); };

  std::vector<std::string> labels;
  if (auto it = std::find(header.begin(), header.end(), "ID"); it != header.end()) {
    const auto c = static_cast<std::size_t>(it - header.begin());
    labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto v = cell(r, c);
      if (is_na(v)) throw LoadError(source + ": missing ID at line " + std::to_string(r + 2));
      labels.push_back(std::move(v));
    }
  }

  auto read_numeric = [&](const std::string& name, bool allow_missing_column) -> std::optional<Column> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (allow_missing_column) return std::nullopt;
      throw LoadError(source + ": missing required column '" + name + "'");
    }
    const auto c = static_cast<std::size_t>(it - header.begin());
    Column col{name, std::vector<double>(n, kMissing), false, {}};
    for (std::size_t r = 0; r < n; ++r) {
      const auto v = cell(r, c);
      if (is_na(v)) continue;
      const auto x = parse_number(v);
      if (!x) {
        throw LoadError(source + ": non-numeric value '" + v + "' in column '" + name + "' at line " +
                        std::to_string(r + 2));
      }
      col.values[r] = *x;
    }
    return col;
  };

  std::vector<Column> responses;
  for (const auto& name : options.responses) {
    if (auto col = read_numeric(name, options.allow_missing_responses)) responses.push_back(std::move(*col));
  }

  std::vector<Column> covariates;
  for (const auto& name : options.covariates) {
    const bool is_factor =
        std::find(options.factors.begin(), options.factors.end(), name) != options.factors.end();
    if (!is_factor) {
      covariates.push_back(*read_numeric(name, false));
      continue;
    }
    const auto c = column_index(header, name, source);
    Column col{name, std::vector<double>(n, kMissing), true, {}};
    std::vector<std::string> raw(n);
    std::set<std::string> levels;
    for (std::size_t r = 0; r < n; ++r) {
      raw[r] = cell(r, c);
      if (!is_na(raw[r])) levels.insert(raw[r]);
    }
    // Numeric-looking levels sort numerically, otherwise lexicographically.
    col.levels.assign(levels.begin(), levels.end());
    const bool numeric = std::all_of(col.levels.begin(), col.levels.end(),
                                     [](const std::string& s) { return parse_number(s).has_value(); });
    if (numeric) {
      std::sort(col.levels.begin(), col.levels.end(), [](const std::string& a, const std::string& b) {
        return *parse_number(a) < *parse_number(b);
      });
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (is_na(raw[r])) continue;
      const auto pos = std::find(col.levels.begin(), col.levels.end(), raw[r]) - col.levels.begin();
      col.values[r] = static_cast<double>(pos);
    }
    covariates.push_back(std::move(col));
  }

  std::vector<int> known;
  if (auto it = std::find(header.begin(), header.end(), "state"); it != header.end()) {
    const auto c = static_cast<std::size_t>(it - header.begin());
    known.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto v = cell(r, c);
      if (is_na(v)) continue;
      const auto x = parse_number(v);
      if (!x || *x < 1 || std::floor(*x) != *x) {
        throw LoadError(source + ": state column must hold positive integers or NA (line " +
                        std::to_string(r + 2) + ")");
      }
      known[r] = static_cast<int>(*x);
    }
  }

  Dataset d = Dataset::from_columns(std::move(labels), std::move(responses), std::move(covariates),
                                    std::move(known));

  if (auto it = std::find(header.begin(), header.end(), "time"); it != header.end()) {
    const auto c = static_cast<std::size_t>(it - header.begin());
    std::vector<double> times(n, kMissing);
    bool ok = true;
    for (std::size_t r = 0; r < n && ok; ++r) {
      const auto t = parse_time(cell(r, c));
      if (t) times[r] = *t;
      else ok = false;
    }
    if (ok) check_time_spacing(d, times, source);
    else warn(source + ": time column could not be parsed; it is ignored");
  }
  return d;
}

Dataset load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), options, path);
}

std::string format_double(double v) {
  if (is_missing(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char out[64];
  std::snprintf(out, sizeof out, "%.17g", v);
  return out;
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

std::string to_csv(const Dataset& d) {
  std::ostringstream out;
  std::vector<std::string> header{"ID"};
  for (const auto& c : d.responses()) header.push_back(c.name);
  for (const auto& c : d.covariates()) header.push_back(c.name);
  if (d.has_known_state()) header.push_back("state");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << quote_if_needed(header[i]);
  out << '\n';
  const auto labels = d.row_labels();
  for (std::size_t r = 0; r < d.n_rows(); ++r) {
    out << quote_if_needed(labels[r]);
    for (const auto& c : d.responses()) out << ',' << format_double(c.values[r]);
    for (const auto& c : d.covariates()) {
      out << ',';
      if (is_missing(c.values[r])) out << "NA";
      else if (c.categorical) out << quote_if_needed(c.levels[static_cast<std::size_t>(c.values[r])]);
      else out << format_double(c.values[r]);
    }
    if (d.has_known_state()) {
      out << ',';
      if (d.known_state()[r] > 0) out << d.known_state()[r];
      else out << "NA";
    }
    out << '\n';
  }
  return out.str();
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write '" + path + "'");
  out << to_csv(d);
}

Dataset fill_covariate_gaps(const Dataset& d) {
  std::vector<Column> covs = d.covariates();
  for (auto& col : covs) {
    for (const auto& s : d.series()) {
      std::optional<double> last;
      std::vector<std::size_t> pending;
      for (std::size_t r = s.begin; r < s.end; ++r) {
        if (!is_missing(col.values[r])) {
          for (auto p : pending) col.values[p] = col.values[r];
          pending.clear();
          last = col.values[r];
        } else if (last) {
          col.values[r] = *last;
        } else {
          pending.push_back(r);
        }
      }
      if (!pending.empty()) {
        throw LoadError("covariate '" + col.name + "' is entirely missing in series '" + s.label + "'");
      }
    }
  }
  return d.with_covariates(std::move(covs));
}

std::vector<SeriesView> split_series(const Dataset& d) { return d.series(); }

}  // namespace mixhmm
