#ifndef MIXHMM_DATA_HPP
#define MIXHMM_DATA_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixhmm {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A named column of values. Missing cells are NaN. Categorical columns
/// store the 0-based level code as a double.
struct Column {
  std::string name;
  std::vector<double> values;
  bool categorical = false;
  std::vector<std::string> levels;

  std::size_t n_levels() const { return levels.size(); }
};

/// Contiguous block of rows belonging to one time series.
struct SeriesView {
  std::string label;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
};

/// Multi-series observation table. Rows of a series are contiguous and
/// kept in file order. Immutable once built; all mutating helpers return
/// a fresh copy.
class Dataset {
 public:
  Dataset() = default;

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_series() const { return series_.size(); }
  const std::vector<SeriesView>& series() const { return series_; }
  /// Series index of every row.
  const std::vector<int>& series_of_row() const { return series_of_row_; }
  /// 0-based position of every row inside its series.
  const std::vector<int>& time_index() const { return time_index_; }

  const std::vector<Column>& responses() const { return responses_; }
  const std::vector<Column>& covariates() const { return covariates_; }
  const Column& response(const std::string& name) const;
  const Column& covariate(const std::string& name) const;
  bool has_response(const std::string& name) const;
  bool has_covariate(const std::string& name) const;

  /// Known states, 1-based, 0 when unknown. Empty when the table has no
  /// "state" column.
  const std::vector<int>& known_state() const { return known_state_; }
  bool has_known_state() const { return !known_state_.empty(); }

  /// Builds a dataset from columns. `series_labels` has one label per
  /// row (empty means a single series). Throws on non-contiguous series or
  /// length mismatches.
  static Dataset from_columns(std::vector<std::string> series_labels,
                              std::vector<Column> responses,
                              std::vector<Column> covariates,
                              std::vector<int> known_state = {});

  Dataset with_covariates(std::vector<Column> covariates) const;
  Dataset with_responses(std::vector<Column> responses) const;
  Dataset with_known_state(std::vector<int> known_state) const;
  /// Per-row series labels (expanded from the series views).
  std::vector<std::string> row_labels() const;

 private:
  void validate_and_index(const std::vector<std::string>& labels);

  std::size_t n_rows_ = 0;
  std::vector<SeriesView> series_;
  std::vector<int> series_of_row_;
  std::vector<int> time_index_;
  std::vector<Column> responses_;
  std::vector<Column> covariates_;
  std::vector<int> known_state_;
};

struct CsvOptions {
  std::vector<std::string> responses;
  std::vector<std::string> covariates;
  /// Covariates read as categorical levels instead of numbers.
  std::vector<std::string> factors;
  /// When false, a missing response column is an error; simulation
  /// inputs pass true so that covariate-only tables load.
  bool allow_missing_responses = false;
};

/// Reads a UTF-8 CSV with a header row. Reserved columns: "ID" (series
/// label), "time" (checked for regular spacing, then ignored) and "state"
/// (known states). Empty cells and the literal "NA" are missing.
Dataset load_csv(const std::string& path, const CsvOptions& options);
Dataset parse_csv(const std::string& text, const CsvOptions& options,
                  const std::string& source = "<string>");

/// Writes ID (when more than one series or labels are non-default),
/// responses, covariates and the state column, with 17 significant digits.
void write_csv(const Dataset& d, const std::string& path);
std::string to_csv(const Dataset& d);

/// Replaces missing covariate cells by the last non-missing value of the
/// same series, or the next one when nothing precedes it.
Dataset fill_covariate_gaps(const Dataset& d);

/// Returns one view per series. Views partition the rows in order.
std::vector<SeriesView> split_series(const Dataset& d);

/// Groups row labels into contiguous series; throws when a label reappears
/// after another series started.
std::vector<SeriesView> group_contiguous(std::span<const std::string> labels);

std::string format_double(double v);

}  // namespace mixhmm

#endif  // MIXHMM_DATA_HPP
