#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace coxsub {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One broken dataset invariant. `code` is stable and machine-readable.
struct Violation {
  std::string code;
  std::optional<std::size_t> row;
  std::optional<std::size_t> column;
  std::string message;
};

/**
 * Right-censored survival data: covariates X (n x p, column-major), observed
 * times Y = min(T, C) and event indicators.
 *
 * Construction never throws on bad values; the violations are recorded and
 * reported by validate(). Numerical routines call require_valid() first.
 *
 * sort_index() orders records by time ascending. Ties put events before
 * censorings, then fall back to the original row index.
 */
class SurvivalDataset {
 public:
  SurvivalDataset() = default;
  SurvivalDataset(Matrix covariates, Vector time, std::vector<int> status,
                  std::vector<std::string> covariate_names = {});

  std::size_t n() const { return static_cast<std::size_t>(time_.size()); }
  std::size_t p() const { return static_cast<std::size_t>(covariates_.cols()); }

  const Matrix& covariates() const { return covariates_; }
  const Vector& time() const { return time_; }
  const std::vector<int>& status() const { return status_; }
  const std::vector<std::string>& covariate_names() const { return names_; }

  /// Permutation of 0..n-1 sorting records by time.
  const std::vector<std::size_t>& sort_index() const { return sort_index_; }
  /// Inverse of sort_index(): rank()[i] is the sorted position of record i.
  const std::vector<std::size_t>& rank() const { return rank_; }

  std::size_t event_count() const { return events_; }
  double censoring_rate() const;

  const std::vector<Violation>& violations() const { return violations_; }
  bool valid() const { return violations_.empty(); }
  /// Throws DataError summarizing the first violations if any exist.
  void require_valid() const;

 private:
  Matrix covariates_;
  Vector time_;
  std::vector<int> status_;
  std::vector<std::string> names_;
  std::vector<std::size_t> sort_index_;
  std::vector<std::size_t> rank_;
  std::size_t events_ = 0;
  std::vector<Violation> violations_;
};

/// Recomputes every invariant of `ds`. Empty result iff the dataset is usable.
std::vector<Violation> validate(const SurvivalDataset& ds);

/// Builds the time-sorted permutation used by SurvivalDataset.
std::vector<std::size_t> build_sort_index(const Vector& time, const std::vector<int>& status);

struct CsvSchema {
  std::string time_column = "time";
  std::string status_column = "status";
  std::vector<std::string> covariate_columns;
  char delimiter = ',';
  /// Without a header row, column names are 1-based positions ("1", "2", ...).
  bool has_header = true;

  /// Throws InvalidArgument on duplicate names or an empty covariate list.
  void check() const;
};

/// Reads a delimited file. Errors name the offending 1-based data row.
SurvivalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes `time,status,<covariates...>` with a header, 17 significant digits.
void write_csv(const SurvivalDataset& ds, const std::filesystem::path& path, char delimiter = ',');

}  // namespace coxsub
