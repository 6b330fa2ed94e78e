#include "coxsub/dataset.hpp"

#include "coxsub/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace coxsub {

std::vector<std::size_t> build_sort_index(const Vector& time, const std::vector<int>& status) {
  const auto n = static_cast<std::size_t>(time.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // NaN times sort last so the comparator stays a strict weak order.
  auto key_less = [&](std::size_t a, std::size_t b) {
    const double ta = time[static_cast<Eigen::Index>(a)];
    const double tb = time[static_cast<Eigen::Index>(b)];
    const bool na = std::isnan(ta), nb = std::isnan(tb);
    if (na != nb) return nb;
    if (!na && ta != tb) return ta < tb;
    const bool ea = status[a] == 1, eb = status[b] == 1;
    if (ea != eb) return ea;
    return a < b;
  };
  std::sort(order.begin(), order.end(), key_less);
  return order;
}

SurvivalDataset::SurvivalDataset(Matrix covariates, Vector time, std::vector<int> status,
                                 std::vector<std::string> covariate_names)
    : covariates_(std::move(covariates)),
      time_(std::move(time)),
      status_(std::move(status)),
      names_(std::move(covariate_names)) {
  if (static_cast<std::size_t>(covariates_.rows()) != n() || status_.size() != n()) {
    throw InvalidArgument("covariates, time and status must have the same number of rows");
  }
  if (names_.empty()) {
    for (std::size_t j = 0; j < p(); ++j) names_.push_back("x" + std::to_string(j + 1));
  } else if (names_.size() != p()) {
    throw InvalidArgument("covariate_names must have one entry per column");
  }
  sort_index_ = build_sort_index(time_, status_);
  rank_.resize(n());
  for (std::size_t k = 0; k < n(); ++k) rank_[sort_index_[k]] = k;
  events_ = static_cast<std::size_t>(std::count(status_.begin(), status_.end(), 1));
  violations_ = validate(*this);
}

double SurvivalDataset::censoring_rate() const {
  if (n() == 0) return 0.0;
  return 1.0 - static_cast<double>(events_) / static_cast<double>(n());
}

void SurvivalDataset::require_valid() const {
  if (violations_.empty()) return;
  std::ostringstream msg;
  msg << "invalid survival dataset: ";
  const std::size_t shown = std::min<std::size_t>(violations_.size(), 3);
  for (std::size_t k = 0; k < shown; ++k) {
    if (k) msg << "; ";
    msg << violations_[k].message;
  }
  if (violations_.size() > shown) msg << " (+" << violations_.size() - shown << " more)";
  throw DataError(msg.str());
}

std::vector<Violation> validate(const SurvivalDataset& ds) {
  std::vector<Violation> out;
  const std::size_t n = ds.n();
  if (n == 0) {
    out.push_back({"empty", std::nullopt, std::nullopt, "dataset has no records"});
    return out;
  }
  if (ds.p() == 0) {
    out.push_back({"no_covariates", std::nullopt, std::nullopt, "dataset has no covariate columns"});
  }
  std::size_t events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = ds.time()[static_cast<Eigen::Index>(i)];
    if (!std::isfinite(t)) {
      out.push_back({"nonfinite_time", i, std::nullopt,
                     "time at record " + std::to_string(i) + " is not finite"});
    } else if (t < 0.0) {
      out.push_back({"negative_time", i, std::nullopt,
                     "time at record " + std::to_string(i) + " is negative"});
    }
    const int s = ds.status()[i];
    if (s != 0 && s != 1) {
      out.push_back({"bad_status", i, std::nullopt,
                     "status at record " + std::to_string(i) + " is " + std::to_string(s) +
                         ", expected 0 or 1"});
    }
    if (s == 1) ++events;
    for (std::size_t j = 0; j < ds.p(); ++j) {
      if (!std::isfinite(ds.covariates()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))) {
        out.push_back({"nonfinite_covariate", i, j,
                       "covariate (" + std::to_string(i) + "," + std::to_string(j) + ") is not finite"});
      }
    }
  }
  if (events == 0) {
    out.push_back({"no_events", std::nullopt, std::nullopt, "no events: every record is censored"});
  }

  const auto& order = ds.sort_index();
  bool permutation_ok = order.size() == n;
  if (permutation_ok) {
    std::vector<char> seen(n, 0);
    for (auto idx : order) {
      if (idx >= n || seen[idx]) {
        permutation_ok = false;
        break;
      }
      seen[idx] = 1;
    }
  }
  if (!permutation_ok) {
    out.push_back({"bad_sort_index", std::nullopt, std::nullopt, "sort_index is not a permutation"});
  } else {
    for (std::size_t k = 1; k < n; ++k) {
      const double a = ds.time()[static_cast<Eigen::Index>(order[k - 1])];
      const double b = ds.time()[static_cast<Eigen::Index>(order[k])];
      if (std::isfinite(a) && std::isfinite(b) && b < a) {
        out.push_back({"unsorted_index", k, std::nullopt, "sort_index does not order times"});
        break;
      }
    }
  }
  return out;
}

}  // namespace coxsub
