#pragma once

// Brute-force reference implementations used by the tests. Everything here is
// written directly from the definitions, O(n^2) where that is simplest, and
// shares no code with the library beyond the dataset container.

#include "coxsub/dataset.hpp"
#include "coxsub/random.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <unistd.h>

namespace oracle {

using coxsub::Matrix;
using coxsub::Rng;
using coxsub::SurvivalDataset;
using coxsub::Vector;

/// Small random dataset. With tie_grid > 0 times are rounded to that grid so
/// that ties occur.
inline SurvivalDataset random_dataset(Rng& rng, std::size_t n, std::size_t p, double tie_grid = 0.0,
                                      double censor_prob = 0.3) {
  boost::random::normal_distribution<double> z(0.0, 1.0);
  boost::random::uniform_real_distribution<double> u(0.0, 1.0);
  boost::random::exponential_distribution<double> e(1.0);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Vector y(static_cast<Eigen::Index>(n));
  std::vector<int> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z(rng) * 0.7;
    double t = e(rng) * std::exp(-0.3 * x.row(static_cast<Eigen::Index>(i)).sum());
    if (tie_grid > 0.0) t = std::ceil(t / tie_grid) * tie_grid;
    y(static_cast<Eigen::Index>(i)) = t;
    d[i] = u(rng) < censor_prob ? 0 : 1;
  }
  d[0] = 1;  // at least one event
  return SurvivalDataset(std::move(x), std::move(y), std::move(d));
}

inline Vector random_beta(Rng& rng, std::size_t p, double bound = 1.0) {
  boost::random::uniform_real_distribution<double> u(-bound, bound);
  Vector b(static_cast<Eigen::Index>(p));
  for (auto& v : b) v = u(rng);
  return b;
}

/// Entries of a (sub)sample: record index and weight.
struct Entry {
  std::size_t record;
  double weight;
};

inline std::vector<Entry> full_entries(const SurvivalDataset& ds) {
  std::vector<Entry> out;
  for (std::size_t i = 0; i < ds.n(); ++i) out.push_back({i, 1.0});
  return out;
}

inline double eta(const SurvivalDataset& ds, std::size_t i, const Vector& beta) {
  return ds.covariates().row(static_cast<Eigen::Index>(i)).dot(beta);
}

inline double time_of(const SurvivalDataset& ds, std::size_t i) { return ds.time()(static_cast<Eigen::Index>(i)); }

/// (1/m) sum over entries with Y >= t of w exp(b'X) X^{(k)}.
struct Moments {
  double s0 = 0.0;
  Vector s1;
  Matrix s2;
};

inline Moments moments(const SurvivalDataset& ds, const std::vector<Entry>& entries, const Vector& beta, double t) {
  const auto p = static_cast<Eigen::Index>(ds.p());
  Moments m{0.0, Vector::Zero(p), Matrix::Zero(p, p)};
  const double scale = 1.0 / static_cast<double>(entries.size());
  for (const auto& e : entries) {
    if (time_of(ds, e.record) < t) continue;
    const Vector x = ds.covariates().row(static_cast<Eigen::Index>(e.record)).transpose();
    const double w = e.weight * std::exp(eta(ds, e.record, beta)) * scale;
    m.s0 += w;
    m.s1 += w * x;
    m.s2 += w * x * x.transpose();
  }
  return m;
}

/// -(1/m) sum_events w_i [b'X_i - log(n S0(Y_i))].
inline double neg_loglik(const SurvivalDataset& ds, const std::vector<Entry>& entries, const Vector& beta) {
  const double n = static_cast<double>(ds.n());
  double total = 0.0;
  for (const auto& e : entries) {
    if (!ds.status()[e.record]) continue;
    const Moments m = moments(ds, entries, beta, time_of(ds, e.record));
    total += e.weight * (eta(ds, e.record, beta) - std::log(n * m.s0));
  }
  return -total / static_cast<double>(entries.size());
}

inline Vector score(const SurvivalDataset& ds, const std::vector<Entry>& entries, const Vector& beta) {
  Vector g = Vector::Zero(static_cast<Eigen::Index>(ds.p()));
  for (const auto& e : entries) {
    if (!ds.status()[e.record]) continue;
    const Moments m = moments(ds, entries, beta, time_of(ds, e.record));
    const Vector x = ds.covariates().row(static_cast<Eigen::Index>(e.record)).transpose();
    g += e.weight * (x - m.s1 / m.s0);
  }
  return -g / static_cast<double>(entries.size());
}

inline Matrix hessian(const SurvivalDataset& ds, const std::vector<Entry>& entries, const Vector& beta) {
  const auto p = static_cast<Eigen::Index>(ds.p());
  Matrix h = Matrix::Zero(p, p);
  for (const auto& e : entries) {
    if (!ds.status()[e.record]) continue;
    const Moments m = moments(ds, entries, beta, time_of(ds, e.record));
    const Vector xbar = m.s1 / m.s0;
    h += e.weight * (m.s2 / m.s0 - xbar * xbar.transpose());
  }
  return h / static_cast<double>(entries.size());
}

/// Central differences of f at x.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector a = x, b = x;
    a(j) += h;
    b(j) -= h;
    g(j) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Matrix jac(x.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector a = x, b = x;
    a(j) += h;
    b(j) -= h;
    jac.col(j) = (f(a) - f(b)) / (2.0 * h);
  }
  return jac;
}

/// max |a - b| / max |b|: relative error measured against the reference.
inline double rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

struct StepFunction {
  std::vector<double> times;
  std::vector<double> values;  // cumulative value at each time
};

/// Nelson-Aalen: at each distinct event time, events / number at risk.
inline StepFunction nelson_aalen(const SurvivalDataset& ds) {
  std::vector<double> event_times;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (ds.status()[i]) event_times.push_back(time_of(ds, i));
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());
  StepFunction out;
  double acc = 0.0;
  for (double t : event_times) {
    double events = 0.0, at_risk = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (time_of(ds, i) >= t) at_risk += 1.0;
      if (time_of(ds, i) == t && ds.status()[i]) events += 1.0;
    }
    acc += events / at_risk;
    out.times.push_back(t);
    out.values.push_back(acc);
  }
  return out;
}

/// Breslow jumps written out from the definition: sum of event weights at t
/// over sum_{Y_j >= t} w_j exp(b'X_j), entries as given.
inline StepFunction breslow(const SurvivalDataset& ds, const std::vector<Entry>& entries, const Vector& beta) {
  std::vector<double> event_times;
  for (const auto& e : entries)
    if (ds.status()[e.record]) event_times.push_back(time_of(ds, e.record));
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());
  StepFunction out;
  double acc = 0.0;
  for (double t : event_times) {
    double num = 0.0, den = 0.0;
    for (const auto& e : entries) {
      if (time_of(ds, e.record) >= t) den += e.weight * std::exp(eta(ds, e.record, beta));
      if (time_of(ds, e.record) == t && ds.status()[e.record]) num += e.weight;
    }
    acc += num / den;
    out.times.push_back(t);
    out.values.push_back(acc);
  }
  return out;
}

/// Integral of {X_i - Xbar(t)} dM_i(t) with Xbar and Lambda computed from the
/// full data at beta, summing over the jumps directly.
inline Vector full_residual(const SurvivalDataset& ds, std::size_t i, const Vector& beta) {
  const auto entries = full_entries(ds);
  const StepFunction lam = breslow(ds, entries, beta);
  const Vector x = ds.covariates().row(static_cast<Eigen::Index>(i)).transpose();
  const double yi = time_of(ds, i);
  auto xbar = [&](double t) {
    const Moments m = moments(ds, entries, beta, t);
    return Vector(m.s1 / m.s0);
  };
  Vector r = Vector::Zero(x.size());
  if (ds.status()[i]) r += x - xbar(yi);
  double prev = 0.0;
  for (std::size_t k = 0; k < lam.times.size(); ++k) {
    const double jump = lam.values[k] - prev;
    prev = lam.values[k];
    if (lam.times[k] > yi) break;
    r -= (x - xbar(lam.times[k])) * std::exp(eta(ds, i, beta)) * jump;
  }
  return r;
}

/// Kolmogorov distribution tail P(K > lambda).
inline double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// One-sample KS p-value of `sample` against the continuous CDF `cdf`
/// (asymptotic distribution with the Stephens small-sample correction).
inline double ks_pvalue(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d);
}

/// Pearson chi-square goodness-of-fit p-value.
inline double chi_square_pvalue(const std::vector<double>& observed, const std::vector<double>& expected) {
  double stat = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    stat += (observed[k] - expected[k]) * (observed[k] - expected[k]) / expected[k];
  }
  const double df = static_cast<double>(observed.size() - 1);
  return boost::math::gamma_q(df / 2.0, stat / 2.0);
}

/// Flat Dirichlet(1, ..., 1) draw.
inline std::vector<double> dirichlet(Rng& rng, std::size_t n) {
  boost::random::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = e(rng);
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= s;
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("coxsub-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
