#pragma once

#include "coxsub/dataset.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace coxsub {

enum class WeightKind { Unit, InverseProbability };

/**
 * Per-record weights of the (pseudo) partial likelihood.
 *
 * Unit weights are implicit (all ones). Inverse-probability weights hold
 * w_i = 1 / (n * pi_i) and are indexed like the subset they accompany, or
 * like the dataset when no subset is given.
 */
class Weights {
 public:
  static Weights unit() { return Weights(WeightKind::Unit, {}); }
  static Weights inverse_probability(std::vector<double> values);

  WeightKind kind() const { return kind_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t k) const { return kind_ == WeightKind::Unit ? 1.0 : values_[k]; }

 private:
  Weights(WeightKind kind, std::vector<double> values) : kind_(kind), values_(std::move(values)) {}
  WeightKind kind_;
  std::vector<double> values_;
};

using IndexSpan = std::span<const std::size_t>;

/**
 * A (multi)set of dataset records laid out in time order, row-major, with
 * their weights. Every risk-set computation is one reverse sweep over it.
 *
 * `n_full` is the size of the parent dataset and `m` the number of entries;
 * moment sums are normalized by 1/m, and the log term of the partial
 * likelihood uses n_full * S0 so that subsample criteria stay on the same
 * scale as the full-data one.
 */
class SortedSample {
 public:
  static SortedSample build(const SurvivalDataset& ds, const Weights& weights = Weights::unit(),
                            std::optional<IndexSpan> subset = std::nullopt);

  std::size_t n_full() const { return n_full_; }
  std::size_t m() const { return time_.size(); }
  std::size_t p() const { return p_; }

  const double* row(std::size_t k) const { return x_.data() + k * p_; }
  double time(std::size_t k) const { return time_[k]; }
  bool event(std::size_t k) const { return status_[k] != 0; }
  double weight(std::size_t k) const { return weight_[k]; }
  /// Dataset record behind sorted entry k.
  std::size_t record(std::size_t k) const { return record_[k]; }
  /// Exclusive end of each group of equal times, ascending.
  const std::vector<std::size_t>& group_end() const { return group_end_; }
  std::size_t event_count() const { return events_; }

 private:
  std::size_t n_full_ = 0;
  std::size_t p_ = 0;
  std::vector<double> x_;
  std::vector<double> time_;
  std::vector<double> weight_;
  std::vector<unsigned char> status_;
  std::vector<std::size_t> record_;
  std::vector<std::size_t> group_end_;
  std::size_t events_ = 0;
};

/**
 * Weighted risk-set moments at each distinct event time t_(1) < ... < t_(d):
 *   S0 = (1/m) sum w_j I(Y_j >= t) exp(b'X_j),  S1 likewise times X_j,
 *   S2 likewise times X_j X_j'.
 * Stored values are scaled by exp(-shift), where shift = max_j b'X_j; the
 * scale cancels in every ratio. Use the *_value accessors for true values.
 * The horizon is the largest event time.
 */
struct RiskSetSums {
  std::vector<double> event_times;
  Vector s0;
  Matrix s1;                 // d x p
  std::vector<Matrix> s2;    // d matrices, p x p
  double shift = 0.0;
  double horizon = 0.0;

  double s0_value(std::size_t j) const;
  Vector s1_value(std::size_t j) const;
  Matrix s2_value(std::size_t j) const;
  /// S1/S0 at event time j.
  Vector xbar(std::size_t j) const;
  /// S2/S0 - (S1/S0)(S1/S0)' at event time j.
  Matrix curvature(std::size_t j) const;
};

enum class FitRole { FullMPL, Pilot, TwoStep };

const char* to_string(FitRole role);

struct SolverOptions {
  double tol_score = 1e-8;   // on the sup-norm of the score
  double tol_step = 1e-10;   // on the sup-norm of the Newton step
  int max_iter = 50;
  int step_halving_max = 20;
  std::optional<Vector> init;  // zeros when empty

  void check() const;
};

struct CoxFit {
  Vector beta;
  FitRole role = FitRole::FullMPL;
  bool converged = false;
  int iterations = 0;
  double final_score_norm = 0.0;
  double neg_logpl = 0.0;
  Matrix hessian;
};

/// Value, gradient and Hessian of the weighted negative log partial likelihood.
struct Evaluation {
  double value = 0.0;
  Vector score;
  Matrix hessian;
};

enum class EvalLevel { Value, Score, Hessian };

/// One reverse sweep over `sample` at `beta`. Throws NumericalError when the
/// linear predictor is not finite or a risk-set sum underflows.
Evaluation evaluate(const SortedSample& sample, const Vector& beta, EvalLevel level = EvalLevel::Hessian);

RiskSetSums risk_set_sums(const SurvivalDataset& ds, const Vector& beta,
                          const Weights& weights = Weights::unit(),
                          std::optional<IndexSpan> subset = std::nullopt);

double neg_log_partial_likelihood(const SurvivalDataset& ds, const Vector& beta,
                                  const Weights& weights = Weights::unit(),
                                  std::optional<IndexSpan> subset = std::nullopt);

Vector score(const SurvivalDataset& ds, const Vector& beta, const Weights& weights = Weights::unit(),
             std::optional<IndexSpan> subset = std::nullopt);

Matrix hessian(const SurvivalDataset& ds, const Vector& beta, const Weights& weights = Weights::unit(),
               std::optional<IndexSpan> subset = std::nullopt);

/**
 * Newton's method with step halving on the negative log partial likelihood.
 *
 * Stops when the score sup-norm is below tol_score or the step sup-norm is
 * below tol_step. A step that increases the criterion is halved up to
 * step_halving_max times. A non-positive-definite Hessian raises
 * NumericalError with its condition number; running out of iterations
 * returns the last iterate with converged == false.
 */
CoxFit newton_solve(const SortedSample& sample, const SolverOptions& opts = {},
                    FitRole role = FitRole::FullMPL);

CoxFit newton_solve(const SurvivalDataset& ds, const Weights& weights = Weights::unit(),
                    std::optional<IndexSpan> subset = std::nullopt, const SolverOptions& opts = {},
                    FitRole role = FitRole::FullMPL);

/// Solves H x = b for symmetric positive-definite H; NumericalError otherwise.
Matrix spd_solve(const Matrix& h, const Matrix& b, const char* what);

/// Ratio of extreme eigenvalues of a symmetric matrix (inf when singular).
double condition_number(const Matrix& h);

}  // namespace coxsub
