#pragma once

#include "coxsub/partial_likelihood.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace coxsub {

enum class HazardSource { FullData, PilotUniform, TrueSimulated };

const char* to_string(HazardSource source);

/// Right-continuous step function: Lambda(t) = sum of jumps at jump_times <= t.
struct CumulativeHazard {
  std::vector<double> jump_times;  // ascending, distinct
  std::vector<double> jumps;       // positive increments
  std::vector<double> cumulative;  // running sums of jumps
  HazardSource source = HazardSource::FullData;

  double operator()(double t) const;
  std::size_t size() const { return jump_times.size(); }
};

/// Writes `time,cumhaz` rows at every jump.
void write_csv(const CumulativeHazard& hazard, const std::filesystem::path& path);

/// Breslow estimator over a sorted sample: at each event time, the summed
/// event weight divided by the at-risk sum of w exp(b'X).
CumulativeHazard breslow_from_sample(const SortedSample& sample, const Vector& beta, HazardSource source);

CumulativeHazard breslow_cumhaz(const SurvivalDataset& ds, const Vector& beta);

/// Breslow estimator from pilot records only. Repeated indices count
/// repeatedly. Throws InvalidArgument when the pilot holds no event.
CumulativeHazard pilot_breslow(const SurvivalDataset& ds, IndexSpan pilot_indices, const Vector& beta);

/// Lambda_0(t) = 0.25 t^2 of the simulation design, discretized on `times`.
CumulativeHazard true_cumulative_hazard(std::vector<double> times);

/**
 * Risk-set covariate means Xbar(t) = S1(t)/S0(t) tabulated at every distinct
 * time of a sample. Between sample times the value follows the risk-set
 * definition {Y >= t}. Queries past the last sample time have an empty risk
 * set; at() clamps them to the last value and reports the clamp.
 */
class XbarTable {
 public:
  XbarTable() = default;
  XbarTable(const SortedSample& sample, const Vector& beta);

  std::size_t p() const { return p_; }
  std::size_t size() const { return times_.size(); }
  double last_time() const { return times_.back(); }

  /// Pointer to the p means valid at time t. Sets *clamped when t is beyond
  /// the last sample time.
  const double* at(double t, bool* clamped = nullptr) const;

 private:
  friend class ResidualCalculator;
  std::size_t p_ = 0;
  std::vector<double> times_;
  std::vector<double> means_;  // size() x p, row-major
};

/// Artifacts of the uniform pilot subsample.
struct PilotContext {
  std::vector<std::size_t> pilot_indices;
  CoxFit fit;                     // role Pilot
  CumulativeHazard cumhaz;        // PilotUniform, at fit.beta
  XbarTable xbar_table;           // pilot Xbar at fit.beta
  SortedSample sample;            // pilot records, unit weights

  const Vector& beta() const { return fit.beta; }
};

/// Pilot risk-set mean at time t and coefficients beta. Throws
/// NumericalError when no pilot record has Y >= t.
Vector pilot_xbar(const PilotContext& ctx, double t, const Vector& beta);

using XbarFunction = std::function<Vector(double)>;

/**
 * Martingale score residual of record i:
 *   Delta_i {X_i - Xbar(Y_i)} - sum_{t_j <= Y_i} {X_i - Xbar(t_j)} exp(b'X_i) dLambda(t_j).
 * Direct evaluation; O(number of jumps).
 */
Vector score_residual(const SurvivalDataset& ds, std::size_t i, const XbarFunction& xbar,
                      const CumulativeHazard& cumhaz, const Vector& beta);

/**
 * Batched score residuals. Prefix sums of dLambda and Xbar dLambda over the
 * jumps reduce each residual to a binary search plus O(p) work.
 */
class ResidualCalculator {
 public:
  ResidualCalculator(XbarTable xbar, CumulativeHazard cumhaz, Vector beta);

  std::size_t p() const { return xbar_.p(); }

  /// Writes the residual of record i into out[0..p). Returns true when the
  /// Xbar query at Y_i was clamped.
  bool residual(const SurvivalDataset& ds, std::size_t i, double* out) const;

  /// One residual row per index.
  Matrix residuals(const SurvivalDataset& ds, IndexSpan indices, std::size_t* clamped = nullptr) const;

  /// Euclidean norm of transform * residual for every record of ds (the
  /// identity when transform is empty). Parallel over `threads` workers.
  std::vector<double> norms(const SurvivalDataset& ds, const Matrix& transform = Matrix(),
                            unsigned threads = 1, std::size_t* clamped = nullptr) const;

 private:
  // Residual of record i given the number of hazard jumps at or before Y_i
  // and the first table slot with time >= Y_i.
  void fill(const SurvivalDataset& ds, std::size_t i, std::size_t jumps, std::size_t slot, double* out) const;

  XbarTable xbar_;
  CumulativeHazard cumhaz_;
  Vector beta_;
  std::vector<double> xbar_dlambda_;  // prefix sums, size() x p
};

}  // namespace coxsub
