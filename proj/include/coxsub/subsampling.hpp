#pragma once

#include "coxsub/breslow.hpp"
#include "coxsub/random.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coxsub {

enum class PlanMethod { Uniform, LoptApprox, AoptApprox, LoptOracle, AoptOracle };
enum class Criterion { Lopt, Aopt, Unif };

const char* to_string(PlanMethod method);
const char* to_string(Criterion criterion);
/// Accepts "lopt", "aopt", "unif" (case-insensitive).
Criterion parse_criterion(std::string_view text);

struct PlanDiagnostics {
  bool fell_back_to_uniform = false;
  std::size_t clamped_xbar_queries = 0;
  std::vector<std::string> warnings;
};

/**
 * Sampling distribution over the n records:
 *   pi_i = (1 - delta) * pi_i^opt + delta / n.
 * delta = 1 is uniform sampling, delta = 0 the unmixed optimal plan.
 */
struct SubsamplePlan {
  std::vector<double> probs;
  PlanMethod method = PlanMethod::Uniform;
  double delta = 1.0;
  std::shared_ptr<const PilotContext> pilot;
  PlanDiagnostics diagnostics;

  static SubsamplePlan uniform(std::size_t n);

  /// Empty when the sum is 1 within 1e-12 and min pi >= delta/n. Mixed plans
  /// (delta > 0) must be strictly positive; unmixed ones may hold zeros.
  std::vector<std::string> violations() const;
};

/// Records drawn with replacement; weights[k] = 1 / (n * pi_{indices[k]}).
struct Subsample {
  std::vector<std::size_t> indices;
  std::vector<double> weights;
  PlanMethod plan_method = PlanMethod::Uniform;

  std::size_t size() const { return indices.size(); }
};

struct CovarianceEstimate {
  Matrix sigma;
  Matrix psi;
  Matrix gamma;
  Vector standard_errors;
};

struct PhaseTimings {
  double pilot_fit = 0.0;
  double probabilities = 0.0;
  double draw = 0.0;
  double second_fit = 0.0;
  double covariance = 0.0;

  double total() const { return pilot_fit + probabilities + draw + second_fit + covariance; }
};

struct TwoStepOptions {
  std::size_t r0 = 300;
  std::size_t r = 1000;
  double delta = 0.1;
  Criterion criterion = Criterion::Lopt;
  SolverOptions solver;
  /// Workers for the probability pass. Results do not depend on it.
  unsigned threads = 1;

  void check() const;
};

struct TwoStepResult {
  std::shared_ptr<const PilotContext> pilot;
  SubsamplePlan plan;
  Subsample subsample;
  CoxFit fit;  // role TwoStep
  std::optional<CovarianceEstimate> covariance;
  PhaseTimings timings;
};

/// r0 indices uniform on [0, n), weights all 1.
Subsample draw_uniform(const SurvivalDataset& ds, std::size_t r0, Rng& rng);

/// Fits the unit-weight partial likelihood of the pilot multiset, then builds
/// its Breslow hazard and risk-set mean table at the pilot estimate.
PilotContext fit_pilot(const SurvivalDataset& ds, const Subsample& pilot, const SolverOptions& opts = {});

/// Normalizes residual norms into probabilities and mixes with uniform. All
/// norms zero falls back to uniform with a warning.
SubsamplePlan mix_plan(std::span<const double> norms, double delta, PlanMethod method);
/// Same, reusing the storage of `norms`.
SubsamplePlan mix_plan(std::vector<double>&& norms, double delta, PlanMethod method);

/// Approximate L-optimal plan: norms of pilot-based score residuals.
SubsamplePlan compute_lopt_probs(const SurvivalDataset& ds, const PilotContext& ctx, double delta,
                                 unsigned threads = 1);

/// Approximate A-optimal plan: residuals premultiplied by the inverse pilot
/// Hessian before taking norms.
SubsamplePlan compute_aopt_probs(const SurvivalDataset& ds, const PilotContext& ctx, double delta,
                                 unsigned threads = 1);

/// Score residuals of every record under the full-data fit (rows = records).
Matrix oracle_residuals(const SurvivalDataset& ds, const CoxFit& mpl);

/// Exact L-optimal plan from full-data quantities. Unmixed; for testing.
SubsamplePlan oracle_lopt_probs(const SurvivalDataset& ds, const CoxFit& mpl);
SubsamplePlan oracle_aopt_probs(const SurvivalDataset& ds, const CoxFit& mpl);

/// tr(Gamma) = (1/(r n^2)) sum_i ||residual_i||^2 / pi_i. Terms with a zero
/// residual count as 0 even when pi_i = 0.
double trace_gamma(std::span<const double> probs, std::span<const double> residual_sq_norms, std::size_t r);
double trace_gamma(const SurvivalDataset& ds, const SubsamplePlan& plan, const CoxFit& mpl, std::size_t r);

/// Walker/Vose alias table: O(n) build, O(1) draws.
class AliasTable {
 public:
  explicit AliasTable(std::span<const double> probs);
  std::size_t size() const { return cutoff_.size(); }
  std::size_t operator()(Rng& rng) const;

 private:
  std::vector<double> cutoff_;
  std::vector<std::uint32_t> alias_;
};

Subsample draw_weighted(const SubsamplePlan& plan, std::size_t r, Rng& rng);

/// Newton solve of the inverse-probability-weighted subsample score.
CoxFit weighted_fit(const SurvivalDataset& ds, const Subsample& sub, const Vector& init,
                    const SolverOptions& opts = {});

/// (1/r^2) sum_k w_k^2 res_k res_k'.
Matrix gamma_from_residuals(const Matrix& residuals, std::span<const double> weights);

/// psi^{-1} gamma psi^{-1}; NumericalError when psi is singular.
Matrix sandwich(const Matrix& psi, const Matrix& gamma);

/// Subsample-only covariance of the two-step estimate. Pilot hazard and
/// risk-set means are re-evaluated at fit.beta.
CovarianceEstimate estimate_covariance(const SurvivalDataset& ds, const PilotContext& ctx, const Subsample& sub,
                                       const CoxFit& fit);

/// Pilot draw, pilot fit, probabilities, weighted draw, weighted fit and
/// covariance, in that order. Errors carry the failing phase in their message.
TwoStepResult two_step(const SurvivalDataset& ds, const TwoStepOptions& opts, Rng& rng);

}  // namespace coxsub
