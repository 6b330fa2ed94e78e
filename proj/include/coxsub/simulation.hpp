#pragma once

#include "coxsub/subsampling.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coxsub {

/// Covariate laws of the simulation design.
///   I   independent U(-1, 1)
///   II  0.5 N(-1, U) + 0.5 N(1, U), U_jk = 0.5^|j-k|
///   III independent Exp(rate 2)
///   IV  multivariate t, 10 degrees of freedom, covariance U
enum class CovariateCase { I, II, III, IV };

const char* to_string(CovariateCase c);
/// Accepts "I".."IV" or "1".."4".
CovariateCase parse_case(std::string_view text);

/// (-1, -0.5, 0, 0.5, 1).
Vector default_beta();

/// AR(1) correlation matrix with entries rho^|j-k|.
Matrix ar1_matrix(std::size_t p, double rho = 0.5);

struct SimConfig {
  CovariateCase covariate_case = CovariateCase::I;
  std::size_t n = 100000;
  Vector beta_true = default_beta();
  double target_cr = 0.2;
  /// Upper bound of the uniform censoring law. Calibrated when absent.
  std::optional<double> c0;
  std::uint64_t seed = 20240601;
  /// Case IV only: use the t scale matrix U directly (covariance 1.25 U).
  bool case4_raw_scale = false;

  std::size_t p() const { return static_cast<std::size_t>(beta_true.size()); }
  void check() const;
};

Matrix gen_covariates(CovariateCase c, std::size_t n, std::size_t p, Rng& rng, bool case4_raw_scale = false);

/// Inverse of the cumulative hazard 0.25 t^2 exp(eta) at -log(u).
double failure_time(double u, double eta);

/// Baseline hazard 0.5 t: T = 2 sqrt(-log U) exp(-b'X / 2).
Vector gen_failure_times(const Matrix& x, const Vector& beta, Rng& rng);

struct CalibrationOptions {
  double tol = 0.002;
  std::size_t batch = 100000;
  /// Directory holding cached results; no caching when empty.
  std::filesystem::path cache_dir;
  bool case4_raw_scale = false;
};

struct CalibrationResult {
  double c0 = 0.0;
  double achieved_cr = 0.0;
  int evaluations = 0;
  bool from_cache = false;
};

/**
 * Bisection on c0 for the censoring rate P(T > C), C ~ U(0, c0). Every
 * evaluation reuses one batch of draws, so the estimated rate is a monotone
 * step function of c0 and the result is a deterministic function of the seed.
 */
CalibrationResult calibrate_c0(CovariateCase c, const Vector& beta, double target_cr, std::uint64_t seed,
                               const CalibrationOptions& opts = {});

/// Y = min(T, C), status = 1{T <= C}. Calibrates c0 first when cfg.c0 is empty.
SurvivalDataset gen_dataset(const SimConfig& cfg, Rng& rng);

enum class Method { Lopt, Aopt, Unif, FullMPL };
const char* to_string(Method m);
/// Accepts "lopt", "aopt", "unif", "full" / "fullmpl".
Method parse_method(std::string_view text);

/// FixedData: one dataset, subsampling randomness only, target = full-data MPL.
/// Regenerate: fresh dataset every replication, target = true coefficients.
enum class ReplicationMode { FixedData, Regenerate };
const char* to_string(ReplicationMode m);

struct StudyConfig {
  SimConfig sim;
  Method method = Method::Lopt;
  std::size_t r0 = 300;
  std::size_t r = 1000;
  double delta = 0.1;
  std::size_t n_reps = 200;
  ReplicationMode mode = ReplicationMode::FixedData;
  unsigned threads = 1;
  SolverOptions solver;

  void check() const;
};

struct ReplicationReport {
  Method method = Method::Lopt;
  ReplicationMode mode = ReplicationMode::FixedData;
  std::size_t n_reps = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
  Vector target;
  /// Mean squared distance to target over successful replications.
  double mse = 0.0;
  /// Standard error of mse across replications.
  double mse_se = 0.0;
  Vector bias;
  Vector ese;
  Vector mean_se;
  Vector coverage;
  PhaseTimings mean_timings;
  double mean_seconds = 0.0;
  double c0 = 0.0;
  std::vector<Vector> estimates;  // successful replications, in order
};

/// Runs cfg.n_reps replications on freshly simulated data.
ReplicationReport run_replications(const StudyConfig& cfg);

/// Fixed-data replications on a given dataset; cfg.sim and cfg.mode are ignored.
ReplicationReport run_replications(const SurvivalDataset& ds, const StudyConfig& cfg);

struct FiveNumberSummary {
  std::array<double, 5> censored;
  std::array<double, 5> uncensored;
  std::vector<std::string> warnings;
};

/// Tukey five numbers (min, lower hinge, median, upper hinge, max).
std::array<double, 5> fivenum(std::vector<double> values);

/// Five numbers of plan probabilities split by status. An empty group gives NaNs.
FiveNumberSummary five_number_summary(const SubsamplePlan& plan, const std::vector<int>& status);

}  // namespace coxsub
