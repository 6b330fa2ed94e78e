#include "coxsub/subsampling.hpp"

#include "coxsub/error.hpp"

#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

namespace coxsub {

const char* to_string(PlanMethod method) {
  switch (method) {
    case PlanMethod::Uniform: return "uniform";
    case PlanMethod::LoptApprox: return "lopt";
    case PlanMethod::AoptApprox: return "aopt";
    case PlanMethod::LoptOracle: return "lopt_oracle";
    case PlanMethod::AoptOracle: return "aopt_oracle";
  }
  return "unknown";
}

const char* to_string(Criterion criterion) {
  switch (criterion) {
    case Criterion::Lopt: return "lopt";
    case Criterion::Aopt: return "aopt";
    case Criterion::Unif: return "unif";
  }
  return "unknown";
}

Criterion parse_criterion(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "lopt") return Criterion::Lopt;
  if (lower == "aopt") return Criterion::Aopt;
  if (lower == "unif" || lower == "uniform") return Criterion::Unif;
  throw InvalidArgument("unknown criterion '" + std::string(text) + "' (expected lopt, aopt or unif)");
}

namespace {

// Neumaier compensated sum.
double accurate_sum(std::span<const double> values) {
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <class F>
auto in_phase(const char* phase, F&& body) {
  auto label = [&](const std::exception& e) { return std::string(phase) + ": " + e.what(); };
  try {
    return body();
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(label(e));
  } catch (const NumericalError& e) {
    throw NumericalError(label(e));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(label(e));
  } catch (const DataError& e) {
    throw DataError(label(e));
  }
}

void check_delta(double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw InvalidArgument("delta must lie in [0, 1]");
}

}  // namespace

SubsamplePlan SubsamplePlan::uniform(std::size_t n) {
  if (n == 0) throw InvalidArgument("cannot build a plan over zero records");
  SubsamplePlan plan;
  plan.probs.assign(n, 1.0 / static_cast<double>(n));
  plan.method = PlanMethod::Uniform;
  plan.delta = 1.0;
  return plan;
}

std::vector<std::string> SubsamplePlan::violations() const {
  std::vector<std::string> out;
  if (probs.empty()) {
    out.emplace_back("empty plan");
    return out;
  }
  const double n = static_cast<double>(probs.size());
  const double total = accurate_sum(probs);
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg << "probabilities sum to " << total;
    out.push_back(msg.str());
  }
  const double lo = *std::min_element(probs.begin(), probs.end());
  // An unmixed plan gives zero-residual records probability 0; they are
  // simply never drawn. Any mixing makes every probability positive.
  if (delta > 0.0 ? !(lo > 0.0) : !(lo >= 0.0)) out.emplace_back("non-positive probability");
  if (lo < delta / n - 1e-15) out.emplace_back("probability below the mixing floor delta/n");
  return out;
}

void TwoStepOptions::check() const {
  if (r0 < 1) throw InvalidArgument("r0 must be at least 1");
  if (r < 1) throw InvalidArgument("r must be at least 1");
  check_delta(delta);
  solver.check();
}

Subsample draw_uniform(const SurvivalDataset& ds, std::size_t r0, Rng& rng) {
  if (r0 < 1) throw InvalidArgument("pilot size r0 must be at least 1");
  if (ds.n() == 0) throw InvalidArgument("cannot sample an empty dataset");
  boost::random::uniform_int_distribution<std::size_t> pick(0, ds.n() - 1);
  Subsample sub;
  sub.plan_method = PlanMethod::Uniform;
  sub.indices.resize(r0);
  for (auto& idx : sub.indices) idx = pick(rng);
  sub.weights.assign(r0, 1.0);
  return sub;
}

PilotContext fit_pilot(const SurvivalDataset& ds, const Subsample& pilot, const SolverOptions& opts) {
  if (pilot.indices.empty()) throw InvalidArgument("pilot subsample is empty");
  PilotContext ctx;
  ctx.pilot_indices = pilot.indices;
  ctx.sample = SortedSample::build(ds, Weights::unit(), pilot.indices);
  if (ctx.sample.event_count() == 0) throw InvalidArgument("pilot uninformative (no events); increase r0");
  try {
    ctx.fit = newton_solve(ctx.sample, opts, FitRole::Pilot);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("pilot failed; increase r0 (") + e.what() + ")");
  }
  if (!ctx.fit.converged) throw ConvergenceError("pilot failed to converge; increase r0");
  ctx.cumhaz = breslow_from_sample(ctx.sample, ctx.fit.beta, HazardSource::PilotUniform);
  ctx.xbar_table = XbarTable(ctx.sample, ctx.fit.beta);
  return ctx;
}

SubsamplePlan mix_plan(std::span<const double> norms, double delta, PlanMethod method) {
  return mix_plan(std::vector<double>(norms.begin(), norms.end()), delta, method);
}

SubsamplePlan mix_plan(std::vector<double>&& norms, double delta, PlanMethod method) {
  check_delta(delta);
  const std::size_t n = norms.size();
  if (n == 0) throw InvalidArgument("cannot build a plan over zero records");
  for (double v : norms) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericalError("residual norm is negative or not finite");
  }
  SubsamplePlan plan;
  plan.method = method;
  plan.delta = delta;
  const double total = accurate_sum(norms);
  const double floor = delta / static_cast<double>(n);
  plan.probs = std::move(norms);
  if (!(total > 0.0)) {
    plan.probs.assign(n, 1.0 / static_cast<double>(n));
    plan.diagnostics.fell_back_to_uniform = true;
    plan.diagnostics.warnings.emplace_back("all score residuals are zero; falling back to uniform sampling");
    return plan;
  }
  for (auto& v : plan.probs) v = (1.0 - delta) * (v / total) + floor;
  return plan;
}

namespace {

SubsamplePlan plan_from_calculator(const SurvivalDataset& ds, const ResidualCalculator& calc, const Matrix& transform,
                                   double delta, PlanMethod method, unsigned threads) {
  std::size_t clamped = 0;
  SubsamplePlan plan = mix_plan(calc.norms(ds, transform, threads, &clamped), delta, method);
  plan.diagnostics.clamped_xbar_queries = clamped;
  return plan;
}

Matrix inverse_psi(const Matrix& psi, const char* what) {
  return spd_solve(psi, Matrix::Identity(psi.rows(), psi.cols()), what);
}

}  // namespace

SubsamplePlan compute_lopt_probs(const SurvivalDataset& ds, const PilotContext& ctx, double delta,
                                 unsigned threads) {
  check_delta(delta);
  ResidualCalculator calc(ctx.xbar_table, ctx.cumhaz, ctx.beta());
  return plan_from_calculator(ds, calc, Matrix(), delta, PlanMethod::LoptApprox, threads);
}

SubsamplePlan compute_aopt_probs(const SurvivalDataset& ds, const PilotContext& ctx, double delta,
                                 unsigned threads) {
  check_delta(delta);
  const Matrix psi_inv = inverse_psi(ctx.fit.hessian, "pilot information matrix");
  ResidualCalculator calc(ctx.xbar_table, ctx.cumhaz, ctx.beta());
  return plan_from_calculator(ds, calc, psi_inv, delta, PlanMethod::AoptApprox, threads);
}

namespace {

ResidualCalculator full_data_calculator(const SurvivalDataset& ds, const CoxFit& mpl) {
  if (mpl.role != FitRole::FullMPL) throw InvalidArgument("oracle plans need the full-data MPL fit");
  const SortedSample full = SortedSample::build(ds);
  return ResidualCalculator(XbarTable(full, mpl.beta), breslow_from_sample(full, mpl.beta, HazardSource::FullData),
                            mpl.beta);
}

}  // namespace

Matrix oracle_residuals(const SurvivalDataset& ds, const CoxFit& mpl) {
  const auto calc = full_data_calculator(ds, mpl);
  std::vector<std::size_t> all(ds.n());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return calc.residuals(ds, all);
}

SubsamplePlan oracle_lopt_probs(const SurvivalDataset& ds, const CoxFit& mpl) {
  const auto calc = full_data_calculator(ds, mpl);
  return plan_from_calculator(ds, calc, Matrix(), 0.0, PlanMethod::LoptOracle, 1);
}

SubsamplePlan oracle_aopt_probs(const SurvivalDataset& ds, const CoxFit& mpl) {
  const auto calc = full_data_calculator(ds, mpl);
  const Matrix psi_inv = inverse_psi(mpl.hessian, "information matrix");
  return plan_from_calculator(ds, calc, psi_inv, 0.0, PlanMethod::AoptOracle, 1);
}

double trace_gamma(std::span<const double> probs, std::span<const double> residual_sq_norms, std::size_t r) {
  if (probs.size() != residual_sq_norms.size()) throw InvalidArgument("probability and residual lengths differ");
  if (r < 1) throw InvalidArgument("r must be at least 1");
  const double n = static_cast<double>(probs.size());
  std::vector<double> terms(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    // A record with zero residual adds nothing, whatever its probability.
    if (residual_sq_norms[i] == 0.0) {
      terms[i] = 0.0;
      continue;
    }
    if (!(probs[i] > 0.0)) throw InvalidArgument("trace_gamma: zero probability on a record with nonzero residual");
    terms[i] = residual_sq_norms[i] / probs[i];
  }
  return accurate_sum(terms) / (static_cast<double>(r) * n * n);
}

double trace_gamma(const SurvivalDataset& ds, const SubsamplePlan& plan, const CoxFit& mpl, std::size_t r) {
  const Vector sq = oracle_residuals(ds, mpl).rowwise().squaredNorm();
  return trace_gamma(plan.probs, std::span<const double>(sq.data(), static_cast<std::size_t>(sq.size())), r);
}

AliasTable::AliasTable(std::span<const double> probs) {
  const std::size_t n = probs.size();
  if (n == 0) throw InvalidArgument("alias table needs at least one outcome");
  // Only the overall scale is needed here, so an ordinary sum suffices.
  double lanes[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) lanes[i % 4] += probs[i];
  const double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  if (!(total > 0.0)) throw InvalidArgument("alias table needs positive total probability");
  cutoff_.resize(n);
  alias_.resize(n);
  // Work stack: small entries grow from the front, large ones from the back.
  if (n > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("alias table limited to 2^32 outcomes");
  std::vector<std::uint32_t> stack(n);
  std::size_t n_small = 0, n_large = 0;
  const double scale = static_cast<double>(n) / total;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(probs[i] >= 0.0)) throw InvalidArgument("negative probability");
    cutoff_[i] = probs[i] * scale;
    alias_[i] = static_cast<std::uint32_t>(i);
    if (cutoff_[i] < 1.0) stack[n_small++] = static_cast<std::uint32_t>(i);
    else stack[n - 1 - n_large++] = static_cast<std::uint32_t>(i);
  }
  while (n_small > 0 && n_large > 0) {
    const std::uint32_t s = stack[--n_small];
    const std::uint32_t l = stack[n - n_large];
    alias_[s] = l;
    cutoff_[l] = (cutoff_[l] + cutoff_[s]) - 1.0;
    if (cutoff_[l] < 1.0) {
      --n_large;
      stack[n_small++] = l;
    }
  }
  // Leftovers are 1 up to rounding.
  for (std::size_t k = 0; k < n_small; ++k) cutoff_[stack[k]] = 1.0;
  for (std::size_t k = 0; k < n_large; ++k) cutoff_[stack[n - 1 - k]] = 1.0;
}

std::size_t AliasTable::operator()(Rng& rng) const {
  boost::random::uniform_int_distribution<std::size_t> column(0, cutoff_.size() - 1);
  boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t k = column(rng);
  return unit(rng) < cutoff_[k] ? k : alias_[k];
}

Subsample draw_weighted(const SubsamplePlan& plan, std::size_t r, Rng& rng) {
  if (r < 1) throw InvalidArgument("subsample size r must be at least 1");
  const AliasTable table(plan.probs);
  const double n = static_cast<double>(plan.probs.size());
  Subsample sub;
  sub.plan_method = plan.method;
  sub.indices.resize(r);
  sub.weights.resize(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t idx = table(rng);
    sub.indices[k] = idx;
    sub.weights[k] = 1.0 / (n * plan.probs[idx]);
  }
  return sub;
}

CoxFit weighted_fit(const SurvivalDataset& ds, const Subsample& sub, const Vector& init, const SolverOptions& opts) {
  if (sub.size() < 2) throw InvalidArgument("subsample needs at least 2 records for a weighted fit");
  const SortedSample sample = SortedSample::build(ds, Weights::inverse_probability(sub.weights), sub.indices);
  if (sample.event_count() == 0) throw InvalidArgument("subsample contains no events");
  SolverOptions o = opts;
  o.init = init;
  return newton_solve(sample, o, FitRole::TwoStep);
}

Matrix gamma_from_residuals(const Matrix& residuals, std::span<const double> weights) {
  if (static_cast<std::size_t>(residuals.rows()) != weights.size()) {
    throw InvalidArgument("one weight per residual row is required");
  }
  const double r = static_cast<double>(weights.size());
  Matrix gamma = Matrix::Zero(residuals.cols(), residuals.cols());
  for (Eigen::Index k = 0; k < residuals.rows(); ++k) {
    const double w = weights[static_cast<std::size_t>(k)];
    gamma.selfadjointView<Eigen::Lower>().rankUpdate(residuals.row(k).transpose(), w * w);
  }
  gamma = gamma.selfadjointView<Eigen::Lower>();
  return gamma / (r * r);
}

Matrix sandwich(const Matrix& psi, const Matrix& gamma) {
  const Matrix psi_inv = spd_solve(psi, Matrix::Identity(psi.rows(), psi.cols()), "subsample information matrix");
  Matrix sigma = psi_inv * gamma * psi_inv;
  return 0.5 * (sigma + sigma.transpose());
}

CovarianceEstimate estimate_covariance(const SurvivalDataset& ds, const PilotContext& ctx, const Subsample& sub,
                                       const CoxFit& fit) {
  if (!fit.converged) throw InvalidArgument("covariance requires a converged fit");
  const SortedSample sample = SortedSample::build(ds, Weights::inverse_probability(sub.weights), sub.indices);
  CovarianceEstimate out;
  out.psi = evaluate(sample, fit.beta, EvalLevel::Hessian).hessian;
  ResidualCalculator calc(XbarTable(ctx.sample, fit.beta),
                          breslow_from_sample(ctx.sample, fit.beta, HazardSource::PilotUniform), fit.beta);
  out.gamma = gamma_from_residuals(calc.residuals(ds, sub.indices), sub.weights);
  out.sigma = sandwich(out.psi, out.gamma);
  out.standard_errors = out.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

TwoStepResult two_step(const SurvivalDataset& ds, const TwoStepOptions& opts, Rng& rng) {
  opts.check();
  ds.require_valid();
  TwoStepResult result;
  auto clock = std::chrono::steady_clock::now();

  result.pilot = in_phase("pilot", [&] {
    const Subsample pilot_draw = draw_uniform(ds, opts.r0, rng);
    return std::make_shared<const PilotContext>(fit_pilot(ds, pilot_draw, opts.solver));
  });
  result.timings.pilot_fit = seconds_since(clock);

  clock = std::chrono::steady_clock::now();
  result.plan = in_phase("probabilities", [&] {
    switch (opts.criterion) {
      case Criterion::Lopt: return compute_lopt_probs(ds, *result.pilot, opts.delta, opts.threads);
      case Criterion::Aopt: return compute_aopt_probs(ds, *result.pilot, opts.delta, opts.threads);
      case Criterion::Unif: break;
    }
    return SubsamplePlan::uniform(ds.n());
  });
  result.plan.pilot = result.pilot;
  result.timings.probabilities = seconds_since(clock);

  clock = std::chrono::steady_clock::now();
  result.subsample = in_phase("draw", [&] { return draw_weighted(result.plan, opts.r, rng); });
  result.timings.draw = seconds_since(clock);

  clock = std::chrono::steady_clock::now();
  result.fit = in_phase("second-step fit",
                        [&] { return weighted_fit(ds, result.subsample, result.pilot->beta(), opts.solver); });
  result.timings.second_fit = seconds_since(clock);

  if (result.fit.converged) {
    clock = std::chrono::steady_clock::now();
    result.covariance = in_phase(
        "covariance", [&] { return estimate_covariance(ds, *result.pilot, result.subsample, result.fit); });
    result.timings.covariance = seconds_since(clock);
  }
  return result;
}

}  // namespace coxsub
