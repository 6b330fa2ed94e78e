#include "coxsub/simulation.hpp"

#include "coxsub/error.hpp"

#include <Eigen/Cholesky>
#include <boost/random/chi_squared_distribution.hpp>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace coxsub {

namespace {

constexpr std::uint64_t kCalibrationTag = 0xCA11B0;
constexpr std::uint64_t kDataTag = 0xDA7A;
constexpr std::uint64_t kRepTag = 0x5EED;

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

double uniform01(Rng& rng) {
  boost::random::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng);
}

}  // namespace

const char* to_string(CovariateCase c) {
  switch (c) {
    case CovariateCase::I: return "I";
    case CovariateCase::II: return "II";
    case CovariateCase::III: return "III";
    case CovariateCase::IV: return "IV";
  }
  return "?";
}

CovariateCase parse_case(std::string_view text) {
  const std::string t = lowercase(text);
  if (t == "i" || t == "1") return CovariateCase::I;
  if (t == "ii" || t == "2") return CovariateCase::II;
  if (t == "iii" || t == "3") return CovariateCase::III;
  if (t == "iv" || t == "4") return CovariateCase::IV;
  throw InvalidArgument("unknown case '" + std::string(text) + "' (expected I, II, III or IV)");
}

Vector default_beta() {
  Vector b(5);
  b << -1.0, -0.5, 0.0, 0.5, 1.0;
  return b;
}

Matrix ar1_matrix(std::size_t p, double rho) {
  Matrix m(p, p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < p; ++k) {
      m(j, k) = std::pow(rho, std::abs(static_cast<double>(j) - static_cast<double>(k)));
    }
  }
  return m;
}

void SimConfig::check() const {
  if (n < 1) throw InvalidArgument("n must be at least 1");
  if (beta_true.size() < 1) throw InvalidArgument("beta_true must have at least one coefficient");
  if (!beta_true.allFinite()) throw InvalidArgument("beta_true must be finite");
  if (!(target_cr > 0.0 && target_cr < 1.0)) throw InvalidArgument("target censoring rate must lie in (0, 1)");
  if (c0 && !(*c0 > 0.0 && std::isfinite(*c0))) throw InvalidArgument("c0 must be positive");
}

Matrix gen_covariates(CovariateCase c, std::size_t n, std::size_t p, Rng& rng, bool case4_raw_scale) {
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(p);
  Matrix x(rows, cols);
  switch (c) {
    case CovariateCase::I: {
      boost::random::uniform_real_distribution<double> u(-1.0, 1.0);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = u(rng);
      break;
    }
    case CovariateCase::III: {
      boost::random::exponential_distribution<double> e(2.0);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = e(rng);
      break;
    }
    case CovariateCase::II:
    case CovariateCase::IV: {
      const Matrix chol = ar1_matrix(p).llt().matrixL();
      boost::random::normal_distribution<double> z(0.0, 1.0);
      boost::random::chi_squared_distribution<double> chi2(10.0);
      Vector draw(cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        double shift = 0.0;
        double scale = 1.0;
        if (c == CovariateCase::II) {
          shift = uniform01(rng) < 0.5 ? -1.0 : 1.0;
        } else {
          const double w = chi2(rng);
          scale = std::sqrt((case4_raw_scale ? 10.0 : 8.0) / w);
        }
        for (Eigen::Index j = 0; j < cols; ++j) draw(j) = z(rng);
        x.row(i) = (chol * draw).transpose() * scale;
        x.row(i).array() += shift;
      }
      break;
    }
  }
  return x;
}

double failure_time(double u, double eta) { return 2.0 * std::sqrt(-std::log(u)) * std::exp(-0.5 * eta); }

Vector gen_failure_times(const Matrix& x, const Vector& beta, Rng& rng) {
  if (x.cols() != beta.size()) throw InvalidArgument("beta length differs from covariate count");
  const Vector eta = x * beta;
  Vector t(x.rows());
  // 1 - u lies in (0, 1], keeping the logarithm finite.
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = failure_time(1.0 - uniform01(rng), eta(i));
  return t;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::filesystem::path cache_path(const std::filesystem::path& dir, CovariateCase c, const Vector& beta,
                                 double target_cr, std::uint64_t seed, const CalibrationOptions& opts) {
  std::ostringstream key;
  key.precision(17);
  key << to_string(c) << '|' << target_cr << '|' << seed << '|' << opts.tol << '|' << opts.batch << '|'
      << opts.case4_raw_scale;
  for (Eigen::Index j = 0; j < beta.size(); ++j) key << '|' << beta(j);
  char name[40];
  std::snprintf(name, sizeof name, "c0-%016llx.txt", static_cast<unsigned long long>(fnv1a(key.str())));
  return dir / name;
}

}  // namespace

CalibrationResult calibrate_c0(CovariateCase c, const Vector& beta, double target_cr, std::uint64_t seed,
                               const CalibrationOptions& opts) {
  if (!(target_cr > 0.01 && target_cr < 0.99)) throw InvalidArgument("target censoring rate must lie in (0.01, 0.99)");
  if (!(opts.tol > 0.0)) throw InvalidArgument("calibration tolerance must be positive");
  if (opts.batch < 100) throw InvalidArgument("calibration batch must hold at least 100 draws");

  std::filesystem::path cached;
  if (!opts.cache_dir.empty()) {
    cached = cache_path(opts.cache_dir, c, beta, target_cr, seed, opts);
    std::ifstream in(cached);
    CalibrationResult hit;
    if (in >> hit.c0 >> hit.achieved_cr >> hit.evaluations && hit.c0 > 0.0) {
      hit.from_cache = true;
      return hit;
    }
  }

  Rng rng = make_rng(seed, {kCalibrationTag});
  const Matrix x = gen_covariates(c, opts.batch, static_cast<std::size_t>(beta.size()), rng, opts.case4_raw_scale);
  const Vector t = gen_failure_times(x, beta, rng);
  // Censored iff T > c0 V; the ratio T / V is all that matters.
  std::vector<double> ratio(opts.batch);
  for (std::size_t i = 0; i < opts.batch; ++i) ratio[i] = t(static_cast<Eigen::Index>(i)) / uniform01(rng);
  std::sort(ratio.begin(), ratio.end());

  CalibrationResult out;
  auto rate = [&](double c0) {
    ++out.evaluations;
    const auto above = ratio.end() - std::upper_bound(ratio.begin(), ratio.end(), c0);
    return static_cast<double>(above) / static_cast<double>(ratio.size());
  };

  double lo = 1.0, hi = 1.0;
  double cr_lo = rate(lo), cr_hi = cr_lo;
  for (int k = 0; k < 200 && cr_hi > target_cr; ++k) cr_hi = rate(hi *= 2.0);
  for (int k = 0; k < 200 && cr_lo < target_cr; ++k) cr_lo = rate(lo *= 0.5);
  if (cr_hi > target_cr || cr_lo < target_cr) throw NumericalError("could not bracket the censoring rate target");

  double mid = hi, cr = cr_hi;
  for (int k = 0; k < 200; ++k) {
    if (std::abs(cr_lo - target_cr) <= opts.tol) {
      mid = lo, cr = cr_lo;
      break;
    }
    if (std::abs(cr_hi - target_cr) <= opts.tol) {
      mid = hi, cr = cr_hi;
      break;
    }
    mid = 0.5 * (lo + hi);
    cr = rate(mid);
    if (std::abs(cr - target_cr) <= opts.tol) break;
    (cr > target_cr ? lo : hi) = mid;
    (cr > target_cr ? cr_lo : cr_hi) = cr;
  }
  if (std::abs(cr - target_cr) > opts.tol) throw NumericalError("censoring calibration did not reach tolerance");
  out.c0 = mid;
  out.achieved_cr = cr;

  if (!cached.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opts.cache_dir, ec);
    std::ofstream file(cached);
    file.precision(17);
    file << out.c0 << ' ' << out.achieved_cr << ' ' << out.evaluations << '\n';
  }
  return out;
}

SurvivalDataset gen_dataset(const SimConfig& cfg, Rng& rng) {
  cfg.check();
  double c0 = 0.0;
  if (cfg.c0) {
    c0 = *cfg.c0;
  } else {
    CalibrationOptions opts;
    opts.case4_raw_scale = cfg.case4_raw_scale;
    c0 = calibrate_c0(cfg.covariate_case, cfg.beta_true, cfg.target_cr, cfg.seed, opts).c0;
  }
  Matrix x = gen_covariates(cfg.covariate_case, cfg.n, cfg.p(), rng, cfg.case4_raw_scale);
  const Vector t = gen_failure_times(x, cfg.beta_true, rng);
  Vector y(t.size());
  std::vector<int> status(static_cast<std::size_t>(t.size()));
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double censor = c0 * uniform01(rng);
    status[static_cast<std::size_t>(i)] = t(i) <= censor ? 1 : 0;
    y(i) = std::min(t(i), censor);
  }
  return SurvivalDataset(std::move(x), std::move(y), std::move(status));
}

const char* to_string(Method m) {
  switch (m) {
    case Method::Lopt: return "lopt";
    case Method::Aopt: return "aopt";
    case Method::Unif: return "unif";
    case Method::FullMPL: return "full";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  const std::string t = lowercase(text);
  if (t == "lopt") return Method::Lopt;
  if (t == "aopt") return Method::Aopt;
  if (t == "unif" || t == "uniform") return Method::Unif;
  if (t == "full" || t == "fullmpl" || t == "mpl") return Method::FullMPL;
  throw InvalidArgument("unknown method '" + std::string(text) + "' (expected lopt, aopt, unif or full)");
}

const char* to_string(ReplicationMode m) { return m == ReplicationMode::FixedData ? "fixed" : "regenerate"; }

void StudyConfig::check() const {
  sim.check();
  if (n_reps < 2) throw InvalidArgument("n_reps must be at least 2");
  if (method != Method::FullMPL) {
    TwoStepOptions o;
    o.r0 = r0, o.r = r, o.delta = delta, o.solver = solver;
    o.check();
  }
  solver.check();
}

namespace {

struct RepOutcome {
  bool ok = false;
  Vector beta;
  Vector se;
  PhaseTimings timings;
  double seconds = 0.0;
  std::string message;
};

Vector model_se(const CoxFit& fit, std::size_t n) {
  const Matrix inv = spd_solve(fit.hessian, Matrix::Identity(fit.hessian.rows(), fit.hessian.cols()), "information matrix");
  return (inv.diagonal() / static_cast<double>(n)).cwiseMax(0.0).cwiseSqrt();
}

CoxFit full_fit(const SurvivalDataset& ds, const SolverOptions& solver) {
  CoxFit fit = newton_solve(ds, Weights::unit(), std::nullopt, solver, FitRole::FullMPL);
  if (!fit.converged) throw ConvergenceError("full-data fit did not converge");
  return fit;
}

Criterion criterion_of(Method m) {
  switch (m) {
    case Method::Lopt: return Criterion::Lopt;
    case Method::Aopt: return Criterion::Aopt;
    default: return Criterion::Unif;
  }
}

// `mpl` short-circuits FullMPL replications on fixed data.
RepOutcome run_one(const SurvivalDataset& ds, const StudyConfig& cfg, Rng& rng, const CoxFit* mpl) {
  RepOutcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    if (cfg.method == Method::FullMPL) {
      const CoxFit fit = mpl ? *mpl : full_fit(ds, cfg.solver);
      out.beta = fit.beta;
      out.se = model_se(fit, ds.n());
      out.timings.second_fit = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } else {
      TwoStepOptions opts;
      opts.r0 = cfg.r0;
      opts.r = cfg.r;
      opts.delta = cfg.delta;
      opts.criterion = criterion_of(cfg.method);
      opts.solver = cfg.solver;
      const TwoStepResult res = two_step(ds, opts, rng);
      if (!res.fit.converged || !res.covariance) throw ConvergenceError("second-step fit did not converge");
      out.beta = res.fit.beta;
      out.se = res.covariance->standard_errors;
      out.timings = res.timings;
    }
    out.ok = true;
  } catch (const Error& e) {
    out.message = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

template <class F>
std::vector<RepOutcome> run_parallel(std::size_t reps, unsigned threads, F&& task) {
  std::vector<RepOutcome> results(reps);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(reps)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t b; (b = next.fetch_add(1)) < reps;) results[b] = task(b);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < workers; ++k) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

ReplicationReport summarize(const StudyConfig& cfg, ReplicationMode mode, const Vector& target,
                            const std::vector<RepOutcome>& results) {
  ReplicationReport rep;
  rep.method = cfg.method;
  rep.mode = mode;
  rep.n_reps = results.size();
  rep.target = target;
  const auto p = target.size();
  Vector sum = Vector::Zero(p), se_sum = Vector::Zero(p), cover = Vector::Zero(p);
  std::vector<double> sq;
  for (std::size_t b = 0; b < results.size(); ++b) {
    const auto& r = results[b];
    if (!r.ok) {
      ++rep.failures;
      rep.failure_messages.push_back("replication " + std::to_string(b) + ": " + r.message);
      continue;
    }
    const Vector d = r.beta - target;
    rep.estimates.push_back(r.beta);
    sum += r.beta;
    se_sum += r.se;
    for (Eigen::Index j = 0; j < p; ++j) cover(j) += std::abs(d(j)) <= 1.96 * r.se(j) ? 1.0 : 0.0;
    sq.push_back(d.squaredNorm());
    rep.mean_timings.pilot_fit += r.timings.pilot_fit;
    rep.mean_timings.probabilities += r.timings.probabilities;
    rep.mean_timings.draw += r.timings.draw;
    rep.mean_timings.second_fit += r.timings.second_fit;
    rep.mean_timings.covariance += r.timings.covariance;
    rep.mean_seconds += r.seconds;
  }
  const std::size_t k = rep.estimates.size();
  if (k < 2) {
    throw NumericalError("fewer than two replications succeeded" +
                         (rep.failure_messages.empty() ? std::string() : "; first failure: " + rep.failure_messages[0]));
  }
  const double kd = static_cast<double>(k);
  const Vector mean = sum / kd;
  rep.bias = mean - target;
  Vector var = Vector::Zero(p);
  for (const auto& b : rep.estimates) var += (b - mean).cwiseAbs2();
  rep.ese = (var / (kd - 1.0)).cwiseSqrt();
  rep.mean_se = se_sum / kd;
  rep.coverage = cover / kd;
  double total = 0.0;
  for (double v : sq) total += v;
  rep.mse = total / kd;
  double ss = 0.0;
  for (double v : sq) ss += (v - rep.mse) * (v - rep.mse);
  rep.mse_se = std::sqrt(ss / (kd - 1.0) / kd);
  rep.mean_timings.pilot_fit /= kd;
  rep.mean_timings.probabilities /= kd;
  rep.mean_timings.draw /= kd;
  rep.mean_timings.second_fit /= kd;
  rep.mean_timings.covariance /= kd;
  rep.mean_seconds /= kd;
  return rep;
}

ReplicationReport run_fixed(const SurvivalDataset& ds, const StudyConfig& cfg) {
  const CoxFit mpl = full_fit(ds, cfg.solver);
  auto results = run_parallel(cfg.n_reps, cfg.threads, [&](std::size_t b) {
    Rng rng = make_rng(cfg.sim.seed, {kRepTag, b});
    return run_one(ds, cfg, rng, &mpl);
  });
  return summarize(cfg, ReplicationMode::FixedData, mpl.beta, results);
}

}  // namespace

ReplicationReport run_replications(const StudyConfig& cfg) {
  cfg.check();
  SimConfig sim = cfg.sim;
  if (!sim.c0) {
    CalibrationOptions opts;
    opts.case4_raw_scale = sim.case4_raw_scale;
    sim.c0 = calibrate_c0(sim.covariate_case, sim.beta_true, sim.target_cr, sim.seed, opts).c0;
  }
  ReplicationReport rep;
  if (cfg.mode == ReplicationMode::FixedData) {
    Rng rng = make_rng(sim.seed, {kDataTag});
    const SurvivalDataset ds = gen_dataset(sim, rng);
    rep = run_fixed(ds, cfg);
  } else {
    auto results = run_parallel(cfg.n_reps, cfg.threads, [&](std::size_t b) {
      Rng rng = make_rng(sim.seed, {kRepTag, kDataTag, b});
      const SurvivalDataset ds = gen_dataset(sim, rng);
      return run_one(ds, cfg, rng, nullptr);
    });
    rep = summarize(cfg, ReplicationMode::Regenerate, sim.beta_true, results);
  }
  rep.c0 = *sim.c0;
  return rep;
}

ReplicationReport run_replications(const SurvivalDataset& ds, const StudyConfig& cfg) {
  if (cfg.n_reps < 2) throw InvalidArgument("n_reps must be at least 2");
  cfg.solver.check();
  ds.require_valid();
  return run_fixed(ds, cfg);
}

std::array<double, 5> fivenum(std::vector<double> values) {
  std::array<double, 5> out;
  if (values.empty()) {
    out.fill(std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double n4 = std::floor((n + 3.0) / 2.0) / 2.0;
  const double depth[5] = {1.0, n4, (n + 1.0) / 2.0, n + 1.0 - n4, n};
  for (int k = 0; k < 5; ++k) {
    const auto lo = static_cast<std::size_t>(std::floor(depth[k])) - 1;
    const auto hi = static_cast<std::size_t>(std::ceil(depth[k])) - 1;
    out[static_cast<std::size_t>(k)] = 0.5 * (values[lo] + values[hi]);
  }
  return out;
}

FiveNumberSummary five_number_summary(const SubsamplePlan& plan, const std::vector<int>& status) {
  if (plan.probs.size() != status.size()) throw InvalidArgument("plan and status lengths differ");
  std::vector<double> cens, unc;
  for (std::size_t i = 0; i < status.size(); ++i) (status[i] ? unc : cens).push_back(plan.probs[i]);
  FiveNumberSummary out;
  if (cens.empty()) out.warnings.emplace_back("no censored records");
  if (unc.empty()) out.warnings.emplace_back("no uncensored records");
  out.censored = fivenum(std::move(cens));
  out.uncensored = fivenum(std::move(unc));
  return out;
}

}  // namespace coxsub
