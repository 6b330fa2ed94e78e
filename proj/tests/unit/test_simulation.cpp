#include "coxsub/error.hpp"
#include "coxsub/simulation.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace coxsub;

namespace {

Matrix sample_covariance(const Matrix& x) {
  const Matrix centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

double pit_pvalue(CovariateCase c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Vector beta = default_beta();
  const Matrix x = gen_covariates(c, n, 5, rng);
  const Vector t = gen_failure_times(x, beta, rng);
  std::vector<double> lam(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    lam[i] = 0.25 * t(k) * t(k) * std::exp(x.row(k).dot(beta));
  }
  return oracle::ks_pvalue(lam, [](double v) { return v <= 0.0 ? 0.0 : -std::expm1(-v); });
}

}  // namespace

TEST_CASE("covariate moments") {
  const std::size_t n = 1000000;
  Rng rng(1);
  SUBCASE("Case I") {
    const Matrix x = gen_covariates(CovariateCase::I, n, 5, rng);
    CHECK(x.minCoeff() > -1.0);
    CHECK(x.maxCoeff() < 1.0);
    for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(x.col(j).mean()) <= 0.004);
    const Matrix cov = sample_covariance(x);
    CHECK((cov - Matrix::Identity(5, 5) / 3.0).cwiseAbs().maxCoeff() < 0.005);
  }
  SUBCASE("Case II mixture covariance") {
    const Matrix x = gen_covariates(CovariateCase::II, n, 5, rng);
    const Matrix expected = ar1_matrix(5) + Matrix::Ones(5, 5);
    CHECK((sample_covariance(x) - expected).cwiseAbs().maxCoeff() < 0.02);
    for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(x.col(j).mean()) < 0.01);
  }
  SUBCASE("Case III") {
    const Matrix x = gen_covariates(CovariateCase::III, n, 5, rng);
    CHECK(x.minCoeff() >= 0.0);
    const double sd = 0.5 / std::sqrt(static_cast<double>(n));
    for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(x.col(j).mean() - 0.5) <= 3.0 * sd);
  }
  SUBCASE("Case IV has covariance U, raw scale 1.25 U") {
    const Matrix x = gen_covariates(CovariateCase::IV, n, 5, rng);
    CHECK((sample_covariance(x) - ar1_matrix(5)).cwiseAbs().maxCoeff() < 0.02);
    const Matrix raw = gen_covariates(CovariateCase::IV, n, 5, rng, true);
    CHECK((sample_covariance(raw) - 1.25 * ar1_matrix(5)).cwiseAbs().maxCoeff() < 0.03);
  }
}

TEST_CASE("failure time inversion") {
  CHECK(failure_time(std::exp(-0.25), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  double prev = std::numeric_limits<double>::infinity();
  for (double eta = -5.0; eta <= 5.0; eta += 0.5) {
    const double t = failure_time(0.3, eta);
    CHECK(t < prev);
    CHECK(0.25 * t * t * std::exp(eta) == doctest::Approx(-std::log(0.3)).epsilon(1e-13));
    prev = t;
  }
}

TEST_CASE("cumulative hazard at the failure time is standard exponential") {
  for (auto c : {CovariateCase::I, CovariateCase::II, CovariateCase::III, CovariateCase::IV}) {
    const double p = pit_pvalue(c, 20000, 40 + static_cast<int>(c));
    MESSAGE("case " << std::string(to_string(c)) << " KS p-value " << p);
    CHECK(p > 0.001);
  }
}

TEST_CASE("KS helper rejects a wrong law") {
  Rng rng(2);
  boost::random::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(5000);
  for (auto& x : v) x = u(rng) * 2.0;
  CHECK(oracle::ks_pvalue(v, [](double x) { return -std::expm1(-x); }) < 1e-6);
}

TEST_CASE("censoring calibration") {
  const Vector beta = default_beta();
  CalibrationOptions opts;
  SUBCASE("larger targets need smaller bounds") {
    double prev = std::numeric_limits<double>::infinity();
    for (double cr : {0.1, 0.2, 0.4, 0.6, 0.8}) {
      const auto res = calibrate_c0(CovariateCase::I, beta, cr, 11, opts);
      CHECK(res.c0 < prev);
      CHECK(std::abs(res.achieved_cr - cr) <= opts.tol);
      prev = res.c0;
    }
  }
  SUBCASE("same seed, same answer") {
    const auto a = calibrate_c0(CovariateCase::I, beta, 0.5, 3, opts);
    const auto b = calibrate_c0(CovariateCase::I, beta, 0.5, 3, opts);
    CHECK(a.c0 == b.c0);
    CHECK_FALSE(a.from_cache);
  }
  SUBCASE("fresh data at the calibrated bound hits the target") {
    SimConfig cfg;
    cfg.covariate_case = CovariateCase::III;
    cfg.n = 1000000;
    cfg.target_cr = 0.2;
    cfg.c0 = calibrate_c0(cfg.covariate_case, beta, 0.2, 5, opts).c0;
    Rng rng(6);
    const auto ds = gen_dataset(cfg, rng);
    CHECK(std::abs(ds.censoring_rate() - 0.2) <= 0.01);
  }
  SUBCASE("cache round trip") {
    oracle::TempDir dir;
    opts.cache_dir = dir.path();
    const auto a = calibrate_c0(CovariateCase::II, beta, 0.3, 9, opts);
    const auto b = calibrate_c0(CovariateCase::II, beta, 0.3, 9, opts);
    CHECK_FALSE(a.from_cache);
    CHECK(b.from_cache);
    CHECK(a.c0 == b.c0);
    const auto other = calibrate_c0(CovariateCase::II, beta, 0.31, 9, opts);
    CHECK_FALSE(other.from_cache);
  }
  SUBCASE("targets outside (0.01, 0.99) are rejected") {
    CHECK_THROWS_AS(calibrate_c0(CovariateCase::I, beta, 0.0, 1, opts), InvalidArgument);
    CHECK_THROWS_AS(calibrate_c0(CovariateCase::I, beta, 0.995, 1, opts), InvalidArgument);
  }
}

TEST_CASE("generated datasets") {
  SUBCASE("events are uncensored failures") {
    SimConfig cfg;
    cfg.n = 5000;
    cfg.c0 = 3.0;
    Rng rng(12);
    const auto ds = gen_dataset(cfg, rng);
    CHECK(ds.valid());
    CHECK(ds.p() == 5);
    for (std::size_t i = 0; i < ds.n(); ++i) {
      CHECK(ds.time()(static_cast<Eigen::Index>(i)) <= 3.0);
    }
  }
  SUBCASE("seeded generation is deterministic") {
    SimConfig cfg;
    cfg.n = 2000;
    cfg.c0 = 5.0;
    Rng a(13), b(13);
    const auto x = gen_dataset(cfg, a);
    const auto y = gen_dataset(cfg, b);
    CHECK(x.covariates() == y.covariates());
    CHECK(x.time() == y.time());
    CHECK(x.status() == y.status());
  }
  SUBCASE("zero coefficients make times independent of covariates") {
    SimConfig cfg;
    cfg.n = 100000;
    cfg.beta_true = Vector::Zero(5);
    cfg.c0 = 4.0;
    Rng rng(14);
    const auto ds = gen_dataset(cfg, rng);
    const Vector y = ds.time().array() - ds.time().mean();
    for (Eigen::Index j = 0; j < 5; ++j) {
      const Vector xj = ds.covariates().col(j).array() - ds.covariates().col(j).mean();
      const double rho = y.dot(xj) / (y.norm() * xj.norm());
      CHECK(std::abs(rho) < 3.0 / std::sqrt(100000.0));
    }
  }
  SUBCASE("full fit lands near the truth") {
    SimConfig cfg;
    cfg.c0 = calibrate_c0(CovariateCase::I, cfg.beta_true, 0.2, cfg.seed).c0;
    Rng rng(15);
    const auto ds = gen_dataset(cfg, rng);
    const auto fit = newton_solve(ds);
    REQUIRE(fit.converged);
    CHECK((fit.beta - cfg.beta_true).cwiseAbs().maxCoeff() < 0.05);
  }
}

TEST_CASE("five-number summary") {
  SUBCASE("Tukey hinges") {
    const auto a = fivenum({1, 2, 3, 4});
    CHECK(a == std::array<double, 5>{1, 1.5, 2.5, 3.5, 4});
    const auto b = fivenum({5, 4, 3, 2, 1});
    CHECK(b == std::array<double, 5>{1, 2, 3, 4, 5});
    const auto c = fivenum({1, 2, 3, 4, 5, 6});
    CHECK(c == std::array<double, 5>{1, 2, 3.5, 5, 6});
    const auto d = fivenum({7});
    CHECK(d == std::array<double, 5>{7, 7, 7, 7, 7});
  }
  SUBCASE("uniform plan") {
    const auto plan = SubsamplePlan::uniform(8);
    const auto s = five_number_summary(plan, {1, 0, 1, 0, 1, 1, 0, 1});
    for (double v : s.censored) CHECK(v == 0.125);
    for (double v : s.uncensored) CHECK(v == 0.125);
    CHECK(s.warnings.empty());
  }
  SUBCASE("empty group gives NaN and a warning") {
    const auto s = five_number_summary(SubsamplePlan::uniform(3), {1, 1, 1});
    for (double v : s.censored) CHECK(std::isnan(v));
    CHECK_FALSE(s.warnings.empty());
  }
}

TEST_CASE("replication reports") {
  SimConfig sim;
  sim.n = 20000;
  sim.c0 = 9.8;
  Rng rng(16);
  const auto ds = gen_dataset(sim, rng);
  StudyConfig cfg;
  cfg.sim = sim;
  cfg.r0 = 200;
  cfg.r = 400;
  cfg.n_reps = 30;

  SUBCASE("full fit against itself has zero MSE") {
    cfg.method = Method::FullMPL;
    cfg.n_reps = 2;
    const auto rep = run_replications(ds, cfg);
    CHECK(rep.mse == 0.0);
    CHECK(rep.failures == 0);
  }
  SUBCASE("MSE decomposes into bias and spread") {
    const auto rep = run_replications(ds, cfg);
    const double k = static_cast<double>(rep.estimates.size());
    const double identity = rep.bias.squaredNorm() + rep.ese.squaredNorm() * (k - 1.0) / k;
    CHECK(std::abs(rep.mse - identity) <= 1e-10 * std::max(1.0, rep.mse));
    for (Eigen::Index j = 0; j < rep.coverage.size(); ++j) {
      CHECK(rep.coverage(j) >= 0.0);
      CHECK(rep.coverage(j) <= 1.0);
    }
    CHECK(rep.mse >= 0.0);
    CHECK(rep.target == newton_solve(ds).beta);
  }
  SUBCASE("reports are deterministic and thread-count free") {
    const auto a = run_replications(ds, cfg);
    cfg.threads = 3;
    const auto b = run_replications(ds, cfg);
    REQUIRE(a.estimates.size() == b.estimates.size());
    for (std::size_t k = 0; k < a.estimates.size(); ++k) CHECK(a.estimates[k] == b.estimates[k]);
    CHECK(a.mse == b.mse);
    CHECK(a.coverage == b.coverage);
  }
  SUBCASE("regenerate mode targets the truth") {
    cfg.mode = ReplicationMode::Regenerate;
    cfg.n_reps = 4;
    cfg.sim.n = 5000;
    const auto rep = run_replications(cfg);
    CHECK(rep.target == sim.beta_true);
    CHECK(rep.estimates.size() + rep.failures == 4);
  }
  SUBCASE("fewer than two replications is rejected") {
    cfg.n_reps = 1;
    CHECK_THROWS_AS(run_replications(ds, cfg), InvalidArgument);
  }
}
