#include "coxsub/coxsub.h"

#include "coxsub/error.hpp"
#include "coxsub/simulation.hpp"

#include <chrono>
#include <cstring>
#include <memory>
#include <new>
#include <string>

using namespace coxsub;

struct coxsub_dataset {
  SurvivalDataset ds;
};

struct coxsub_fit {
  CoxFit fit;
  Vector se;
  double seconds = 0.0;
};

struct coxsub_two_step {
  TwoStepResult result;
};

struct coxsub_report {
  ReplicationReport report;
};

namespace {

thread_local std::string last_error;

coxsub_status fail(coxsub_status status, const char* message) {
  last_error = message;
  return status;
}

// Maps library exceptions onto status codes.
template <class F>
coxsub_status guarded(F&& body) {
  try {
    last_error.clear();
    return body();
  } catch (const ConvergenceError& e) {
    return fail(COXSUB_NOT_CONVERGED, e.what());
  } catch (const NumericalError& e) {
    return fail(COXSUB_NUMERICAL, e.what());
  } catch (const InvalidArgument& e) {
    return fail(COXSUB_INVALID_ARGUMENT, e.what());
  } catch (const IoError& e) {
    return fail(COXSUB_IO, e.what());
  } catch (const DataError& e) {
    return fail(COXSUB_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(COXSUB_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(COXSUB_INTERNAL, e.what());
  } catch (...) {
    return fail(COXSUB_INTERNAL, "unknown error");
  }
}

#define COXSUB_REQUIRE(cond, what) \
  if (!(cond)) return fail(COXSUB_INVALID_ARGUMENT, what)

coxsub_status copy_vector(const Vector& v, double* out) {
  COXSUB_REQUIRE(out, "output pointer is null");
  for (Eigen::Index j = 0; j < v.size(); ++j) out[j] = v(j);
  return COXSUB_OK;
}

coxsub_status copy_matrix(const Matrix& m, double* out) {
  COXSUB_REQUIRE(out, "output pointer is null");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i * m.cols() + j] = m(i, j);
  return COXSUB_OK;
}

SimConfig to_sim(const coxsub_sim_config& c) {
  SimConfig s;
  if (c.covariate_case < COXSUB_CASE_I || c.covariate_case > COXSUB_CASE_IV) {
    throw InvalidArgument("covariate case must be 1..4");
  }
  s.covariate_case = static_cast<CovariateCase>(static_cast<int>(c.covariate_case) - 1);
  s.n = c.n;
  if (c.beta) {
    if (c.p == 0) throw InvalidArgument("beta length p must be positive");
    s.beta_true = Eigen::Map<const Vector>(c.beta, static_cast<Eigen::Index>(c.p));
  }
  s.target_cr = c.target_cr;
  if (c.c0 > 0.0) s.c0 = c.c0;
  s.seed = c.seed;
  s.case4_raw_scale = c.case4_raw_scale != 0;
  s.check();
  return s;
}

Vector beta_of(const double* beta, std::size_t p) {
  if (!beta) throw InvalidArgument("beta pointer is null");
  return Eigen::Map<const Vector>(beta, static_cast<Eigen::Index>(p));
}

Vector model_se(const CoxFit& fit, std::size_t n) {
  const Matrix inv = spd_solve(fit.hessian, Matrix::Identity(fit.hessian.rows(), fit.hessian.cols()),
                               "information matrix");
  return (inv.diagonal() / static_cast<double>(n)).cwiseMax(0.0).cwiseSqrt();
}

StudyConfig to_study(const coxsub_study_options& o) {
  StudyConfig cfg;
  if (o.method < COXSUB_METHOD_LOPT || o.method > COXSUB_METHOD_FULL) throw InvalidArgument("unknown method");
  cfg.method = static_cast<Method>(o.method);
  cfg.r0 = o.r0;
  cfg.r = o.r;
  cfg.delta = o.delta;
  cfg.n_reps = o.n_reps;
  cfg.mode = o.regenerate ? ReplicationMode::Regenerate : ReplicationMode::FixedData;
  cfg.threads = o.threads == 0 ? 1 : o.threads;
  cfg.sim.seed = o.seed;
  return cfg;
}

}  // namespace

extern "C" {

const char* coxsub_last_error(void) { return last_error.c_str(); }

const char* coxsub_status_name(coxsub_status status) {
  switch (status) {
    case COXSUB_OK: return "ok";
    case COXSUB_INVALID_ARGUMENT: return "invalid argument";
    case COXSUB_IO: return "i/o error";
    case COXSUB_DATA: return "data error";
    case COXSUB_NUMERICAL: return "numerical error";
    case COXSUB_NOT_CONVERGED: return "not converged";
    case COXSUB_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* coxsub_version(void) { return "1.0.0"; }

coxsub_status coxsub_dataset_load_csv(const char* path, const coxsub_csv_schema* schema, coxsub_dataset** out) {
  COXSUB_REQUIRE(path && schema && out, "null argument");
  return guarded([&] {
    CsvSchema s;
    if (schema->time_column) s.time_column = schema->time_column;
    if (schema->status_column) s.status_column = schema->status_column;
    if (schema->n_covariates > 0 && !schema->covariate_columns) throw InvalidArgument("covariate list is null");
    for (std::size_t j = 0; j < schema->n_covariates; ++j) {
      if (!schema->covariate_columns[j]) throw InvalidArgument("covariate name is null");
      s.covariate_columns.emplace_back(schema->covariate_columns[j]);
    }
    if (schema->delimiter) s.delimiter = schema->delimiter;
    s.has_header = schema->has_header != 0;
    *out = new coxsub_dataset{load_csv(path, s)};
    return COXSUB_OK;
  });
}

coxsub_status coxsub_dataset_write_csv(const coxsub_dataset* ds, const char* path) {
  COXSUB_REQUIRE(ds && path, "null argument");
  return guarded([&] {
    write_csv(ds->ds, path);
    return COXSUB_OK;
  });
}

coxsub_status coxsub_dataset_from_arrays(const double* covariates, const double* time, const int* status, size_t n,
                                         size_t p, coxsub_dataset** out) {
  COXSUB_REQUIRE(out && time && status && (covariates || p == 0), "null argument");
  return guarded([&] {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Matrix x = p ? Matrix(Eigen::Map<const RowMajor>(covariates, static_cast<Eigen::Index>(n),
                                                     static_cast<Eigen::Index>(p)))
                 : Matrix(static_cast<Eigen::Index>(n), 0);
    Vector t = Eigen::Map<const Vector>(time, static_cast<Eigen::Index>(n));
    SurvivalDataset ds(std::move(x), std::move(t), std::vector<int>(status, status + n));
    ds.require_valid();
    *out = new coxsub_dataset{std::move(ds)};
    return COXSUB_OK;
  });
}

void coxsub_dataset_free(coxsub_dataset* ds) { delete ds; }
size_t coxsub_dataset_n(const coxsub_dataset* ds) { return ds ? ds->ds.n() : 0; }
size_t coxsub_dataset_p(const coxsub_dataset* ds) { return ds ? ds->ds.p() : 0; }
size_t coxsub_dataset_events(const coxsub_dataset* ds) { return ds ? ds->ds.event_count() : 0; }

coxsub_status coxsub_dataset_covariate_name(const coxsub_dataset* ds, size_t j, char* buf, size_t len) {
  COXSUB_REQUIRE(ds && buf && len > 0, "null argument");
  COXSUB_REQUIRE(j < ds->ds.p(), "covariate index out of range");
  const std::string& name = ds->ds.covariate_names()[j];
  const std::size_t k = std::min(len - 1, name.size());
  std::memcpy(buf, name.data(), k);
  buf[k] = '\0';
  return COXSUB_OK;
}

void coxsub_sim_config_default(coxsub_sim_config* cfg) {
  if (!cfg) return;
  const SimConfig d;
  cfg->covariate_case = COXSUB_CASE_I;
  cfg->n = d.n;
  cfg->beta = nullptr;
  cfg->p = 0;
  cfg->target_cr = d.target_cr;
  cfg->c0 = 0.0;
  cfg->seed = d.seed;
  cfg->case4_raw_scale = 0;
}

coxsub_status coxsub_simulate(const coxsub_sim_config* cfg, coxsub_dataset** out, double* c0_out) {
  COXSUB_REQUIRE(cfg && out, "null argument");
  return guarded([&] {
    SimConfig sim = to_sim(*cfg);
    if (!sim.c0) {
      CalibrationOptions opts;
      opts.case4_raw_scale = sim.case4_raw_scale;
      sim.c0 = calibrate_c0(sim.covariate_case, sim.beta_true, sim.target_cr, sim.seed, opts).c0;
    }
    Rng rng = make_rng(sim.seed);
    *out = new coxsub_dataset{gen_dataset(sim, rng)};
    if (c0_out) *c0_out = *sim.c0;
    return COXSUB_OK;
  });
}

coxsub_status coxsub_calibrate_c0(const coxsub_sim_config* cfg, double tol, const char* cache_dir, double* c0,
                                  double* achieved_cr) {
  COXSUB_REQUIRE(cfg && c0, "null argument");
  return guarded([&] {
    const SimConfig sim = to_sim(*cfg);
    CalibrationOptions opts;
    if (tol > 0.0) opts.tol = tol;
    if (cache_dir) opts.cache_dir = cache_dir;
    opts.case4_raw_scale = sim.case4_raw_scale;
    const auto res = calibrate_c0(sim.covariate_case, sim.beta_true, sim.target_cr, sim.seed, opts);
    *c0 = res.c0;
    if (achieved_cr) *achieved_cr = res.achieved_cr;
    return COXSUB_OK;
  });
}

void coxsub_solver_options_default(coxsub_solver_options* opts) {
  if (!opts) return;
  const SolverOptions d;
  opts->tol_score = d.tol_score;
  opts->tol_step = d.tol_step;
  opts->max_iter = d.max_iter;
  opts->step_halving_max = d.step_halving_max;
  opts->init = nullptr;
}

coxsub_status coxsub_fit_full(const coxsub_dataset* ds, const coxsub_solver_options* opts, coxsub_fit** out) {
  COXSUB_REQUIRE(ds && out, "null argument");
  return guarded([&] {
    SolverOptions s;
    if (opts) {
      s.tol_score = opts->tol_score;
      s.tol_step = opts->tol_step;
      s.max_iter = opts->max_iter;
      s.step_halving_max = opts->step_halving_max;
      if (opts->init) s.init = beta_of(opts->init, ds->ds.p());
    }
    s.check();
    const auto start = std::chrono::steady_clock::now();
    auto handle = std::make_unique<coxsub_fit>();
    handle->fit = newton_solve(ds->ds, Weights::unit(), std::nullopt, s, FitRole::FullMPL);
    handle->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    handle->se = model_se(handle->fit, ds->ds.n());
    const bool converged = handle->fit.converged;
    *out = handle.release();
    if (!converged) {
      return fail(COXSUB_NOT_CONVERGED, "Newton iterations exhausted before the score tolerance was met");
    }
    return COXSUB_OK;
  });
}

void coxsub_fit_free(coxsub_fit* fit) { delete fit; }
size_t coxsub_fit_p(const coxsub_fit* fit) { return fit ? static_cast<size_t>(fit->fit.beta.size()) : 0; }

coxsub_status coxsub_fit_beta(const coxsub_fit* fit, double* out) {
  COXSUB_REQUIRE(fit, "null fit");
  return copy_vector(fit->fit.beta, out);
}

coxsub_status coxsub_fit_se(const coxsub_fit* fit, double* out) {
  COXSUB_REQUIRE(fit, "null fit");
  return copy_vector(fit->se, out);
}

coxsub_status coxsub_fit_hessian(const coxsub_fit* fit, double* out) {
  COXSUB_REQUIRE(fit, "null fit");
  return copy_matrix(fit->fit.hessian, out);
}

int coxsub_fit_iterations(const coxsub_fit* fit) { return fit ? fit->fit.iterations : 0; }
int coxsub_fit_converged(const coxsub_fit* fit) { return fit && fit->fit.converged ? 1 : 0; }
double coxsub_fit_score_norm(const coxsub_fit* fit) { return fit ? fit->fit.final_score_norm : 0.0; }
double coxsub_fit_neg_logpl(const coxsub_fit* fit) { return fit ? fit->fit.neg_logpl : 0.0; }
double coxsub_fit_seconds(const coxsub_fit* fit) { return fit ? fit->seconds : 0.0; }

coxsub_status coxsub_breslow_write_csv(const coxsub_dataset* ds, const double* beta, const char* path) {
  COXSUB_REQUIRE(ds && path, "null argument");
  return guarded([&] {
    write_csv(breslow_cumhaz(ds->ds, beta_of(beta, ds->ds.p())), path);
    return COXSUB_OK;
  });
}

coxsub_status coxsub_breslow(const coxsub_dataset* ds, const double* beta, double* times, double* cumhaz, size_t cap,
                             size_t* size) {
  COXSUB_REQUIRE(ds && size, "null argument");
  return guarded([&] {
    const auto h = breslow_cumhaz(ds->ds, beta_of(beta, ds->ds.p()));
    *size = h.size();
    for (std::size_t k = 0; k < h.size() && k < cap; ++k) {
      if (times) times[k] = h.jump_times[k];
      if (cumhaz) cumhaz[k] = h.cumulative[k];
    }
    return COXSUB_OK;
  });
}

void coxsub_two_step_options_default(coxsub_two_step_options* opts) {
  if (!opts) return;
  const TwoStepOptions d;
  opts->r0 = d.r0;
  opts->r = d.r;
  opts->delta = d.delta;
  opts->criterion = COXSUB_LOPT;
  opts->seed = SimConfig().seed;
  opts->threads = 1;
}

coxsub_status coxsub_two_step_run(const coxsub_dataset* ds, const coxsub_two_step_options* opts,
                                  coxsub_two_step** out) {
  COXSUB_REQUIRE(ds && opts && out, "null argument");
  return guarded([&] {
    TwoStepOptions o;
    o.r0 = opts->r0;
    o.r = opts->r;
    o.delta = opts->delta;
    switch (opts->criterion) {
      case COXSUB_LOPT: o.criterion = Criterion::Lopt; break;
      case COXSUB_AOPT: o.criterion = Criterion::Aopt; break;
      case COXSUB_UNIF: o.criterion = Criterion::Unif; break;
      default: throw InvalidArgument("unknown criterion");
    }
    o.threads = opts->threads == 0 ? 1 : opts->threads;
    Rng rng = make_rng(opts->seed);
    auto handle = std::make_unique<coxsub_two_step>();
    handle->result = two_step(ds->ds, o, rng);
    const bool converged = handle->result.fit.converged;
    *out = handle.release();
    if (!converged) return fail(COXSUB_NOT_CONVERGED, "second-step fit: Newton iterations exhausted");
    return COXSUB_OK;
  });
}

void coxsub_two_step_free(coxsub_two_step* ts) { delete ts; }
size_t coxsub_two_step_p(const coxsub_two_step* ts) {
  return ts ? static_cast<size_t>(ts->result.fit.beta.size()) : 0;
}

coxsub_status coxsub_two_step_beta(const coxsub_two_step* ts, double* out) {
  COXSUB_REQUIRE(ts, "null handle");
  return copy_vector(ts->result.fit.beta, out);
}

coxsub_status coxsub_two_step_se(const coxsub_two_step* ts, double* out) {
  COXSUB_REQUIRE(ts, "null handle");
  COXSUB_REQUIRE(ts->result.covariance, "no covariance: the second-step fit did not converge");
  return copy_vector(ts->result.covariance->standard_errors, out);
}

coxsub_status coxsub_two_step_covariance(const coxsub_two_step* ts, double* out) {
  COXSUB_REQUIRE(ts, "null handle");
  COXSUB_REQUIRE(ts->result.covariance, "no covariance: the second-step fit did not converge");
  return copy_matrix(ts->result.covariance->sigma, out);
}

coxsub_status coxsub_two_step_pilot_beta(const coxsub_two_step* ts, double* out) {
  COXSUB_REQUIRE(ts && ts->result.pilot, "null handle");
  return copy_vector(ts->result.pilot->beta(), out);
}

coxsub_status coxsub_two_step_timings(const coxsub_two_step* ts, double out[5]) {
  COXSUB_REQUIRE(ts && out, "null argument");
  const auto& t = ts->result.timings;
  out[0] = t.pilot_fit;
  out[1] = t.probabilities;
  out[2] = t.draw;
  out[3] = t.second_fit;
  out[4] = t.covariance;
  return COXSUB_OK;
}

coxsub_status coxsub_two_step_probabilities(const coxsub_two_step* ts, double* out) {
  COXSUB_REQUIRE(ts && out, "null argument");
  std::memcpy(out, ts->result.plan.probs.data(), ts->result.plan.probs.size() * sizeof(double));
  return COXSUB_OK;
}

int coxsub_two_step_fell_back_to_uniform(const coxsub_two_step* ts) {
  return ts && ts->result.plan.diagnostics.fell_back_to_uniform ? 1 : 0;
}

coxsub_status coxsub_two_step_five_number_summary(const coxsub_two_step* ts, const coxsub_dataset* ds,
                                                  double censored[5], double uncensored[5]) {
  COXSUB_REQUIRE(ts && ds && censored && uncensored, "null argument");
  return guarded([&] {
    const auto s = five_number_summary(ts->result.plan, ds->ds.status());
    for (int k = 0; k < 5; ++k) {
      censored[k] = s.censored[static_cast<std::size_t>(k)];
      uncensored[k] = s.uncensored[static_cast<std::size_t>(k)];
    }
    return COXSUB_OK;
  });
}

void coxsub_study_options_default(coxsub_study_options* opts) {
  if (!opts) return;
  const StudyConfig d;
  opts->method = COXSUB_METHOD_LOPT;
  opts->r0 = d.r0;
  opts->r = d.r;
  opts->delta = d.delta;
  opts->n_reps = d.n_reps;
  opts->regenerate = 0;
  opts->seed = d.sim.seed;
  opts->threads = 1;
}

coxsub_status coxsub_study_run(const coxsub_sim_config* sim, const coxsub_study_options* opts, coxsub_report** out) {
  COXSUB_REQUIRE(sim && opts && out, "null argument");
  return guarded([&] {
    StudyConfig cfg = to_study(*opts);
    const std::uint64_t seed = cfg.sim.seed;
    cfg.sim = to_sim(*sim);
    cfg.sim.seed = seed;
    *out = new coxsub_report{run_replications(cfg)};
    return COXSUB_OK;
  });
}

coxsub_status coxsub_study_run_dataset(const coxsub_dataset* ds, const coxsub_study_options* opts,
                                       coxsub_report** out) {
  COXSUB_REQUIRE(ds && opts && out, "null argument");
  return guarded([&] {
    const StudyConfig cfg = to_study(*opts);
    *out = new coxsub_report{run_replications(ds->ds, cfg)};
    return COXSUB_OK;
  });
}

void coxsub_report_free(coxsub_report* rep) { delete rep; }
size_t coxsub_report_p(const coxsub_report* rep) {
  return rep ? static_cast<size_t>(rep->report.target.size()) : 0;
}
size_t coxsub_report_n_reps(const coxsub_report* rep) { return rep ? rep->report.n_reps : 0; }
size_t coxsub_report_failures(const coxsub_report* rep) { return rep ? rep->report.failures : 0; }
double coxsub_report_mse(const coxsub_report* rep) { return rep ? rep->report.mse : 0.0; }
double coxsub_report_mse_se(const coxsub_report* rep) { return rep ? rep->report.mse_se : 0.0; }
double coxsub_report_c0(const coxsub_report* rep) { return rep ? rep->report.c0 : 0.0; }
double coxsub_report_mean_seconds(const coxsub_report* rep) { return rep ? rep->report.mean_seconds : 0.0; }

coxsub_status coxsub_report_target(const coxsub_report* rep, double* out) {
  COXSUB_REQUIRE(rep, "null report");
  return copy_vector(rep->report.target, out);
}
coxsub_status coxsub_report_bias(const coxsub_report* rep, double* out) {
  COXSUB_REQUIRE(rep, "null report");
  return copy_vector(rep->report.bias, out);
}
coxsub_status coxsub_report_ese(const coxsub_report* rep, double* out) {
  COXSUB_REQUIRE(rep, "null report");
  return copy_vector(rep->report.ese, out);
}
coxsub_status coxsub_report_mean_se(const coxsub_report* rep, double* out) {
  COXSUB_REQUIRE(rep, "null report");
  return copy_vector(rep->report.mean_se, out);
}
coxsub_status coxsub_report_coverage(const coxsub_report* rep, double* out) {
  COXSUB_REQUIRE(rep, "null report");
  return copy_vector(rep->report.coverage, out);
}

coxsub_status coxsub_report_timings(const coxsub_report* rep, double out[5]) {
  COXSUB_REQUIRE(rep && out, "null argument");
  const auto& t = rep->report.mean_timings;
  out[0] = t.pilot_fit;
  out[1] = t.probabilities;
  out[2] = t.draw;
  out[3] = t.second_fit;
  out[4] = t.covariance;
  return COXSUB_OK;
}

}  // extern "C"
