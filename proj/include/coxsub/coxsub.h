/*
 * coxsub: Cox proportional hazards fitting with optimal subsampling.
 *
 * C interface. Every function returns a coxsub_status; on failure the
 * message is available from coxsub_last_error() on the same thread.
 * Handles are opaque and must be released with their _free function.
 * Arrays passed in or out are caller-owned; matrices are row-major.
 */
#ifndef COXSUB_H
#define COXSUB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(COXSUB_BUILDING)
#    define COXSUB_API __declspec(dllexport)
#  else
#    define COXSUB_API __declspec(dllimport)
#  endif
#else
#  define COXSUB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum coxsub_status {
  COXSUB_OK = 0,
  COXSUB_INVALID_ARGUMENT = 1,
  COXSUB_IO = 2,
  COXSUB_DATA = 3,
  COXSUB_NUMERICAL = 4,
  COXSUB_NOT_CONVERGED = 5,
  COXSUB_INTERNAL = 6
} coxsub_status;

typedef struct coxsub_dataset coxsub_dataset;
typedef struct coxsub_fit coxsub_fit;
typedef struct coxsub_two_step coxsub_two_step;
typedef struct coxsub_report coxsub_report;

/* Message of the last failed call on this thread; "" when none. */
COXSUB_API const char* coxsub_last_error(void);
COXSUB_API const char* coxsub_status_name(coxsub_status status);
COXSUB_API const char* coxsub_version(void);

/* ---- datasets ---- */

typedef struct coxsub_csv_schema {
  const char* time_column;         /* NULL means "time" */
  const char* status_column;       /* NULL means "status" */
  const char* const* covariate_columns;
  size_t n_covariates;
  char delimiter;                  /* 0 means ',' */
  int has_header;
} coxsub_csv_schema;

COXSUB_API coxsub_status coxsub_dataset_load_csv(const char* path, const coxsub_csv_schema* schema,
                                                 coxsub_dataset** out);
COXSUB_API coxsub_status coxsub_dataset_write_csv(const coxsub_dataset* ds, const char* path);
/* covariates: n x p row-major. */
COXSUB_API coxsub_status coxsub_dataset_from_arrays(const double* covariates, const double* time,
                                                    const int* status, size_t n, size_t p,
                                                    coxsub_dataset** out);
COXSUB_API void coxsub_dataset_free(coxsub_dataset* ds);
COXSUB_API size_t coxsub_dataset_n(const coxsub_dataset* ds);
COXSUB_API size_t coxsub_dataset_p(const coxsub_dataset* ds);
COXSUB_API size_t coxsub_dataset_events(const coxsub_dataset* ds);
/* Copies the name of covariate j into buf (NUL-terminated, truncated). */
COXSUB_API coxsub_status coxsub_dataset_covariate_name(const coxsub_dataset* ds, size_t j, char* buf,
                                                       size_t len);

/* ---- simulation ---- */

typedef enum coxsub_case { COXSUB_CASE_I = 1, COXSUB_CASE_II, COXSUB_CASE_III, COXSUB_CASE_IV } coxsub_case;

typedef struct coxsub_sim_config {
  coxsub_case covariate_case;
  size_t n;
  const double* beta;   /* NULL means (-1, -0.5, 0, 0.5, 1) */
  size_t p;             /* length of beta; ignored when beta is NULL */
  double target_cr;
  double c0;            /* <= 0: calibrate to target_cr */
  uint64_t seed;
  int case4_raw_scale;
} coxsub_sim_config;

COXSUB_API void coxsub_sim_config_default(coxsub_sim_config* cfg);
/* c0_out receives the censoring bound actually used (may be NULL). */
COXSUB_API coxsub_status coxsub_simulate(const coxsub_sim_config* cfg, coxsub_dataset** out, double* c0_out);
/* cache_dir may be NULL. achieved_cr may be NULL. */
COXSUB_API coxsub_status coxsub_calibrate_c0(const coxsub_sim_config* cfg, double tol, const char* cache_dir,
                                             double* c0, double* achieved_cr);

/* ---- full-data fit ---- */

typedef struct coxsub_solver_options {
  double tol_score;
  double tol_step;
  int max_iter;
  int step_halving_max;
  const double* init;   /* NULL: start at zero */
} coxsub_solver_options;

COXSUB_API void coxsub_solver_options_default(coxsub_solver_options* opts);
/* opts may be NULL. A fit that stops short of tolerance still returns a
 * handle together with COXSUB_NOT_CONVERGED. */
COXSUB_API coxsub_status coxsub_fit_full(const coxsub_dataset* ds, const coxsub_solver_options* opts,
                                         coxsub_fit** out);
COXSUB_API void coxsub_fit_free(coxsub_fit* fit);
COXSUB_API size_t coxsub_fit_p(const coxsub_fit* fit);
COXSUB_API coxsub_status coxsub_fit_beta(const coxsub_fit* fit, double* out);
/* Model-based standard errors sqrt(diag(H^-1) / n). */
COXSUB_API coxsub_status coxsub_fit_se(const coxsub_fit* fit, double* out);
/* p x p, normalized by 1/n. */
COXSUB_API coxsub_status coxsub_fit_hessian(const coxsub_fit* fit, double* out);
COXSUB_API int coxsub_fit_iterations(const coxsub_fit* fit);
COXSUB_API int coxsub_fit_converged(const coxsub_fit* fit);
COXSUB_API double coxsub_fit_score_norm(const coxsub_fit* fit);
COXSUB_API double coxsub_fit_neg_logpl(const coxsub_fit* fit);
COXSUB_API double coxsub_fit_seconds(const coxsub_fit* fit);

/* ---- Breslow cumulative hazard ---- */

/* Writes `time,cumhaz` at each jump of the estimator evaluated at beta (length p). */
COXSUB_API coxsub_status coxsub_breslow_write_csv(const coxsub_dataset* ds, const double* beta, const char* path);
/* Fills up to cap jump times and cumulative values; *size gets the jump count. */
COXSUB_API coxsub_status coxsub_breslow(const coxsub_dataset* ds, const double* beta, double* times,
                                        double* cumhaz, size_t cap, size_t* size);

/* ---- two-step subsampling ---- */

typedef enum coxsub_criterion { COXSUB_LOPT = 0, COXSUB_AOPT = 1, COXSUB_UNIF = 2 } coxsub_criterion;

typedef struct coxsub_two_step_options {
  size_t r0;
  size_t r;
  double delta;
  coxsub_criterion criterion;
  uint64_t seed;
  unsigned threads;
} coxsub_two_step_options;

COXSUB_API void coxsub_two_step_options_default(coxsub_two_step_options* opts);
COXSUB_API coxsub_status coxsub_two_step_run(const coxsub_dataset* ds, const coxsub_two_step_options* opts,
                                             coxsub_two_step** out);
COXSUB_API void coxsub_two_step_free(coxsub_two_step* ts);
COXSUB_API size_t coxsub_two_step_p(const coxsub_two_step* ts);
COXSUB_API coxsub_status coxsub_two_step_beta(const coxsub_two_step* ts, double* out);
COXSUB_API coxsub_status coxsub_two_step_se(const coxsub_two_step* ts, double* out);
/* p x p sandwich covariance. */
COXSUB_API coxsub_status coxsub_two_step_covariance(const coxsub_two_step* ts, double* out);
COXSUB_API coxsub_status coxsub_two_step_pilot_beta(const coxsub_two_step* ts, double* out);
/* pilot fit, probabilities, draw, second fit, covariance (seconds). */
COXSUB_API coxsub_status coxsub_two_step_timings(const coxsub_two_step* ts, double out[5]);
/* n sampling probabilities. */
COXSUB_API coxsub_status coxsub_two_step_probabilities(const coxsub_two_step* ts, double* out);
COXSUB_API int coxsub_two_step_fell_back_to_uniform(const coxsub_two_step* ts);
/* Five numbers of the probabilities for censored and uncensored records. */
COXSUB_API coxsub_status coxsub_two_step_five_number_summary(const coxsub_two_step* ts, const coxsub_dataset* ds,
                                                             double censored[5], double uncensored[5]);

/* ---- replication studies ---- */

typedef enum coxsub_method {
  COXSUB_METHOD_LOPT = 0,
  COXSUB_METHOD_AOPT = 1,
  COXSUB_METHOD_UNIF = 2,
  COXSUB_METHOD_FULL = 3
} coxsub_method;

typedef struct coxsub_study_options {
  coxsub_method method;
  size_t r0;
  size_t r;
  double delta;
  size_t n_reps;
  int regenerate;   /* nonzero: fresh data per replication, target = true beta */
  uint64_t seed;
  unsigned threads;
} coxsub_study_options;

COXSUB_API void coxsub_study_options_default(coxsub_study_options* opts);
COXSUB_API coxsub_status coxsub_study_run(const coxsub_sim_config* sim, const coxsub_study_options* opts,
                                          coxsub_report** out);
/* Fixed-data study on an existing dataset, relative to its full-data fit. */
COXSUB_API coxsub_status coxsub_study_run_dataset(const coxsub_dataset* ds, const coxsub_study_options* opts,
                                                  coxsub_report** out);
COXSUB_API void coxsub_report_free(coxsub_report* rep);
COXSUB_API size_t coxsub_report_p(const coxsub_report* rep);
COXSUB_API size_t coxsub_report_n_reps(const coxsub_report* rep);
COXSUB_API size_t coxsub_report_failures(const coxsub_report* rep);
COXSUB_API double coxsub_report_mse(const coxsub_report* rep);
COXSUB_API double coxsub_report_mse_se(const coxsub_report* rep);
COXSUB_API double coxsub_report_c0(const coxsub_report* rep);
COXSUB_API double coxsub_report_mean_seconds(const coxsub_report* rep);
COXSUB_API coxsub_status coxsub_report_target(const coxsub_report* rep, double* out);
COXSUB_API coxsub_status coxsub_report_bias(const coxsub_report* rep, double* out);
COXSUB_API coxsub_status coxsub_report_ese(const coxsub_report* rep, double* out);
COXSUB_API coxsub_status coxsub_report_mean_se(const coxsub_report* rep, double* out);
COXSUB_API coxsub_status coxsub_report_coverage(const coxsub_report* rep, double* out);
COXSUB_API coxsub_status coxsub_report_timings(const coxsub_report* rep, double out[5]);

#ifdef __cplusplus
}
#endif

#endif /* COXSUB_H */
