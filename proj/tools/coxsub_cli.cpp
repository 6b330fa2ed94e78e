// coxsub command-line tool. Talks to the library only through coxsub.h.

#include "coxsub/coxsub.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr std::uint64_t kDefaultSeed = 20240601;

struct Failure {
  int code;
  std::string message;
};

int exit_code_for(coxsub_status s) {
  switch (s) {
    case COXSUB_OK: return kExitOk;
    case COXSUB_INVALID_ARGUMENT: return kExitUsage;
    case COXSUB_NUMERICAL:
    case COXSUB_NOT_CONVERGED: return kExitNumerical;
    default: return kExitFailure;
  }
}

void check(coxsub_status s, const std::string& context = {}) {
  if (s == COXSUB_OK) return;
  std::string msg = coxsub_last_error();
  if (!context.empty()) msg = context + ": " + msg;
  throw Failure{exit_code_for(s), msg};
}

[[noreturn]] void usage(const std::string& message) { throw Failure{kExitUsage, message}; }

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using DatasetPtr = std::unique_ptr<coxsub_dataset, Deleter<coxsub_dataset, coxsub_dataset_free>>;
using FitPtr = std::unique_ptr<coxsub_fit, Deleter<coxsub_fit, coxsub_fit_free>>;
using TwoStepPtr = std::unique_ptr<coxsub_two_step, Deleter<coxsub_two_step, coxsub_two_step_free>>;
using ReportPtr = std::unique_ptr<coxsub_report, Deleter<coxsub_report, coxsub_report_free>>;

struct Global {
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 1;
  std::string format = "json";
  std::string out;
};

struct DataOptions {
  std::string path;
  std::string time_col = "time";
  std::string status_col = "status";
  std::optional<std::vector<std::string>> covariates;
  char delimiter = ',';
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data,-d", d.path, "Input CSV (header row required)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--time-col", d.time_col, "Name of the time column");
  cmd->add_option("--status-col", d.status_col, "Name of the event indicator column");
  cmd->add_option("--covariates", d.covariates,
                  "Covariate columns (default: every column other than time and status)")
      ->delimiter(',')
      ->expected(1, -1);
  cmd->add_option("--delimiter", d.delimiter, "Field delimiter");
}

std::vector<std::string> split_header(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

DatasetPtr load_dataset(const DataOptions& d) {
  std::vector<std::string> covs;
  if (d.covariates) {
    covs = *d.covariates;
    if (covs.empty() || (covs.size() == 1 && covs[0].empty())) usage("--covariates: covariate list is empty");
  } else {
    std::ifstream in(d.path);
    std::string header;
    if (!in || !std::getline(in, header)) throw Failure{kExitFailure, "cannot read header of " + d.path};
    for (auto& name : split_header(header, d.delimiter)) {
      if (name != d.time_col && name != d.status_col) covs.push_back(name);
    }
    if (covs.empty()) usage("--data: file has no covariate columns");
  }
  std::vector<const char*> names;
  for (auto& c : covs) names.push_back(c.c_str());
  coxsub_csv_schema schema{d.time_col.c_str(), d.status_col.c_str(), names.data(), names.size(), d.delimiter, 1};
  coxsub_dataset* ds = nullptr;
  check(coxsub_dataset_load_csv(d.path.c_str(), &schema, &ds), "--data " + d.path);
  return DatasetPtr(ds);
}

std::vector<std::string> covariate_names(const coxsub_dataset* ds) {
  std::vector<std::string> out;
  char buf[256];
  for (std::size_t j = 0; j < coxsub_dataset_p(ds); ++j) {
    check(coxsub_dataset_covariate_name(ds, j, buf, sizeof buf));
    out.emplace_back(buf);
  }
  return out;
}

coxsub_case parse_case(const std::string& text) {
  if (text == "I" || text == "i" || text == "1") return COXSUB_CASE_I;
  if (text == "II" || text == "ii" || text == "2") return COXSUB_CASE_II;
  if (text == "III" || text == "iii" || text == "3") return COXSUB_CASE_III;
  if (text == "IV" || text == "iv" || text == "4") return COXSUB_CASE_IV;
  usage("--case: expected I, II, III or IV, got '" + text + "'");
}

const char* case_name(coxsub_case c) {
  static const char* names[] = {"", "I", "II", "III", "IV"};
  return names[c];
}

coxsub_criterion parse_criterion(const std::string& text) {
  if (text == "lopt") return COXSUB_LOPT;
  if (text == "aopt") return COXSUB_AOPT;
  if (text == "unif") return COXSUB_UNIF;
  usage("--criterion: expected lopt, aopt or unif, got '" + text + "'");
}

coxsub_method parse_method(const std::string& text) {
  if (text == "lopt") return COXSUB_METHOD_LOPT;
  if (text == "aopt") return COXSUB_METHOD_AOPT;
  if (text == "unif") return COXSUB_METHOD_UNIF;
  if (text == "full") return COXSUB_METHOD_FULL;
  usage("--methods: expected lopt, aopt, unif or full, got '" + text + "'");
}

const char* method_name(coxsub_method m) {
  static const char* names[] = {"lopt", "aopt", "unif", "full"};
  return names[m];
}

// Exclusive (0, 1) check for rates.
const auto OpenUnit = CLI::Validator(
    [](std::string& s) -> std::string {
      double v = 0.0;
      try {
        v = std::stod(s);
      } catch (...) {
        return "not a number: " + s;
      }
      return v > 0.0 && v < 1.0 ? std::string() : "value " + s + " must lie strictly between 0 and 1";
    },
    "(0,1)");

void emit(const Global& g, const std::string& text) {
  if (g.out.empty() || g.out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream file(g.out);
  if (!file) throw Failure{kExitFailure, "cannot write " + g.out};
  file << text;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Flattens objects of scalars / equal-length arrays into a CSV table.
std::string to_csv(const json& rows) {
  std::ostringstream out;
  if (rows.empty()) return "";
  std::vector<std::string> cols;
  for (auto it = rows[0].begin(); it != rows[0].end(); ++it) cols.push_back(it.key());
  for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto& v = row.contains(cols[k]) ? row[cols[k]] : json();
      if (k) out << ',';
      if (v.is_number()) out << fmt(v.get<double>());
      else if (v.is_string()) out << v.get<std::string>();
      else if (v.is_boolean()) out << (v.get<bool>() ? "true" : "false");
      else if (v.is_null()) out << "NA";
      else out << '"' << v.dump() << '"';
    }
    out << '\n';
  }
  return out.str();
}

std::string render(const Global& g, const json& doc, const json& csv_rows) {
  if (g.format == "csv") return to_csv(csv_rows);
  return doc.dump(2) + "\n";
}

std::vector<double> read_vec(std::size_t p, coxsub_status (*getter)(const coxsub_report*, double*),
                             const coxsub_report* rep) {
  std::vector<double> v(p);
  check(getter(rep, v.data()));
  return v;
}

// ---- simulate ----

struct SimulateArgs {
  std::string case_name = "I";
  std::size_t n = 1000;
  double cr = 0.2;
  double c0 = 0.0;
  std::vector<double> beta;
  bool raw_scale = false;
  std::string out;
};

coxsub_sim_config make_sim(const std::string& case_text, std::size_t n, double cr, double c0,
                           const std::vector<double>& beta, bool raw_scale, std::uint64_t seed) {
  coxsub_sim_config cfg;
  coxsub_sim_config_default(&cfg);
  cfg.covariate_case = parse_case(case_text);
  cfg.n = n;
  cfg.target_cr = cr;
  cfg.c0 = c0;
  cfg.seed = seed;
  cfg.case4_raw_scale = raw_scale ? 1 : 0;
  if (!beta.empty()) {
    cfg.beta = beta.data();
    cfg.p = beta.size();
  }
  return cfg;
}

// The config only borrows the coefficient buffer.
coxsub_sim_config make_sim(const std::string&, std::size_t, double, double, std::vector<double>&&, bool,
                           std::uint64_t) = delete;

std::vector<double> default_beta() { return {-1.0, -0.5, 0.0, 0.5, 1.0}; }

int run_simulate(const Global& g, const SimulateArgs& a) {
  const auto beta = a.beta.empty() ? default_beta() : a.beta;
  const auto cfg = make_sim(a.case_name, a.n, a.cr, a.c0, beta, a.raw_scale, g.seed);
  coxsub_dataset* raw = nullptr;
  double c0 = 0.0;
  check(coxsub_simulate(&cfg, &raw, &c0), "simulate");
  DatasetPtr ds(raw);
  check(coxsub_dataset_write_csv(ds.get(), a.out.c_str()), "-o " + a.out);
  const double n = static_cast<double>(coxsub_dataset_n(ds.get()));
  json side;
  side["schema"] = 1;
  side["case"] = case_name(cfg.covariate_case);
  side["n"] = a.n;
  side["beta_true"] = beta;
  side["target_cr"] = a.cr;
  side["c0"] = c0;
  side["c0_calibrated"] = a.c0 <= 0.0;
  side["censoring_rate"] = 1.0 - static_cast<double>(coxsub_dataset_events(ds.get())) / n;
  side["seed"] = g.seed;
  side["case4_raw_scale"] = a.raw_scale;
  side["data"] = a.out;
  std::ofstream sidecar(a.out + ".json");
  if (!sidecar) throw Failure{kExitFailure, "cannot write " + a.out + ".json"};
  sidecar << side.dump(2) << '\n';
  if (!g.out.empty()) emit(g, render(g, side, json::array({side})));
  return kExitOk;
}

// ---- fit ----

struct FitArgs {
  DataOptions data;
  std::string baseline_out;
  std::optional<std::vector<double>> fix_beta;
  int max_iter = 50;
};

int run_fit(const Global& g, const FitArgs& a) {
  DatasetPtr ds = load_dataset(a.data);
  const std::size_t p = coxsub_dataset_p(ds.get());
  const auto names = covariate_names(ds.get());
  json doc;
  doc["schema"] = 1;
  doc["command"] = "fit";
  doc["n"] = coxsub_dataset_n(ds.get());
  doc["p"] = p;
  doc["events"] = coxsub_dataset_events(ds.get());
  doc["covariates"] = names;
  json rows = json::array();

  if (a.fix_beta) {
    std::vector<double> beta = *a.fix_beta;
    if (beta.size() == 1) beta.assign(p, beta[0]);
    if (beta.size() != p) usage("--fix-beta: expected 1 or " + std::to_string(p) + " values");
    doc["beta"] = beta;
    doc["fixed"] = true;
    if (!a.baseline_out.empty()) {
      check(coxsub_breslow_write_csv(ds.get(), beta.data(), a.baseline_out.c_str()), "--baseline-out");
      doc["baseline_out"] = a.baseline_out;
    }
    for (std::size_t j = 0; j < p; ++j) rows.push_back({{"covariate", names[j]}, {"est", beta[j]}});
    emit(g, render(g, doc, rows));
    return kExitOk;
  }

  coxsub_solver_options opts;
  coxsub_solver_options_default(&opts);
  opts.max_iter = a.max_iter;
  coxsub_fit* raw = nullptr;
  const coxsub_status st = coxsub_fit_full(ds.get(), &opts, &raw);
  FitPtr fit(raw);
  if (st != COXSUB_OK && !(st == COXSUB_NOT_CONVERGED && fit)) check(st, "fit");
  std::vector<double> beta(p), se(p);
  if (fit) {
    check(coxsub_fit_beta(fit.get(), beta.data()));
    check(coxsub_fit_se(fit.get(), se.data()));
    doc["beta"] = beta;
    doc["se"] = se;
    doc["iterations"] = coxsub_fit_iterations(fit.get());
    doc["converged"] = coxsub_fit_converged(fit.get()) != 0;
    doc["score_norm"] = coxsub_fit_score_norm(fit.get());
    doc["neg_log_partial_likelihood"] = coxsub_fit_neg_logpl(fit.get());
    doc["seconds"] = coxsub_fit_seconds(fit.get());
  }
  if (st == COXSUB_NOT_CONVERGED) {
    std::cerr << "error: fit did not converge after " << coxsub_fit_iterations(fit.get())
              << " iterations (score sup-norm " << fmt(coxsub_fit_score_norm(fit.get())) << ")\n";
    std::cerr << doc.dump(2) << '\n';
    return kExitNumerical;
  }
  if (!a.baseline_out.empty()) {
    check(coxsub_breslow_write_csv(ds.get(), beta.data(), a.baseline_out.c_str()), "--baseline-out");
    doc["baseline_out"] = a.baseline_out;
  }
  for (std::size_t j = 0; j < p; ++j) {
    rows.push_back({{"covariate", names[j]}, {"est", beta[j]}, {"se", se[j]}, {"iterations", doc["iterations"]}});
  }
  emit(g, render(g, doc, rows));
  return kExitOk;
}

// ---- subsample ----

struct SubsampleArgs {
  DataOptions data;
  std::size_t r0 = 300;
  std::size_t r = 1000;
  double delta = 0.1;
  std::string criterion = "lopt";
  std::size_t reps = 1;
};

int run_subsample(const Global& g, const SubsampleArgs& a) {
  const coxsub_criterion crit = parse_criterion(a.criterion);
  DatasetPtr ds = load_dataset(a.data);
  const std::size_t p = coxsub_dataset_p(ds.get());
  const auto names = covariate_names(ds.get());

  coxsub_two_step_options opts;
  coxsub_two_step_options_default(&opts);
  opts.r0 = a.r0;
  opts.r = a.r;
  opts.delta = a.delta;
  opts.criterion = crit;
  opts.seed = g.seed;
  opts.threads = g.threads;
  coxsub_two_step* raw = nullptr;
  check(coxsub_two_step_run(ds.get(), &opts, &raw), "subsample");
  TwoStepPtr ts(raw);

  std::vector<double> est(p), se(p), pilot(p);
  double timings[5];
  check(coxsub_two_step_beta(ts.get(), est.data()));
  check(coxsub_two_step_se(ts.get(), se.data()));
  check(coxsub_two_step_pilot_beta(ts.get(), pilot.data()));
  check(coxsub_two_step_timings(ts.get(), timings));
  double cens[5], unc[5];
  check(coxsub_two_step_five_number_summary(ts.get(), ds.get(), cens, unc));

  json doc;
  doc["schema"] = 1;
  doc["command"] = "subsample";
  doc["criterion"] = a.criterion;
  doc["n"] = coxsub_dataset_n(ds.get());
  doc["r0"] = a.r0;
  doc["r"] = a.r;
  doc["delta"] = a.delta;
  doc["seed"] = g.seed;
  json coefs = json::array();
  json rows = json::array();
  for (std::size_t j = 0; j < p; ++j) {
    const double lo = est[j] - 1.96 * se[j], hi = est[j] + 1.96 * se[j];
    coefs.push_back({{"covariate", names[j]}, {"est", est[j]}, {"se", se[j]}, {"ci", {lo, hi}}});
    rows.push_back({{"covariate", names[j]}, {"est", est[j]}, {"se", se[j]}, {"ci_lower", lo}, {"ci_upper", hi}});
  }
  doc["coefficients"] = coefs;
  doc["pilot_beta"] = pilot;
  doc["timings"] = {{"pilot_fit", timings[0]},  {"probabilities", timings[1]}, {"draw", timings[2]},
                    {"second_fit", timings[3]}, {"covariance", timings[4]},
                    {"total", timings[0] + timings[1] + timings[2] + timings[3] + timings[4]}};
  auto five = [](const double* v) { return std::vector<double>(v, v + 5); };
  doc["probability_summary"] = {{"censored", five(cens)}, {"uncensored", five(unc)}};
  doc["fell_back_to_uniform"] = coxsub_two_step_fell_back_to_uniform(ts.get()) != 0;

  if (a.reps > 1) {
    coxsub_study_options so;
    coxsub_study_options_default(&so);
    so.method = static_cast<coxsub_method>(crit);
    so.r0 = a.r0;
    so.r = a.r;
    so.delta = a.delta;
    so.n_reps = a.reps;
    so.seed = g.seed;
    so.threads = g.threads;
    coxsub_report* rr = nullptr;
    check(coxsub_study_run_dataset(ds.get(), &so, &rr), "replications");
    ReportPtr rep(rr);
    doc["replications"] = {{"reps", a.reps},
                           {"failures", coxsub_report_failures(rep.get())},
                           {"reference", read_vec(p, coxsub_report_target, rep.get())},
                           {"bias", read_vec(p, coxsub_report_bias, rep.get())},
                           {"ese", read_vec(p, coxsub_report_ese, rep.get())},
                           {"mean_se", read_vec(p, coxsub_report_mean_se, rep.get())},
                           {"coverage", read_vec(p, coxsub_report_coverage, rep.get())},
                           {"mse", coxsub_report_mse(rep.get())}};
  }
  emit(g, render(g, doc, rows));
  return kExitOk;
}

// ---- benchmark ----

struct BenchmarkArgs {
  std::vector<std::string> cases{"I"};
  std::size_t n = 100000;
  double cr = 0.2;
  std::vector<std::size_t> r_grid{400, 600, 800, 1000};
  std::vector<double> delta_grid{0.1};
  std::vector<std::string> methods{"lopt", "aopt", "unif"};
  std::size_t r0 = 300;
  std::size_t reps = 200;
  bool regenerate = false;
  bool timing = false;
  std::size_t timing_n = 1000000;
};

json timing_row(const Global& g, const std::string& case_text, const BenchmarkArgs& a) {
  const auto beta = default_beta();
  const auto cfg = make_sim(case_text, a.timing_n, a.cr, 0.0, beta, false, g.seed);
  coxsub_dataset* raw = nullptr;
  check(coxsub_simulate(&cfg, &raw, nullptr), "timing data");
  DatasetPtr ds(raw);
  json row{{"case", case_name(cfg.covariate_case)}, {"n", a.timing_n}};

  auto t0 = std::chrono::steady_clock::now();
  coxsub_fit* fr = nullptr;
  check(coxsub_fit_full(ds.get(), nullptr, &fr), "full fit");
  FitPtr fit(fr);
  row["full_fit_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (const auto& m : a.methods) {
    const coxsub_method method = parse_method(m);
    if (method == COXSUB_METHOD_FULL) continue;
    coxsub_two_step_options opts;
    coxsub_two_step_options_default(&opts);
    opts.r0 = a.r0;
    opts.r = a.r_grid.back();
    opts.delta = a.delta_grid.front();
    opts.criterion = static_cast<coxsub_criterion>(method);
    opts.seed = g.seed;
    opts.threads = g.threads;
    t0 = std::chrono::steady_clock::now();
    coxsub_two_step* tr = nullptr;
    check(coxsub_two_step_run(ds.get(), &opts, &tr), "two-step timing");
    TwoStepPtr ts(tr);
    row[std::string(method_name(method)) + "_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return row;
}

int run_benchmark(const Global& g, const BenchmarkArgs& a) {
  json cells = json::array();
  json rows = json::array();
  int failed_cells = 0;
  const auto beta = default_beta();
  for (const auto& case_text : a.cases) {
    for (const auto& m : a.methods) {
      const coxsub_method method = parse_method(m);
      for (std::size_t r : a.r_grid) {
        for (double delta : a.delta_grid) {
          const auto cfg = make_sim(case_text, a.n, a.cr, 0.0, beta, false, g.seed);
          coxsub_study_options so;
          coxsub_study_options_default(&so);
          so.method = method;
          so.r0 = a.r0;
          so.r = r;
          so.delta = delta;
          so.n_reps = a.reps;
          so.regenerate = a.regenerate ? 1 : 0;
          so.seed = g.seed;
          so.threads = g.threads;
          json cell{{"case", case_name(cfg.covariate_case)},
                    {"method", method_name(method)},
                    {"r", r},
                    {"delta", delta},
                    {"reps", a.reps}};
          coxsub_report* rr = nullptr;
          const coxsub_status st = coxsub_study_run(&cfg, &so, &rr);
          if (st != COXSUB_OK) {
            ++failed_cells;
            cell["error"] = coxsub_last_error();
            cells.push_back(cell);
            rows.push_back(cell);
            continue;
          }
          ReportPtr rep(rr);
          const std::size_t p = coxsub_report_p(rep.get());
          const auto bias = read_vec(p, coxsub_report_bias, rep.get());
          const auto ese = read_vec(p, coxsub_report_ese, rep.get());
          const auto se = read_vec(p, coxsub_report_mean_se, rep.get());
          const auto cp = read_vec(p, coxsub_report_coverage, rep.get());
          double t[5];
          check(coxsub_report_timings(rep.get(), t));
          cell["failures"] = coxsub_report_failures(rep.get());
          cell["mse"] = coxsub_report_mse(rep.get());
          cell["mse_se"] = coxsub_report_mse_se(rep.get());
          cell["c0"] = coxsub_report_c0(rep.get());
          cell["mean_seconds"] = coxsub_report_mean_seconds(rep.get());
          json row = cell;
          for (std::size_t j = 0; j < p; ++j) {
            const std::string s = std::to_string(j + 1);
            row["bias_" + s] = bias[j];
            row["ese_" + s] = ese[j];
            row["se_" + s] = se[j];
            row["cp_" + s] = cp[j];
          }
          cell["bias"] = bias;
          cell["ese"] = ese;
          cell["mean_se"] = se;
          cell["coverage"] = cp;
          cell["timings"] = std::vector<double>(t, t + 5);
          cells.push_back(cell);
          rows.push_back(row);
        }
      }
    }
  }
  json doc{{"schema", 1}, {"command", "benchmark"}, {"n", a.n}, {"cr", a.cr}, {"seed", g.seed},
           {"mode", a.regenerate ? "regenerate" : "fixed"}, {"cells", cells}};
  if (a.timing) {
    json timing = json::array();
    for (const auto& c : a.cases) timing.push_back(timing_row(g, c, a));
    doc["timing"] = timing;
    if (g.format == "csv") {
      emit(g, to_csv(rows) + "\n" + to_csv(timing));
      return failed_cells ? kExitNumerical : kExitOk;
    }
  }
  emit(g, render(g, doc, rows));
  return failed_cells ? kExitNumerical : kExitOk;
}

// ---- calibrate ----

struct CalibrateArgs {
  std::string case_name = "I";
  double cr = 0.2;
  std::vector<double> beta;
  double tol = 0.002;
  std::string cache_dir;
  std::size_t verify_n = 100000;
  bool raw_scale = false;
};

int run_calibrate(const Global& g, const CalibrateArgs& a) {
  const auto beta = a.beta.empty() ? default_beta() : a.beta;
  auto cfg = make_sim(a.case_name, a.verify_n, a.cr, 0.0, beta, a.raw_scale, g.seed);
  double c0 = 0.0, achieved = 0.0;
  check(coxsub_calibrate_c0(&cfg, a.tol, a.cache_dir.empty() ? nullptr : a.cache_dir.c_str(), &c0, &achieved),
        "calibrate");
  json doc{{"schema", 1}, {"command", "calibrate"}, {"case", case_name(cfg.covariate_case)},
           {"target_cr", a.cr}, {"c0", c0}, {"calibration_cr", achieved}, {"seed", g.seed}};
  if (a.verify_n > 0) {
    // Fresh draws at the returned bound.
    cfg.c0 = c0;
    cfg.seed = g.seed + 1;
    coxsub_dataset* raw = nullptr;
    check(coxsub_simulate(&cfg, &raw, nullptr), "verification");
    DatasetPtr ds(raw);
    const double n = static_cast<double>(coxsub_dataset_n(ds.get()));
    doc["achieved_cr"] = 1.0 - static_cast<double>(coxsub_dataset_events(ds.get())) / n;
    doc["verify_n"] = a.verify_n;
  }
  emit(g, render(g, doc, json::array({doc})));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cox regression with optimal subsampling"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from a key=value file; command-line flags win");
  app.allow_config_extras(false);

  Global g;
  app.add_option("--seed", g.seed, "Master random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")
      ->envname("COXSUB_THREADS")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  app.add_option("--out", g.out, "Write the report here instead of stdout");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic survival dataset");
  simulate->add_option("--case", sim.case_name, "Covariate law: I, II, III or IV")->capture_default_str();
  simulate->add_option("--n", sim.n, "Number of records")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--cr", sim.cr, "Target censoring rate")->check(OpenUnit)->capture_default_str();
  simulate->add_option("--c0", sim.c0, "Censoring bound (skips calibration)")->check(CLI::PositiveNumber);
  simulate->add_option("--beta", sim.beta, "True coefficients")->delimiter(',');
  simulate->add_flag("--case4-raw-scale", sim.raw_scale, "Case IV: use the t scale matrix as is");
  simulate->add_option("-o,--output", sim.out, "Output CSV; a .json sidecar is written next to it")->required();

  FitArgs fit;
  auto* fitcmd = app.add_subcommand("fit", "Full-data partial likelihood fit");
  add_data_options(fitcmd, fit.data);
  fitcmd->add_option("--baseline-out", fit.baseline_out, "Write the Breslow cumulative hazard CSV");
  fitcmd->add_option("--fix-beta", fit.fix_beta, "Skip fitting; use these coefficients (one value broadcasts)")
      ->delimiter(',');
  fitcmd->add_option("--max-iter", fit.max_iter, "Newton iteration limit")->check(CLI::PositiveNumber);

  SubsampleArgs sub;
  auto* subcmd = app.add_subcommand("subsample", "Two-step optimal subsampling fit");
  add_data_options(subcmd, sub.data);
  subcmd->add_option("--r0", sub.r0, "Pilot subsample size")->check(CLI::PositiveNumber)->capture_default_str();
  subcmd->add_option("--r", sub.r, "Second-step subsample size")->check(CLI::PositiveNumber)->capture_default_str();
  subcmd->add_option("--delta", sub.delta, "Uniform mixing weight")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  subcmd->add_option("--criterion", sub.criterion, "lopt, aopt or unif")
      ->check(CLI::IsMember({"lopt", "aopt", "unif"}))
      ->capture_default_str();
  subcmd->add_option("--reps", sub.reps, "Replications for bias/ESE against the full-data fit")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  BenchmarkArgs bench;
  auto* benchcmd = app.add_subcommand("benchmark", "Replication study over a grid");
  benchcmd->add_option("--cases", bench.cases, "Covariate laws")->delimiter(',');
  benchcmd->add_option("--n", bench.n, "Records per dataset")->check(CLI::PositiveNumber)->capture_default_str();
  benchcmd->add_option("--cr", bench.cr, "Target censoring rate")->check(OpenUnit)->capture_default_str();
  benchcmd->add_option("--r-grid", bench.r_grid, "Subsample sizes")->delimiter(',')->check(CLI::PositiveNumber);
  benchcmd->add_option("--delta-grid", bench.delta_grid, "Mixing weights")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  benchcmd->add_option("--methods", bench.methods, "lopt, aopt, unif, full")->delimiter(',');
  benchcmd->add_option("--r0", bench.r0, "Pilot size")->check(CLI::PositiveNumber)->capture_default_str();
  benchcmd->add_option("--reps", bench.reps, "Replications per cell")->check(CLI::Range(2ul, 1000000ul))->capture_default_str();
  benchcmd->add_flag("--regenerate", bench.regenerate, "Fresh dataset per replication; target the true coefficients");
  benchcmd->add_flag("--timing", bench.timing, "Also time the full fit against two-step fits");
  benchcmd->add_option("--timing-n", bench.timing_n, "Records for the timing comparison")->check(CLI::PositiveNumber);

  CalibrateArgs cal;
  auto* calcmd = app.add_subcommand("calibrate", "Find the censoring bound for a target rate");
  calcmd->add_option("--case", cal.case_name, "Covariate law: I, II, III or IV")->capture_default_str();
  calcmd->add_option("--cr", cal.cr, "Target censoring rate")->check(OpenUnit)->capture_default_str();
  calcmd->add_option("--beta", cal.beta, "True coefficients")->delimiter(',');
  calcmd->add_option("--tol", cal.tol, "Tolerance on the censoring rate")->check(CLI::PositiveNumber);
  calcmd->add_option("--cache-dir", cal.cache_dir, "Directory for cached results");
  calcmd->add_option("--verify-n", cal.verify_n, "Records in the re-simulation check (0 skips it)");
  calcmd->add_flag("--case4-raw-scale", cal.raw_scale, "Case IV: use the t scale matrix as is");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(g, sim);
    if (*fitcmd) return run_fit(g, fit);
    if (*subcmd) return run_subsample(g, sub);
    if (*benchcmd) return run_benchmark(g, bench);
    if (*calcmd) return run_calibrate(g, cal);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    if (f.code == kExitUsage) std::cerr << "run with --help for usage\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
