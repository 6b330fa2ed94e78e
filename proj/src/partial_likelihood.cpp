#include "coxsub/partial_likelihood.hpp"

#include "coxsub/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace coxsub {

Weights Weights::inverse_probability(std::vector<double> values) {
  for (double w : values) {
    if (!std::isfinite(w) || w <= 0.0) throw InvalidArgument("weights must be finite and positive");
  }
  return Weights(WeightKind::InverseProbability, std::move(values));
}

const char* to_string(FitRole role) {
  switch (role) {
    case FitRole::FullMPL: return "full_mpl";
    case FitRole::Pilot: return "pilot";
    case FitRole::TwoStep: return "two_step";
  }
  return "unknown";
}

void SolverOptions::check() const {
  if (!(tol_score > 0.0) || !(tol_step > 0.0)) throw InvalidArgument("solver tolerances must be positive");
  if (max_iter < 1) throw InvalidArgument("max_iter must be at least 1");
  if (step_halving_max < 0) throw InvalidArgument("step_halving_max must be non-negative");
}

SortedSample SortedSample::build(const SurvivalDataset& ds, const Weights& weights,
                                 std::optional<IndexSpan> subset) {
  ds.require_valid();
  SortedSample s;
  s.n_full_ = ds.n();
  s.p_ = ds.p();

  // Entry k of the (possibly repeated) index list, in time order.
  std::vector<std::size_t> records;
  std::vector<std::size_t> entries;
  if (subset) {
    records.assign(subset->begin(), subset->end());
    for (auto idx : records) {
      if (idx >= ds.n()) throw InvalidArgument("subset index out of range");
    }
    entries.resize(records.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    const auto& rank = ds.rank();
    std::sort(entries.begin(), entries.end(), [&](std::size_t a, std::size_t b) {
      const auto ra = rank[records[a]], rb = rank[records[b]];
      return ra != rb ? ra < rb : a < b;
    });
  } else {
    records = ds.sort_index();
    entries.resize(records.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
  }
  if (weights.kind() == WeightKind::InverseProbability && weights.values().size() != records.size()) {
    throw InvalidArgument("weight vector length does not match the records it weights");
  }

  const std::size_t m = entries.size();
  s.x_.resize(m * s.p_);
  s.time_.resize(m);
  s.weight_.resize(m);
  s.status_.resize(m);
  s.record_.resize(m);
  const auto& x = ds.covariates();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t e = entries[k];
    const std::size_t rec = records[e];
    const auto r = static_cast<Eigen::Index>(rec);
    for (std::size_t j = 0; j < s.p_; ++j) s.x_[k * s.p_ + j] = x(r, static_cast<Eigen::Index>(j));
    s.time_[k] = ds.time()[r];
    s.weight_[k] = weights[e];
    s.status_[k] = static_cast<unsigned char>(ds.status()[rec] == 1);
    s.record_[k] = rec;
    s.events_ += s.status_[k];
  }
  for (std::size_t k = 1; k <= m; ++k) {
    if (k == m || s.time_[k] != s.time_[k - 1]) s.group_end_.push_back(k);
  }
  return s;
}

namespace {

double linear_predictors(const SortedSample& s, const Vector& beta, std::vector<double>& eta) {
  const std::size_t p = s.p();
  if (static_cast<std::size_t>(beta.size()) != p) throw InvalidArgument("beta has the wrong dimension");
  if (!beta.allFinite()) throw InvalidArgument("beta must be finite");
  eta.resize(s.m());
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.m(); ++k) {
    const double* xr = s.row(k);
    double v = 0.0;
    for (std::size_t j = 0; j < p; ++j) v += xr[j] * beta[static_cast<Eigen::Index>(j)];
    eta[k] = v;
    shift = std::max(shift, v);
  }
  if (!std::isfinite(shift)) {
    throw NumericalError("linear predictor overflow in exp(beta'X); rescale the covariates");
  }
  return shift;
}

// Packed upper triangle index for a p x p symmetric matrix.
inline std::size_t packed(std::size_t a, std::size_t b, std::size_t p) { return a * p - a * (a + 1) / 2 + b; }

}  // namespace

Evaluation evaluate(const SortedSample& s, const Vector& beta, EvalLevel level) {
  const std::size_t p = s.p();
  const std::size_t m = s.m();
  if (m == 0) throw InvalidArgument("empty sample");
  std::vector<double> eta;
  const double shift = linear_predictors(s, beta, eta);
  const bool want_score = level != EvalLevel::Value;
  const bool want_hess = level == EvalLevel::Hessian;

  double s0 = 0.0;
  std::vector<double> s1(p, 0.0), s2(want_hess ? p * (p + 1) / 2 : 0, 0.0);
  std::vector<double> wx(p), xbar(p);
  double value = 0.0;
  std::vector<double> grad(p, 0.0), hess(want_hess ? p * (p + 1) / 2 : 0, 0.0);
  const double log_scale = std::log(static_cast<double>(s.n_full()) / static_cast<double>(m)) + shift;

  const auto& ends = s.group_end();
  for (std::size_t g = ends.size(); g-- > 0;) {
    const std::size_t begin = g == 0 ? 0 : ends[g - 1];
    const std::size_t end = ends[g];
    double w_events = 0.0, w_eta = 0.0;
    std::fill(wx.begin(), wx.end(), 0.0);
    for (std::size_t k = begin; k < end; ++k) {
      const double* xr = s.row(k);
      const double e = s.weight(k) * std::exp(eta[k] - shift);
      s0 += e;
      if (want_score) {
        for (std::size_t a = 0; a < p; ++a) s1[a] += e * xr[a];
      }
      if (want_hess) {
        std::size_t idx = 0;
        for (std::size_t a = 0; a < p; ++a) {
          const double ea = e * xr[a];
          for (std::size_t b = a; b < p; ++b) s2[idx++] += ea * xr[b];
        }
      }
      if (s.event(k)) {
        const double w = s.weight(k);
        w_events += w;
        w_eta += w * eta[k];
        if (want_score) {
          for (std::size_t a = 0; a < p; ++a) wx[a] += w * xr[a];
        }
      }
    }
    if (w_events == 0.0) continue;
    if (!(s0 > 0.0) || !std::isfinite(s0)) {
      throw NumericalError("risk-set sum underflow at time " + std::to_string(s.time(begin)) +
                           "; rescale the covariates");
    }
    value -= w_eta - w_events * (log_scale + std::log(s0));
    if (!want_score) continue;
    for (std::size_t a = 0; a < p; ++a) {
      xbar[a] = s1[a] / s0;
      grad[a] -= wx[a] - w_events * xbar[a];
    }
    if (want_hess) {
      std::size_t idx = 0;
      for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a; b < p; ++b, ++idx) {
          hess[idx] += w_events * (s2[idx] / s0 - xbar[a] * xbar[b]);
        }
      }
    }
  }

  const double inv_m = 1.0 / static_cast<double>(m);
  Evaluation out;
  out.value = value * inv_m;
  if (want_score) {
    out.score.resize(static_cast<Eigen::Index>(p));
    for (std::size_t a = 0; a < p; ++a) out.score[static_cast<Eigen::Index>(a)] = grad[a] * inv_m;
  }
  if (want_hess) {
    out.hessian.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = a; b < p; ++b) {
        const double v = hess[packed(a, b, p)] * inv_m;
        out.hessian(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
        out.hessian(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
      }
    }
  }
  return out;
}

double RiskSetSums::s0_value(std::size_t j) const { return s0[static_cast<Eigen::Index>(j)] * std::exp(shift); }

Vector RiskSetSums::s1_value(std::size_t j) const {
  return s1.row(static_cast<Eigen::Index>(j)).transpose() * std::exp(shift);
}

Matrix RiskSetSums::s2_value(std::size_t j) const { return s2[j] * std::exp(shift); }

Vector RiskSetSums::xbar(std::size_t j) const {
  return s1.row(static_cast<Eigen::Index>(j)).transpose() / s0[static_cast<Eigen::Index>(j)];
}

Matrix RiskSetSums::curvature(std::size_t j) const {
  const Vector xb = xbar(j);
  return s2[j] / s0[static_cast<Eigen::Index>(j)] - xb * xb.transpose();
}

RiskSetSums risk_set_sums(const SurvivalDataset& ds, const Vector& beta, const Weights& weights,
                          std::optional<IndexSpan> subset) {
  const SortedSample s = SortedSample::build(ds, weights, subset);
  const std::size_t p = s.p();
  const auto pi = static_cast<Eigen::Index>(p);
  std::vector<double> eta;
  const double shift = linear_predictors(s, beta, eta);

  // Walk groups backwards, record moments at groups holding events, then
  // reverse into ascending time.
  std::vector<double> times;
  std::vector<double> s0v;
  std::vector<Vector> s1v;
  std::vector<Matrix> s2v;
  double s0 = 0.0;
  Vector s1 = Vector::Zero(pi);
  Matrix s2 = Matrix::Zero(pi, pi);
  const auto& ends = s.group_end();
  for (std::size_t g = ends.size(); g-- > 0;) {
    const std::size_t begin = g == 0 ? 0 : ends[g - 1];
    bool has_event = false;
    for (std::size_t k = begin; k < ends[g]; ++k) {
      const Eigen::Map<const Vector> xr(s.row(k), pi);
      const double e = s.weight(k) * std::exp(eta[k] - shift);
      s0 += e;
      s1 += e * xr;
      s2 += e * xr * xr.transpose();
      has_event = has_event || s.event(k);
    }
    if (has_event) {
      times.push_back(s.time(begin));
      s0v.push_back(s0);
      s1v.push_back(s1);
      s2v.push_back(s2);
    }
  }
  const auto d = static_cast<Eigen::Index>(times.size());
  const double inv_m = 1.0 / static_cast<double>(s.m());
  RiskSetSums out;
  out.shift = shift;
  out.event_times.assign(times.rbegin(), times.rend());
  out.horizon = out.event_times.empty() ? 0.0 : out.event_times.back();
  out.s0.resize(d);
  out.s1.resize(d, pi);
  out.s2.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto src = static_cast<std::size_t>(d - 1 - j);
    out.s0[j] = s0v[src] * inv_m;
    out.s1.row(j) = s1v[src].transpose() * inv_m;
    out.s2[static_cast<std::size_t>(j)] = s2v[src] * inv_m;
  }
  return out;
}

double neg_log_partial_likelihood(const SurvivalDataset& ds, const Vector& beta, const Weights& weights,
                                  std::optional<IndexSpan> subset) {
  return evaluate(SortedSample::build(ds, weights, subset), beta, EvalLevel::Value).value;
}

Vector score(const SurvivalDataset& ds, const Vector& beta, const Weights& weights,
             std::optional<IndexSpan> subset) {
  return evaluate(SortedSample::build(ds, weights, subset), beta, EvalLevel::Score).score;
}

Matrix hessian(const SurvivalDataset& ds, const Vector& beta, const Weights& weights,
               std::optional<IndexSpan> subset) {
  return evaluate(SortedSample::build(ds, weights, subset), beta, EvalLevel::Hessian).hessian;
}

double condition_number(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  const Vector ev = eig.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  if (lo == 0.0) return std::numeric_limits<double>::infinity();
  return ev.maxCoeff() / lo;
}

Matrix spd_solve(const Matrix& h, const Matrix& b, const char* what) {
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13)) {
    std::ostringstream msg;
    msg << "singular " << what << " (condition number " << condition_number(h)
        << "); covariates may be collinear or perfectly separating";
    throw NumericalError(msg.str());
  }
  return llt.solve(b);
}

CoxFit newton_solve(const SortedSample& sample, const SolverOptions& opts, FitRole role) {
  opts.check();
  if (sample.event_count() == 0) throw InvalidArgument("cannot fit a sample with no events");
  const auto p = static_cast<Eigen::Index>(sample.p());
  Vector beta = opts.init ? *opts.init : Vector::Zero(p);
  if (beta.size() != p) throw InvalidArgument("initial beta has the wrong dimension");

  CoxFit fit;
  fit.role = role;
  Evaluation ev = evaluate(sample, beta, EvalLevel::Hessian);
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    fit.iterations = iter;
    if (ev.score.lpNorm<Eigen::Infinity>() <= opts.tol_score) {
      fit.converged = true;
      break;
    }
    const Vector step = spd_solve(ev.hessian, ev.score, "Hessian");
    double scale = 1.0;
    Vector candidate = beta - step;
    double slack = 1e-13 * (1.0 + std::abs(ev.value));
    auto increases = [&](const Vector& b) {
      const double v = evaluate(sample, b, EvalLevel::Value).value;
      return !std::isfinite(v) || v > ev.value + slack;
    };
    int halvings = 0;
    bool stalled = false;
    while (increases(candidate)) {
      if (halvings++ >= opts.step_halving_max) {
        stalled = true;
        break;
      }
      scale *= 0.5;
      candidate = beta - scale * step;
    }
    if (stalled) break;
    const double step_norm = scale * step.lpNorm<Eigen::Infinity>();
    beta = candidate;
    ev = evaluate(sample, beta, EvalLevel::Hessian);
    if (step_norm <= opts.tol_step) {
      fit.converged = true;
      break;
    }
  }
  fit.beta = beta;
  fit.neg_logpl = ev.value;
  fit.final_score_norm = ev.score.lpNorm<Eigen::Infinity>();
  fit.converged = fit.converged || fit.final_score_norm <= opts.tol_score;
  fit.hessian = ev.hessian;
  return fit;
}

CoxFit newton_solve(const SurvivalDataset& ds, const Weights& weights, std::optional<IndexSpan> subset,
                    const SolverOptions& opts, FitRole role) {
  return newton_solve(SortedSample::build(ds, weights, subset), opts, role);
}

}  // namespace coxsub
