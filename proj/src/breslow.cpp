#include "coxsub/breslow.hpp"

#include "coxsub/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <thread>

namespace coxsub {

namespace {

// Branch-free searches over short sorted tables; the queries arrive in
// random order, so predictable loads beat early exits.
std::size_t count_le(const std::vector<double>& v, double t) {
  if (v.empty()) return 0;
  const double* base = v.data();
  std::size_t len = v.size();
  while (len > 1) {
    const std::size_t half = len / 2;
    base = base[half] <= t ? base + half : base;
    len -= half;
  }
  return static_cast<std::size_t>(base - v.data()) + (*base <= t);
}

std::size_t count_lt(const std::vector<double>& v, double t) {
  if (v.empty()) return 0;
  const double* base = v.data();
  std::size_t len = v.size();
  while (len > 1) {
    const std::size_t half = len / 2;
    base = base[half] < t ? base + half : base;
    len -= half;
  }
  return static_cast<std::size_t>(base - v.data()) + (*base < t);
}

// Constant-time rank queries on a sorted table via a uniform bucket grid.
class GridIndex {
 public:
  explicit GridIndex(const std::vector<double>& v) : v_(v) {
    if (v_.empty()) return;
    lo_ = v_.front();
    const double span = v_.back() - lo_;
    buckets_ = std::max<std::size_t>(1, 4 * v_.size());
    scale_ = span > 0.0 ? static_cast<double>(buckets_) / span : 0.0;
    start_.resize(buckets_ + 1);
    std::size_t k = 0;
    for (std::size_t g = 0; g <= buckets_; ++g) {
      const double edge = lo_ + static_cast<double>(g) / scale_;
      while (k < v_.size() && v_[k] < edge) ++k;
      start_[g] = k;
    }
  }

  std::size_t count_le(double t) const { return locate<false>(t); }
  std::size_t count_lt(double t) const { return locate<true>(t); }

 private:
  template <bool Strict>
  std::size_t locate(double t) const {
    const std::size_t n = v_.size();
    auto below = [&](double e) { return Strict ? e < t : e <= t; };
    if (n == 0 || !below(v_.front())) return 0;
    if (below(v_.back())) return n;
    const double pos = (t - lo_) * scale_;
    std::size_t k = start_[std::min(buckets_, static_cast<std::size_t>(std::max(0.0, pos)))];
    while (k > 0 && !below(v_[k - 1])) --k;
    while (k < n && below(v_[k])) ++k;
    return k;
  }

  const std::vector<double>& v_;
  double lo_ = 0.0;
  double scale_ = 0.0;
  std::size_t buckets_ = 0;
  std::vector<std::size_t> start_;
};

}  // namespace

const char* to_string(HazardSource source) {
  switch (source) {
    case HazardSource::FullData: return "full_data";
    case HazardSource::PilotUniform: return "pilot_uniform";
    case HazardSource::TrueSimulated: return "true_simulated";
  }
  return "unknown";
}

double CumulativeHazard::operator()(double t) const {
  const std::size_t k = count_le(jump_times, t);
  return k == 0 ? 0.0 : cumulative[k - 1];
}

void write_csv(const CumulativeHazard& hazard, const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> out(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  std::fprintf(out.get(), "time,cumhaz\n");
  for (std::size_t k = 0; k < hazard.size(); ++k) {
    std::fprintf(out.get(), "%.17g,%.17g\n", hazard.jump_times[k], hazard.cumulative[k]);
  }
  if (std::ferror(out.get())) throw IoError("write failed for '" + path.string() + "'");
}

CumulativeHazard breslow_from_sample(const SortedSample& s, const Vector& beta, HazardSource source) {
  const std::size_t p = s.p();
  if (static_cast<std::size_t>(beta.size()) != p) throw InvalidArgument("beta has the wrong dimension");
  std::vector<double> eta(s.m());
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.m(); ++k) {
    const double* xr = s.row(k);
    double v = 0.0;
    for (std::size_t j = 0; j < p; ++j) v += xr[j] * beta[static_cast<Eigen::Index>(j)];
    eta[k] = v;
    shift = std::max(shift, v);
  }
  if (!std::isfinite(shift)) throw NumericalError("linear predictor overflow; rescale the covariates");

  std::vector<double> times, jumps;
  double s0 = 0.0;
  const double scale = std::exp(shift);
  const auto& ends = s.group_end();
  for (std::size_t g = ends.size(); g-- > 0;) {
    const std::size_t begin = g == 0 ? 0 : ends[g - 1];
    double events = 0.0;
    for (std::size_t k = begin; k < ends[g]; ++k) {
      s0 += s.weight(k) * std::exp(eta[k] - shift);
      if (s.event(k)) events += s.weight(k);
    }
    if (events == 0.0) continue;
    const double jump = events / (s0 * scale);
    if (!(jump > 0.0) || !std::isfinite(jump)) {
      throw NumericalError("Breslow increment is not finite; rescale the covariates");
    }
    times.push_back(s.time(begin));
    jumps.push_back(jump);
  }
  CumulativeHazard out;
  out.source = source;
  out.jump_times.assign(times.rbegin(), times.rend());
  out.jumps.assign(jumps.rbegin(), jumps.rend());
  out.cumulative.resize(out.jumps.size());
  double total = 0.0;
  for (std::size_t k = 0; k < out.jumps.size(); ++k) {
    total += out.jumps[k];
    out.cumulative[k] = total;
  }
  return out;
}

CumulativeHazard breslow_cumhaz(const SurvivalDataset& ds, const Vector& beta) {
  return breslow_from_sample(SortedSample::build(ds), beta, HazardSource::FullData);
}

CumulativeHazard pilot_breslow(const SurvivalDataset& ds, IndexSpan pilot_indices, const Vector& beta) {
  if (pilot_indices.empty()) throw InvalidArgument("pilot subsample is empty");
  const SortedSample s = SortedSample::build(ds, Weights::unit(), pilot_indices);
  if (s.event_count() == 0) throw InvalidArgument("pilot uninformative (no events); increase r0");
  return breslow_from_sample(s, beta, HazardSource::PilotUniform);
}

CumulativeHazard true_cumulative_hazard(std::vector<double> times) {
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  CumulativeHazard out;
  out.source = HazardSource::TrueSimulated;
  double prev = 0.0;
  for (double t : times) {
    const double value = 0.25 * t * t;
    if (value > prev) {
      out.jump_times.push_back(t);
      out.jumps.push_back(value - prev);
      out.cumulative.push_back(value);
      prev = value;
    }
  }
  return out;
}

XbarTable::XbarTable(const SortedSample& s, const Vector& beta) : p_(s.p()) {
  if (s.m() == 0) throw InvalidArgument("cannot tabulate risk-set means of an empty sample");
  if (static_cast<std::size_t>(beta.size()) != p_) throw InvalidArgument("beta has the wrong dimension");
  std::vector<double> eta(s.m());
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.m(); ++k) {
    double v = 0.0;
    for (std::size_t j = 0; j < p_; ++j) v += s.row(k)[j] * beta[static_cast<Eigen::Index>(j)];
    eta[k] = v;
    shift = std::max(shift, v);
  }
  if (!std::isfinite(shift)) throw NumericalError("linear predictor overflow; rescale the covariates");

  const auto& ends = s.group_end();
  const std::size_t groups = ends.size();
  times_.resize(groups);
  means_.resize(groups * p_);
  double s0 = 0.0;
  std::vector<double> s1(p_, 0.0);
  for (std::size_t g = groups; g-- > 0;) {
    const std::size_t begin = g == 0 ? 0 : ends[g - 1];
    for (std::size_t k = begin; k < ends[g]; ++k) {
      const double e = s.weight(k) * std::exp(eta[k] - shift);
      s0 += e;
      for (std::size_t j = 0; j < p_; ++j) s1[j] += e * s.row(k)[j];
    }
    if (!(s0 > 0.0)) throw NumericalError("risk-set sum underflow; rescale the covariates");
    times_[g] = s.time(begin);
    for (std::size_t j = 0; j < p_; ++j) means_[g * p_ + j] = s1[j] / s0;
  }
}

const double* XbarTable::at(double t, bool* clamped) const {
  std::size_t idx = count_lt(times_, t);
  const bool beyond = idx == times_.size();
  if (beyond) idx = times_.size() - 1;
  if (clamped) *clamped = beyond;
  return means_.data() + idx * p_;
}

Vector pilot_xbar(const PilotContext& ctx, double t, const Vector& beta) {
  const SortedSample& s = ctx.sample;
  const auto p = static_cast<Eigen::Index>(s.p());
  if (beta.size() != p) throw InvalidArgument("beta has the wrong dimension");
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> eta(s.m());
  for (std::size_t k = 0; k < s.m(); ++k) {
    eta[k] = Eigen::Map<const Vector>(s.row(k), p).dot(beta);
    shift = std::max(shift, eta[k]);
  }
  double s0 = 0.0;
  Vector s1 = Vector::Zero(p);
  for (std::size_t k = 0; k < s.m(); ++k) {
    if (s.time(k) < t) continue;
    const double e = s.weight(k) * std::exp(eta[k] - shift);
    s0 += e;
    s1 += e * Eigen::Map<const Vector>(s.row(k), p);
  }
  if (!(s0 > 0.0)) {
    throw NumericalError("empty pilot risk set at t = " + std::to_string(t) +
                         "; queries must not exceed the last pilot time");
  }
  return s1 / s0;
}

Vector score_residual(const SurvivalDataset& ds, std::size_t i, const XbarFunction& xbar,
                      const CumulativeHazard& cumhaz, const Vector& beta) {
  if (i >= ds.n()) throw InvalidArgument("record index out of range");
  const auto r = static_cast<Eigen::Index>(i);
  const Vector x = ds.covariates().row(r).transpose();
  const double yi = ds.time()[r];
  const double risk = std::exp(x.dot(beta));
  Vector out = Vector::Zero(x.size());
  if (ds.status()[i] == 1) out += x - xbar(yi);
  for (std::size_t j = 0; j < cumhaz.size() && cumhaz.jump_times[j] <= yi; ++j) {
    out -= (x - xbar(cumhaz.jump_times[j])) * risk * cumhaz.jumps[j];
  }
  return out;
}

ResidualCalculator::ResidualCalculator(XbarTable xbar, CumulativeHazard cumhaz, Vector beta)
    : xbar_(std::move(xbar)), cumhaz_(std::move(cumhaz)), beta_(std::move(beta)) {
  const std::size_t p = xbar_.p();
  if (static_cast<std::size_t>(beta_.size()) != p) throw InvalidArgument("beta has the wrong dimension");
  xbar_dlambda_.resize(cumhaz_.size() * p);
  std::vector<double> acc(p, 0.0);
  for (std::size_t j = 0; j < cumhaz_.size(); ++j) {
    const double* xb = xbar_.at(cumhaz_.jump_times[j]);
    for (std::size_t a = 0; a < p; ++a) {
      acc[a] += xb[a] * cumhaz_.jumps[j];
      xbar_dlambda_[j * p + a] = acc[a];
    }
  }
}

bool ResidualCalculator::residual(const SurvivalDataset& ds, std::size_t i, double* out) const {
  const double yi = ds.time()[static_cast<Eigen::Index>(i)];
  const std::size_t slot = count_lt(xbar_.times_, yi);
  fill(ds, i, count_le(cumhaz_.jump_times, yi), slot, out);
  return ds.status()[i] == 1 && slot == xbar_.size();
}

void ResidualCalculator::fill(const SurvivalDataset& ds, std::size_t i, std::size_t jumps, std::size_t slot,
                              double* out) const {
  const std::size_t p = xbar_.p();
  const auto r = static_cast<Eigen::Index>(i);
  const auto& x = ds.covariates();
  double eta = 0.0;
  for (std::size_t a = 0; a < p; ++a) {
    out[a] = x(r, static_cast<Eigen::Index>(a));
    eta += out[a] * beta_[static_cast<Eigen::Index>(a)];
  }
  // Xbar at Y_i; past the last tabulated time the last row stands in.
  const double* xb = ds.status()[i] == 1 ? xbar_.means_.data() + std::min(slot, xbar_.size() - 1) * p : nullptr;
  if (jumps > 0) {
    const double risk = std::exp(eta);
    const double lambda = cumhaz_.cumulative[jumps - 1];
    const double* a_sum = xbar_dlambda_.data() + (jumps - 1) * p;
    for (std::size_t a = 0; a < p; ++a) {
      const double xa = out[a];
      out[a] = -risk * (xa * lambda - a_sum[a]) + (xb ? xa - xb[a] : 0.0);
    }
  } else {
    for (std::size_t a = 0; a < p; ++a) out[a] = xb ? out[a] - xb[a] : 0.0;
  }
}

Matrix ResidualCalculator::residuals(const SurvivalDataset& ds, IndexSpan indices, std::size_t* clamped) const {
  const auto p = static_cast<Eigen::Index>(xbar_.p());
  Matrix out(static_cast<Eigen::Index>(indices.size()), p);
  std::vector<double> buf(static_cast<std::size_t>(p));
  std::size_t clamps = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= ds.n()) throw InvalidArgument("record index out of range");
    clamps += residual(ds, indices[k], buf.data());
    for (Eigen::Index a = 0; a < p; ++a) out(static_cast<Eigen::Index>(k), a) = buf[static_cast<std::size_t>(a)];
  }
  if (clamped) *clamped = clamps;
  return out;
}

std::vector<double> ResidualCalculator::norms(const SurvivalDataset& ds, const Matrix& transform,
                                              unsigned threads, std::size_t* clamped) const {
  const std::size_t n = ds.n();
  const std::size_t p = xbar_.p();
  const bool transformed = transform.size() > 0;
  if (transformed && (transform.rows() != static_cast<Eigen::Index>(p) || transform.cols() != transform.rows())) {
    throw InvalidArgument("residual transform must be p x p");
  }
  std::vector<double> out(n);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, n / 4096))));
  std::vector<std::size_t> clamps(threads, 0);
  const auto& x = ds.covariates();
  const auto& y = ds.time();
  const auto& status = ds.status();
  const std::size_t last_slot = xbar_.size() - 1;
  // Blocks of records, column by column, so the inner loops stream.
  constexpr std::size_t kBlock = 2048;
  const GridIndex jump_index(cumhaz_.jump_times);
  const GridIndex slot_index(xbar_.times_);
  auto work = [&](unsigned t) {
    const std::size_t lo = n * t / threads, hi = n * (t + 1) / threads;
    const auto pi = static_cast<Eigen::Index>(p);
    Matrix res(static_cast<Eigen::Index>(kBlock), pi), mapped(static_cast<Eigen::Index>(kBlock), pi);
    Vector eta(static_cast<Eigen::Index>(kBlock));
    std::vector<double> risk(kBlock), lambda(kBlock), sq(kBlock);
    std::vector<std::size_t> jump_row(kBlock), slot_row(kBlock);
    std::vector<double> event(kBlock);
    for (std::size_t start = lo; start < hi; start += kBlock) {
      const std::size_t m = std::min(kBlock, hi - start);
      const auto mi = static_cast<Eigen::Index>(m);
      const auto si = static_cast<Eigen::Index>(start);
      eta.head(mi).noalias() = x.middleRows(si, mi) * beta_;
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = start + k;
        const double yi = y[static_cast<Eigen::Index>(i)];
        const std::size_t jumps = jump_index.count_le(yi);
        const std::size_t slot = slot_index.count_lt(yi);
        const bool ev = status[i] == 1;
        clamps[t] += ev && slot > last_slot;
        event[k] = ev ? 1.0 : 0.0;
        slot_row[k] = std::min(slot, last_slot) * p;
        jump_row[k] = jumps == 0 ? 0 : (jumps - 1) * p;
        risk[k] = jumps == 0 ? 0.0 : std::exp(eta[static_cast<Eigen::Index>(k)]);
        lambda[k] = jumps == 0 ? 0.0 : cumhaz_.cumulative[jumps - 1];
      }
      for (std::size_t a = 0; a < p; ++a) {
        const double* xa = x.col(static_cast<Eigen::Index>(a)).data() + start;
        double* ra = res.col(static_cast<Eigen::Index>(a)).data();
        const double* acc = xbar_dlambda_.data() + a;
        const double* means = xbar_.means_.data() + a;
        for (std::size_t k = 0; k < m; ++k) {
          const double at_risk = risk[k] * (xa[k] * lambda[k] - (risk[k] == 0.0 ? 0.0 : acc[jump_row[k]]));
          ra[k] = event[k] * (xa[k] - means[slot_row[k]]) - at_risk;
        }
      }
      const Matrix* block = &res;
      if (transformed) {
        mapped.topRows(mi).noalias() = res.topRows(mi) * transform.transpose();
        block = &mapped;
      }
      std::fill(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(m), 0.0);
      for (std::size_t a = 0; a < p; ++a) {
        const double* ra = block->col(static_cast<Eigen::Index>(a)).data();
        for (std::size_t k = 0; k < m; ++k) sq[k] += ra[k] * ra[k];
      }
      for (std::size_t k = 0; k < m; ++k) out[start + k] = std::sqrt(sq[k]);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  if (clamped) {
    *clamped = 0;
    for (auto c : clamps) *clamped += c;
  }
  return out;
}

}  // namespace coxsub
