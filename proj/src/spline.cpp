#include "cmhe/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmhe/data.hpp"

namespace cmhe {
namespace {

// Symmetric positive definite matrix with bandwidth two, factored as L D L^T.
struct Pentadiagonal {
  std::vector<double> d0, d1, d2;  // B(i,i), B(i,i+1), B(i,i+2)

  explicit Pentadiagonal(std::size_t n) : d0(n, 0.0), d1(n, 0.0), d2(n, 0.0) {}
  std::size_t size() const { return d0.size(); }
};

struct BandedLdl {
  std::vector<double> diag, l1, l2;  // D(i), L(i+1,i), L(i+2,i)

  explicit BandedLdl(const Pentadiagonal& b) {
    const std::size_t n = b.size();
    diag.assign(n, 0.0);
    l1.assign(n, 0.0);
    l2.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double d = b.d0[i];
      if (i >= 1) d -= l1[i - 1] * l1[i - 1] * diag[i - 1];
      if (i >= 2) d -= l2[i - 2] * l2[i - 2] * diag[i - 2];
      if (!(d > 0.0)) throw Error("smoothing spline: system is not positive definite");
      diag[i] = d;
      double off = b.d1[i];
      if (i >= 1) off -= l1[i - 1] * l2[i - 1] * diag[i - 1];
      l1[i] = off / d;
      l2[i] = b.d2[i] / d;
    }
  }

  std::vector<double> solve(std::vector<double> rhs) const {
    const std::size_t n = diag.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= 1) rhs[i] -= l1[i - 1] * rhs[i - 1];
      if (i >= 2) rhs[i] -= l2[i - 2] * rhs[i - 2];
    }
    for (std::size_t i = 0; i < n; ++i) rhs[i] /= diag[i];
    for (std::size_t i = n; i-- > 0;) {
      if (i + 1 < n) rhs[i] -= l1[i] * rhs[i + 1];
      if (i + 2 < n) rhs[i] -= l2[i] * rhs[i + 2];
    }
    return rhs;
  }

  // Band of the inverse (Hutchinson & de Hoog recursion).
  Pentadiagonal inverse_band() const {
    const std::size_t n = diag.size();
    Pentadiagonal s(n);
    auto at = [&](std::size_t i, std::size_t j) -> double {
      if (i > j) std::swap(i, j);
      if (j >= n) return 0.0;
      switch (j - i) {
        case 0: return s.d0[i];
        case 1: return s.d1[i];
        case 2: return s.d2[i];
        default: return 0.0;
      }
    };
    for (std::size_t i = n; i-- > 0;) {
      s.d2[i] = (i + 2 < n) ? -l1[i] * at(i + 1, i + 2) - l2[i] * at(i + 2, i + 2) : 0.0;
      s.d1[i] = (i + 1 < n) ? -l1[i] * at(i + 1, i + 1) - l2[i] * at(i + 2, i + 1) : 0.0;
      s.d0[i] = 1.0 / diag[i] - l1[i] * at(i + 1, i) - l2[i] * at(i + 2, i);
    }
    return s;
  }
};

struct ReinschSystem {
  std::vector<double> h;
  Pentadiagonal r;    // R
  Pentadiagonal qwq;  // Q^T W^-1 Q
  std::vector<double> qty;

  ReinschSystem(std::span<const double> x, std::span<const double> y, std::span<const double> w)
      : r(x.size() - 2), qwq(x.size() - 2), qty(x.size() - 2, 0.0) {
    const std::size_t n = x.size();
    h.resize(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) h[i] = x[i + 1] - x[i];
    const std::size_t m = n - 2;
    // column j of Q touches rows j, j+1, j+2
    auto q = [&](std::size_t row, std::size_t col) -> double {
      if (row == col) return 1.0 / h[col];
      if (row == col + 1) return -1.0 / h[col] - 1.0 / h[col + 1];
      if (row == col + 2) return 1.0 / h[col + 1];
      return 0.0;
    };
    for (std::size_t j = 0; j < m; ++j) {
      r.d0[j] = (h[j] + h[j + 1]) / 3.0;
      if (j + 1 < m) r.d1[j] = h[j + 1] / 6.0;
      qty[j] = q(j, j) * y[j] + q(j + 1, j) * y[j + 1] + q(j + 2, j) * y[j + 2];
      for (std::size_t off = 0; off <= 2 && j + off < m; ++off) {
        const std::size_t k = j + off;
        double c = 0.0;
        for (std::size_t row = k; row <= j + 2; ++row) c += q(row, j) * q(row, k) / w[row];
        (off == 0 ? qwq.d0 : off == 1 ? qwq.d1 : qwq.d2)[j] = c;
      }
    }
  }

  Pentadiagonal system(double penalty) const {
    Pentadiagonal b(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) {
      b.d0[j] = r.d0[j] + penalty * qwq.d0[j];
      b.d1[j] = r.d1[j] + penalty * qwq.d1[j];
      b.d2[j] = r.d2[j] + penalty * qwq.d2[j];
    }
    return b;
  }
};

void check_inputs(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
  if (x.size() != y.size() || x.size() != w.size() || x.empty()) {
    throw Error("smoothing spline: inputs must be non-empty and equally sized");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(w[i] > 0.0)) throw Error("smoothing spline: weights must be positive");
    if (i > 0 && !(x[i] > x[i - 1])) throw Error("smoothing spline: knots must be strictly increasing");
  }
}

}  // namespace

SmoothingSpline fit_smoothing_spline(std::span<const double> x, std::span<const double> y,
                                     std::span<const double> w, double penalty) {
  check_inputs(x, y, w);
  const std::size_t n = x.size();
  SmoothingSpline out;
  out.knots.assign(x.begin(), x.end());
  out.second_derivs.assign(n, 0.0);
  out.penalty = penalty;
  if (n < 3) {
    out.fitted.assign(y.begin(), y.end());
    out.edf = static_cast<double>(n);
    return out;
  }
  const ReinschSystem sys(x, y, w);
  const BandedLdl ldl(sys.system(penalty));
  const std::vector<double> gamma = ldl.solve(sys.qty);

  out.fitted.assign(y.begin(), y.end());
  const std::size_t m = n - 2;
  for (std::size_t j = 0; j < m; ++j) {
    out.second_derivs[j + 1] = gamma[j];
    // (Q gamma)_row
    out.fitted[j] -= penalty * gamma[j] / sys.h[j] / w[j];
    out.fitted[j + 1] -= penalty * gamma[j] * (-1.0 / sys.h[j] - 1.0 / sys.h[j + 1]) / w[j + 1];
    out.fitted[j + 2] -= penalty * gamma[j] / sys.h[j + 1] / w[j + 2];
  }

  const Pentadiagonal inv = ldl.inverse_band();
  double trace = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    trace += inv.d0[j] * sys.qwq.d0[j] + 2.0 * inv.d1[j] * sys.qwq.d1[j] + 2.0 * inv.d2[j] * sys.qwq.d2[j];
  }
  out.edf = static_cast<double>(n) - penalty * trace;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) rss += w[i] * (y[i] - out.fitted[i]) * (y[i] - out.fitted[i]);
  const double denom = 1.0 - out.edf / static_cast<double>(n);
  out.gcv = denom > 0.0 ? (rss / static_cast<double>(n)) / (denom * denom)
                        : std::numeric_limits<double>::infinity();
  return out;
}

double SmoothingSpline::value(double t) const {
  const std::size_t n = knots.size();
  if (n == 1) return fitted[0];
  if (t <= knots.front()) {
    // natural spline: linear outside the knots
    const double slope = (fitted[1] - fitted[0]) / (knots[1] - knots[0]) -
                         (knots[1] - knots[0]) * second_derivs[1] / 6.0;
    return fitted[0] + slope * (t - knots[0]);
  }
  if (t >= knots.back()) {
    const double h = knots[n - 1] - knots[n - 2];
    const double slope = (fitted[n - 1] - fitted[n - 2]) / h + h * second_derivs[n - 2] / 6.0;
    return fitted[n - 1] + slope * (t - knots[n - 1]);
  }
  const auto it = std::upper_bound(knots.begin(), knots.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - knots.begin()) - 1;
  const double h = knots[i + 1] - knots[i];
  const double a = t - knots[i];
  const double b = knots[i + 1] - t;
  return (a * fitted[i + 1] + b * fitted[i]) / h -
         a * b / 6.0 * ((1.0 + a / h) * second_derivs[i + 1] + (1.0 + b / h) * second_derivs[i]);
}

std::vector<double> penalty_grid(std::span<const double> x) {
  const double range = x.back() - x.front();
  const double scale = range * range * range;
  std::vector<double> out;
  for (int s = -56; s <= 8; ++s) out.push_back(std::pow(10.0, 0.25 * s) * scale);
  return out;
}

double select_penalty_gcv(std::span<const double> x, std::span<const double> y,
                          std::span<const double> w) {
  check_inputs(x, y, w);
  if (x.size() < 3) return 0.0;
  double best = 0.0;
  double best_gcv = std::numeric_limits<double>::infinity();
  for (const double penalty : penalty_grid(x)) {
    const double gcv = fit_smoothing_spline(x, y, w, penalty).gcv;
    if (gcv < best_gcv) {
      best_gcv = gcv;
      best = penalty;
    }
  }
  return best;
}

SurvivalSpline::SurvivalSpline() : knots_{0.0}, values_{1.0}, slopes_{0.0} {}

SurvivalSpline::SurvivalSpline(std::vector<double> knots, std::vector<double> values,
                               std::vector<double> slopes, double penalty)
    : knots_(std::move(knots)), values_(std::move(values)), slopes_(std::move(slopes)), penalty_(penalty) {
  if (knots_.empty() || knots_.size() != values_.size() || knots_.size() != slopes_.size()) {
    throw Error("survival spline: knots, values and slopes must be non-empty and equally sized");
  }
  if (knots_.front() != 0.0 || values_.front() != 1.0) {
    throw Error("survival spline: curve must start at S(0) = 1");
  }
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i] > knots_[i - 1])) throw Error("survival spline: knots must be strictly increasing");
    if (values_[i] > values_[i - 1]) throw Error("survival spline: values must be non-increasing");
  }
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (!(values_[i] >= kSurvivalFloor && values_[i] <= 1.0) || !std::isfinite(slopes_[i])) {
      throw Error("survival spline: values must lie in [floor, 1] with finite slopes");
    }
  }
}

SurvivalSpline SurvivalSpline::monotone_interpolant(std::vector<double> knots, std::vector<double> values,
                                                    double penalty) {
  const std::size_t n = knots.size();
  std::vector<double> slopes(n, 0.0);
  if (n >= 2) {
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = knots[i + 1] - knots[i];
      delta[i] = (values[i + 1] - values[i]) / h[i];
    }
    if (n == 2) {
      slopes[0] = slopes[1] = delta[0];
    } else {
      for (std::size_t i = 1; i + 1 < n; ++i) {
        if (delta[i - 1] * delta[i] <= 0.0) continue;
        const double w1 = 2.0 * h[i] + h[i - 1];
        const double w2 = h[i] + 2.0 * h[i - 1];
        slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
      }
      auto edge = [](double h0, double h1, double d0, double d1) {
        double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (d * d0 <= 0.0) return 0.0;
        if (d0 * d1 <= 0.0 && std::abs(d) > 3.0 * std::abs(d0)) d = 3.0 * d0;
        return d;
      };
      slopes[0] = edge(h[0], h[1], delta[0], delta[1]);
      slopes[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }
  }
  return SurvivalSpline{std::move(knots), std::move(values), std::move(slopes), penalty};
}

std::size_t SurvivalSpline::segment(double t) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  return static_cast<std::size_t>(it - knots_.begin()) - 1;
}

double SurvivalSpline::value(double t) const {
  if (t <= 0.0) return 1.0;
  if (t >= knots_.back()) return values_.back();
  const std::size_t i = segment(t);
  const double h = knots_[i + 1] - knots_[i];
  const double s = (t - knots_[i]) / h;
  const double s2 = s * s;
  const double s3 = s2 * s;
  if (values_[i] == values_[i + 1]) return values_[i];
  const double v = (2 * s3 - 3 * s2 + 1) * values_[i] + (s3 - 2 * s2 + s) * h * slopes_[i] +
                   (-2 * s3 + 3 * s2) * values_[i + 1] + (s3 - s2) * h * slopes_[i + 1];
  // the interpolant stays inside the segment's range; clamping removes rounding
  return std::clamp(v, values_[i + 1], values_[i]);
}

double SurvivalSpline::derivative(double t) const {
  if (t < 0.0 || t >= knots_.back()) return 0.0;
  const std::size_t i = segment(t);
  const double h = knots_[i + 1] - knots_[i];
  const double s = (t - knots_[i]) / h;
  const double s2 = s * s;
  return ((6 * s2 - 6 * s) * values_[i] + (-6 * s2 + 6 * s) * values_[i + 1]) / h +
         (3 * s2 - 4 * s + 1) * slopes_[i] + (3 * s2 - 2 * s) * slopes_[i + 1];
}

SurvivalSpline smooth_survival(std::span<const double> times, std::span<const double> values,
                               std::span<const double> weights, double horizon, double penalty) {
  if (times.size() != values.size() || times.size() != weights.size()) {
    throw Error("smooth_survival: inputs must be equally sized");
  }
  // data plus the anchor S(0) = 1, weighted like the whole sample
  std::vector<double> x, y, w;
  double total = 0.0;
  for (const double v : weights) total += v;
  x.push_back(0.0);
  y.push_back(1.0);
  w.push_back(std::max(total, 1.0));
  double t_max = 0.0;
  for (const double t : times) t_max = std::max(t_max, t);
  // knots closer than this are merged (weighted mean) to keep the banded
  // system well conditioned
  const double min_gap = 1e-7 * std::max(t_max, horizon);
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] <= 0.0) continue;
    if (times[i] - x.back() <= min_gap) {
      if (x.size() == 1) continue;
      const double wt = w.back() + weights[i];
      y.back() = (w.back() * y.back() + weights[i] * values[i]) / wt;
      w.back() = wt;
      continue;
    }
    x.push_back(times[i]);
    y.push_back(values[i]);
    w.push_back(weights[i]);
  }
  if (x.size() == 1) return SurvivalSpline{};

  // dense grid: uniform in time plus quantiles of the data points
  constexpr std::size_t kGrid = 128;
  const double end = std::max(horizon, x.back());
  std::vector<double> grid;
  grid.reserve(2 * kGrid + 1);
  for (std::size_t i = 0; i <= kGrid; ++i) grid.push_back(end * static_cast<double>(i) / kGrid);
  for (std::size_t i = 1; i < kGrid; ++i) {
    grid.push_back(x[(x.size() - 1) * i / kGrid]);
  }
  std::sort(grid.begin(), grid.end());
  const double tol = 1e-12 * end;
  grid.erase(std::unique(grid.begin(), grid.end(), [&](double a, double b) { return b - a <= tol; }),
             grid.end());
  grid.front() = 0.0;
  grid.back() = end;

  // past the last data point the natural spline continues linearly
  auto sample = [&](const SmoothingSpline& fit) {
    std::vector<double> v(grid.size());
    v[0] = 1.0;
    for (std::size_t i = 1; i < grid.size(); ++i) v[i] = std::clamp(fit.value(grid[i]), kSurvivalFloor, 1.0);
    return v;
  };
  auto non_increasing = [](const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] > v[i - 1]) return false;
    }
    return true;
  };

  std::vector<double> v;
  if (penalty < 0.0) {
    // GCV undersmooths cumulative estimates (their errors are strongly
    // correlated): move up the grid from the GCV choice to the first penalty
    // whose fit is already monotone, so the projection leaves no flat pieces
    const double chosen = select_penalty_gcv(x, y, w);
    penalty = chosen;
    v = sample(fit_smoothing_spline(x, y, w, chosen));
    if (!non_increasing(v)) {
      for (const double p : penalty_grid(x)) {
        if (p <= chosen) continue;
        auto candidate = sample(fit_smoothing_spline(x, y, w, p));
        if (non_increasing(candidate)) {
          penalty = p;
          v = std::move(candidate);
          break;
        }
      }
    }
  } else {
    v = sample(fit_smoothing_spline(x, y, w, penalty));
  }
  for (std::size_t i = 1; i < v.size(); ++i) v[i] = std::min(v[i], v[i - 1]);
  return SurvivalSpline::monotone_interpolant(std::move(grid), std::move(v), penalty);
}

}  // namespace cmhe
