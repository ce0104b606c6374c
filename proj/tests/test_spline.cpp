#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cmhe/data.hpp"
#include "cmhe/spline.hpp"

using namespace cmhe;

namespace {

struct DenseFit {
  Eigen::VectorXd fitted;
  double edf;
};

// Smoothing spline by dense linear algebra: g = (W + lambda K)^-1 W y with
// K = Q R^-1 Q^T built from the knot spacings.
DenseFit dense_smoother(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& w,
                        double lambda) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n - 2);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n - 2, n - 2);
  for (Eigen::Index j = 0; j < n - 2; ++j) {
    const double h0 = x[j + 1] - x[j], h1 = x[j + 2] - x[j + 1];
    q(j, j) = 1.0 / h0;
    q(j + 1, j) = -1.0 / h0 - 1.0 / h1;
    q(j + 2, j) = 1.0 / h1;
    r(j, j) = (h0 + h1) / 3.0;
    if (j + 1 < n - 2) r(j, j + 1) = r(j + 1, j) = h1 / 6.0;
  }
  const Eigen::MatrixXd k = q * r.inverse() * q.transpose();
  Eigen::MatrixXd wm = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    wm(i, i) = w[i];
    yv(i) = y[i];
  }
  const Eigen::MatrixXd hat = (wm + lambda * k).inverse() * wm;
  return {hat * yv, hat.trace()};
}

}  // namespace

TEST_CASE("smoothing spline matches the dense formulation") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + trial % 12;
    std::vector<double> x, y, w;
    double t = 0.0;
    for (int i = 0; i < n; ++i) {
      t += 0.05 + u(rng);
      x.push_back(t);
      y.push_back(std::sin(t) + 0.3 * u(rng));
      w.push_back(0.5 + 2.0 * u(rng));
    }
    const double lambda = std::pow(10.0, -2.0 + 4.0 * u(rng));
    const auto fit = fit_smoothing_spline(x, y, w, lambda);
    const auto ref = dense_smoother(x, y, w, lambda);
    for (int i = 0; i < n; ++i) CHECK(fit.fitted[i] == doctest::Approx(ref.fitted(i)).epsilon(1e-9));
    CHECK(fit.edf == doctest::Approx(ref.edf).epsilon(1e-9));
    for (int i = 0; i < n; ++i) CHECK(fit.value(x[i]) == doctest::Approx(fit.fitted[i]).epsilon(1e-12));
  }
}

TEST_CASE("penalty limits: zero interpolates, huge fits the weighted line") {
  const std::vector<double> x{0.0, 1.0, 2.5, 3.0, 4.5, 6.0};
  const std::vector<double> y{1.0, 0.2, 0.9, -0.4, 0.3, 0.1};
  const std::vector<double> w{1.0, 2.0, 1.0, 0.5, 1.0, 3.0};
  const auto interp = fit_smoothing_spline(x, y, w, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(interp.fitted[i] == doctest::Approx(y[i]).epsilon(1e-12));
  CHECK(interp.edf == doctest::Approx(6.0).epsilon(1e-9));

  // weighted least-squares line
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
    sxx += w[i] * x[i] * x[i];
    sxy += w[i] * x[i] * y[i];
  }
  const double slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / sw;
  const auto line = fit_smoothing_spline(x, y, w, 1e12);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(line.fitted[i] == doctest::Approx(icpt + slope * x[i]).epsilon(1e-6));
  CHECK(line.edf == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("natural spline: zero end curvature, continuous, linear outside") {
  const std::vector<double> x{0.0, 0.7, 1.1, 2.0, 3.2};
  const std::vector<double> y{0.0, 1.0, 0.5, 0.8, 0.2};
  const std::vector<double> w(5, 1.0);
  const auto s = fit_smoothing_spline(x, y, w, 0.05);
  CHECK(s.second_derivs.front() == 0.0);
  CHECK(s.second_derivs.back() == 0.0);
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    CHECK(s.value(x[i] - 1e-9) == doctest::Approx(s.value(x[i] + 1e-9)).epsilon(1e-7));
  }
  const double right_slope = (s.value(3.2) - s.value(3.2 - 1e-6)) / 1e-6;
  CHECK(s.value(4.2) == doctest::Approx(s.value(3.2) + right_slope).epsilon(1e-4));
}

TEST_CASE("gcv selection returns the grid minimum") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> x, y, w;
  for (int i = 0; i < 40; ++i) {
    x.push_back(0.1 * i);
    y.push_back(std::exp(-0.1 * i) + noise(rng));
    w.push_back(1.0);
  }
  const double chosen = select_penalty_gcv(x, y, w);
  const double gcv = fit_smoothing_spline(x, y, w, chosen).gcv;
  const double range = x.back() - x.front();
  for (int s = -56; s <= 8; ++s) {
    const double p = std::pow(10.0, 0.25 * s) * range * range * range;
    CHECK(gcv <= fit_smoothing_spline(x, y, w, p).gcv * (1.0 + 1e-12));
  }
  // dense oracle for the criterion at the chosen penalty
  const auto ref = dense_smoother(x, y, w, chosen);
  double rss = 0.0;
  for (int i = 0; i < 40; ++i) rss += (y[i] - ref.fitted(i)) * (y[i] - ref.fitted(i));
  const double denom = 1.0 - ref.edf / 40.0;
  CHECK(gcv == doctest::Approx(rss / 40.0 / (denom * denom)).epsilon(1e-8));
}

TEST_CASE("survival spline validates its invariants") {
  const SurvivalSpline one;
  CHECK(one.value(0.0) == 1.0);
  CHECK(one.value(123.0) == 1.0);
  CHECK(one.derivative(5.0) == 0.0);
  CHECK_THROWS_AS(SurvivalSpline({0.0, 1.0}, {0.9, 0.5}, {0, 0}), Error);
  CHECK_THROWS_AS(SurvivalSpline({0.0, 1.0}, {1.0, 1.1}, {0, 0}), Error);
  CHECK_THROWS_AS(SurvivalSpline({0.0, 1.0, 1.0}, {1.0, 0.5, 0.4}, {0, 0, 0}), Error);
  CHECK_THROWS_AS(SurvivalSpline({0.0, 1.0}, {1.0, 0.0}, {0, 0}), Error);
}

TEST_CASE("monotone interpolant passes through the points and never increases") {
  const std::vector<double> k{0.0, 0.5, 0.6, 2.0, 3.0, 5.0};
  const std::vector<double> v{1.0, 0.9, 0.5, 0.49, 0.2, 0.2};
  const auto s = SurvivalSpline::monotone_interpolant(k, v);
  for (std::size_t i = 0; i < k.size(); ++i) CHECK(s.value(k[i]) == doctest::Approx(v[i]).epsilon(1e-15));
  double prev = 1.0;
  for (int i = 0; i <= 6000; ++i) {
    const double t = 6.0 * i / 6000.0;
    const double cur = s.value(t);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
  CHECK(s.value(7.0) == 0.2);
  CHECK(s.derivative(7.0) == 0.0);
  for (double t : {0.3, 0.55, 1.4, 2.5, 4.0}) {
    const double fd = (s.value(t + 1e-7) - s.value(t - 1e-7)) / 2e-7;
    CHECK(s.derivative(t) == doctest::Approx(fd).epsilon(1e-5));
    CHECK(s.derivative(t) <= 0.0);
  }
}

TEST_CASE("smooth_survival recovers a smooth curve and keeps the invariants") {
  std::vector<double> t, v, w;
  for (int i = 1; i <= 200; ++i) {
    t.push_back(0.02 * i);
    v.push_back(std::exp(-0.02 * i));
    w.push_back(1.0);
  }
  const auto s = smooth_survival(t, v, w, 4.0, -1.0);
  CHECK(s.value(0.0) == 1.0);
  CHECK(s.knots().front() == 0.0);
  for (double x : {0.3, 1.0, 2.0, 3.5}) CHECK(s.value(x) == doctest::Approx(std::exp(-x)).epsilon(2e-3));
  CHECK(s.penalty() > 0.0);
  CHECK(s.value(10.0) == s.values().back());
  CHECK(s.derivative(10.0) == 0.0);
}

TEST_CASE("auto-selected penalty leaves no flat pieces inside the data") {
  // jump midpoints of an empirical survival curve of exponential draws
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> draw(1.0);
    std::vector<double> sample(200);
    for (auto& v : sample) v = draw(rng);
    std::sort(sample.begin(), sample.end());
    std::vector<double> t, v, w;
    for (std::size_t i = 0; i + 1 < sample.size(); ++i) {
      t.push_back(sample[i]);
      v.push_back(1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(sample.size()));
      w.push_back(1.0);
    }
    const auto s = smooth_survival(t, v, w, sample.back(), -1.0);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      const double mid = 0.5 * (t[i] + t[i + 1]);
      if (mid > t.front()) CHECK(s.derivative(mid) < 0.0);
    }
  }
}

TEST_CASE("smooth_survival tolerates nearly tied times") {
  std::vector<double> t, v, w;
  double surv = 1.0;
  for (int i = 1; i <= 60; ++i) {
    t.push_back(0.1 * i);
    surv *= 0.97;
    v.push_back(surv);
    w.push_back(1.0);
    t.push_back(0.1 * i + 1e-13);
    v.push_back(surv);
    w.push_back(1.0);
  }
  SurvivalSpline s;
  CHECK_NOTHROW(s = smooth_survival(t, v, w, 6.0, -1.0));
  CHECK(s.value(3.0) == doctest::Approx(std::pow(0.97, 30)).epsilon(0.02));
}

TEST_CASE("smooth_survival with no positive times is the unit curve") {
  const std::vector<double> none;
  const auto s = smooth_survival(none, none, none, 3.0, -1.0);
  CHECK(s.value(2.0) == doctest::Approx(1.0));
}
