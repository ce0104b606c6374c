#pragma once

#include <span>
#include <vector>

namespace cmhe {

inline constexpr double kSurvivalFloor = 1e-8;

// Weighted natural cubic smoothing spline minimizing
//   sum_i w_i (y_i - s(x_i))^2 + penalty * integral s''(t)^2 dt
// solved with the Reinsch banded formulation.
struct SmoothingSpline {
  std::vector<double> knots;
  std::vector<double> fitted;          // s(x_i)
  std::vector<double> second_derivs;   // s''(x_i); zero at both ends
  double penalty = 0.0;
  double edf = 0.0;  // trace of the hat matrix
  double gcv = 0.0;

  double value(double t) const;
};

// `x` strictly increasing, `w` positive. Fewer than three points are
// returned as the interpolating line.
SmoothingSpline fit_smoothing_spline(std::span<const double> x, std::span<const double> y,
                                     std::span<const double> w, double penalty);

// Candidate penalties 10^(s/4) * range^3, s = -56..8, ascending.
std::vector<double> penalty_grid(std::span<const double> x);

// Grid penalty minimizing generalized cross-validation.
double select_penalty_gcv(std::span<const double> x, std::span<const double> y,
                          std::span<const double> w);

// Non-increasing piecewise-cubic Hermite survival curve with S(0) = 1,
// values in [kSurvivalFloor, 1], held constant after the last knot.
class SurvivalSpline {
 public:
  // S(t) = 1 everywhere.
  SurvivalSpline();
  SurvivalSpline(std::vector<double> knots, std::vector<double> values, std::vector<double> slopes,
                 double penalty = 0.0);

  // Fritsch-Carlson slopes through monotone points (knots[0] == 0, values[0] == 1).
  static SurvivalSpline monotone_interpolant(std::vector<double> knots, std::vector<double> values,
                                             double penalty = 0.0);

  double value(double t) const;
  double derivative(double t) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& slopes() const { return slopes_; }
  double penalty() const { return penalty_; }

 private:
  std::size_t segment(double t) const;

  std::vector<double> knots_;
  std::vector<double> values_;
  std::vector<double> slopes_;
  double penalty_ = 0.0;
};

// Step survival estimate -> smoothing spline -> monotone projection.
//   times/values : the step estimate evaluated at each data point (ascending,
//                  distinct), weights : multiplicities
//   horizon      : right end of the support (>= times.back())
//   penalty      : smoothing weight; negative selects it by GCV
SurvivalSpline smooth_survival(std::span<const double> times, std::span<const double> values,
                               std::span<const double> weights, double horizon, double penalty);

}  // namespace cmhe
