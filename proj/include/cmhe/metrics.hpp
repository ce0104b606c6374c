#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cmhe::metrics {

// Right-continuous, piecewise-constant survival estimate.
struct StepSurvivalCurve {
  std::vector<double> times;   // distinct times where the curve drops, ascending
  std::vector<double> values;  // S at and after each time

  double at(double t) const;
  // Left limit S(t-).
  double before(double t) const;
};

// Product-limit estimator with tied times grouped. Pass 1 - delta to get the
// censoring survival curve used for IPCW.
StepSurvivalCurve kaplan_meier(std::span<const double> times, std::span<const int> events);

inline constexpr double kIpcwWeightFloor = 1e-6;

// IPCW Brier score at horizon t. `predicted` holds P-hat(T > t | x_i); the
// censoring curve defaults to the Kaplan-Meier estimate on the same data.
double brier_score(std::span<const double> predicted, std::span<const double> times,
                   std::span<const int> events, double t,
                   const std::optional<StepSurvivalCurve>& censoring = std::nullopt);

// sum_t (t / t_max) * BS(t) over the given horizons.
double integrated_brier(std::span<const double> horizons, std::span<const double> brier);

// Censoring-adjusted time-dependent concordance at t. Comparable pairs have
// delta_i = 1, T_i < T_j and T_i <= t, weighted by G(T_i-)^-2; predicted risk
// is 1 - P-hat(T > t | x); tied risks count 1/2.
double concordance_td(std::span<const double> predicted, std::span<const double> times,
                      std::span<const int> events, double t,
                      const std::optional<StepSurvivalCurve>& censoring = std::nullopt);

// Trapezoidal integral of `survival` over [0, t] with `steps` intervals.
double rmst(const std::function<double(double)>& survival, double t, int steps = 1000);
// Trapezoidal integral of sampled values over their grid (grid[0] = 0).
double rmst(std::span<const double> grid, std::span<const double> values);

std::vector<double> uniform_grid(double horizon, int steps = 1000);

// Quantiles of the observed event times (linear interpolation between order
// statistics). Used for the default evaluation horizons.
std::vector<double> event_time_quantiles(std::span<const double> times, std::span<const int> events,
                                         std::span<const double> probs);

struct Estimate {
  double value = 0.0;
  double half_width = 0.0;  // half of the percentile-bootstrap 95% interval
};

struct BootstrapOptions {
  int resamples = 500;
  std::uint64_t seed = 0;
};

// Mean over `group` of RMST(S1) - RMST(S0). Curve matrices have one row per
// sample, sampled on `grid` (which ends at the horizon).
Estimate cate_rmst(std::span<const std::size_t> group, const Eigen::MatrixXd& treated,
                   const Eigen::MatrixXd& control, std::span<const double> grid,
                   const BootstrapOptions& bootstrap = {});
// Same, from per-sample RMST differences.
Estimate cate_rmst(std::span<const std::size_t> group, std::span<const double> rmst_difference,
                   const BootstrapOptions& bootstrap = {});

Estimate ate_rmst(const Eigen::MatrixXd& treated, const Eigen::MatrixXd& control,
                  std::span<const double> grid, const BootstrapOptions& bootstrap = {});

// Per-row RMST of sampled curves.
std::vector<double> rmst_rows(const Eigen::MatrixXd& curves, std::span<const double> grid);

// Mann-Whitney AUC with ties counted 1/2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct NamedEstimate {
  std::string name;
  double horizon = 0.0;
  Estimate estimate;
};

struct MetricsReport {
  std::vector<double> horizons;
  std::vector<double> concordance;
  std::vector<double> brier;
  double integrated_brier = 0.0;
  std::vector<NamedEstimate> effects;
};

// C-td and BS at each horizon plus IBS, from an (n x horizons) matrix of
// predicted survival probabilities.
MetricsReport evaluate(const Eigen::MatrixXd& predicted, std::span<const double> times,
                       std::span<const int> events, std::span<const double> horizons);

}  // namespace cmhe::metrics
