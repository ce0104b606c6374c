#include "cmhe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmhe/data.hpp"
#include "cmhe/log.hpp"
#include "cmhe/rng.hpp"

namespace cmhe::metrics {

double StepSurvivalCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

double StepSurvivalCurve::before(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

StepSurvivalCurve kaplan_meier(std::span<const double> times, std::span<const int> events) {
  if (times.size() != events.size()) throw Error("kaplan_meier: times and events differ in length");
  if (times.empty()) throw Error("kaplan_meier: need at least one observation");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  StepSurvivalCurve curve;
  double surv = 1.0;
  std::size_t at_risk = times.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = times[order[i]];
    std::size_t deaths = 0;
    std::size_t tied = 0;
    while (i < order.size() && times[order[i]] == t) {
      deaths += events[order[i]] != 0 ? 1 : 0;
      ++tied;
      ++i;
    }
    if (deaths > 0) {
      surv *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      curve.times.push_back(t);
      curve.values.push_back(surv);
    }
    at_risk -= tied;
  }
  return curve;
}

namespace {

void check_sizes(std::span<const double> predicted, std::span<const double> times, std::span<const int> events) {
  if (predicted.size() != times.size() || times.size() != events.size()) {
    throw Error("metrics: predictions, times and events must be equally sized");
  }
}

StepSurvivalCurve censoring_curve(std::span<const double> times, std::span<const int> events) {
  std::vector<int> flipped(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = events[i] ? 0 : 1;
  return kaplan_meier(times, flipped);
}

// Fenwick tree over ranks, counting inserted elements.
class RankCounter {
 public:
  explicit RankCounter(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // number of inserted ranks < rank
  std::size_t below(std::size_t rank) const {
    std::size_t s = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::size_t> tree_;
};

}  // namespace

double brier_score(std::span<const double> predicted, std::span<const double> times,
                   std::span<const int> events, double t, const std::optional<StepSurvivalCurve>& censoring) {
  check_sizes(predicted, times, events);
  const StepSurvivalCurve g = censoring ? *censoring : censoring_curve(times, events);
  double total = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] <= t && events[i] == 0) {
      ++used;  // censored before t: zero weight
      continue;
    }
    const double weight = g.before(std::min(times[i], t));
    if (weight < kIpcwWeightFloor) {
      ++excluded;
      continue;
    }
    const double target = times[i] <= t ? 0.0 : 1.0;
    total += (target - predicted[i]) * (target - predicted[i]) / weight;
    ++used;
  }
  if (excluded > 0) {
    log::warning("brier_score: excluded " + std::to_string(excluded) + " samples with censoring weight below floor");
  }
  if (used == 0) throw Error("brier_score: no usable samples");
  return total / static_cast<double>(used);
}

double integrated_brier(std::span<const double> horizons, std::span<const double> brier) {
  if (horizons.empty() || horizons.size() != brier.size()) {
    throw Error("integrated_brier: need one Brier score per horizon");
  }
  const double t_max = *std::max_element(horizons.begin(), horizons.end());
  double ibs = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) ibs += horizons[i] / t_max * brier[i];
  return ibs;
}

double concordance_td(std::span<const double> predicted, std::span<const double> times,
                      std::span<const int> events, double t, const std::optional<StepSurvivalCurve>& censoring) {
  check_sizes(predicted, times, events);
  const StepSurvivalCurve g = censoring ? *censoring : censoring_curve(times, events);
  const std::size_t n = times.size();

  // dense ranks of predicted risk 1 - S
  std::vector<double> risk(n);
  for (std::size_t i = 0; i < n; ++i) risk[i] = 1.0 - predicted[i];
  std::vector<double> sorted_risk = risk;
  std::sort(sorted_risk.begin(), sorted_risk.end());
  sorted_risk.erase(std::unique(sorted_risk.begin(), sorted_risk.end()), sorted_risk.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(std::lower_bound(sorted_risk.begin(), sorted_risk.end(), risk[i]) -
                                       sorted_risk.begin());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  // sweep from the largest time down; the counter holds samples with T_j > T_i
  RankCounter counter(sorted_risk.size());
  std::size_t inserted = 0;
  double num = 0.0;
  double den = 0.0;
  std::size_t excluded = 0;
  std::size_t pos = 0;
  while (pos < n) {
    std::size_t end = pos;
    while (end < n && times[order[end]] == times[order[pos]]) ++end;
    for (std::size_t q = pos; q < end; ++q) {
      const std::size_t i = order[q];
      if (!events[i] || times[i] > t || inserted == 0) continue;
      const double gi = g.before(times[i]);
      if (gi < kIpcwWeightFloor) {
        ++excluded;
        continue;
      }
      const double w = 1.0 / (gi * gi);
      const double lower = static_cast<double>(counter.below(rank[i]));
      const double ties = static_cast<double>(counter.below(rank[i] + 1)) - lower;
      num += w * (lower + 0.5 * ties);
      den += w * static_cast<double>(inserted);
    }
    for (std::size_t q = pos; q < end; ++q) {
      counter.add(rank[order[q]]);
      ++inserted;
    }
    pos = end;
  }
  if (excluded > 0) {
    log::warning("concordance_td: excluded " + std::to_string(excluded) + " events with censoring weight below floor");
  }
  if (den <= 0.0) throw Error("concordance_td: no comparable pairs");
  // pairs where the earlier event has the higher risk are concordant
  return num / den;
}

double rmst(const std::function<double(double)>& survival, double t, int steps) {
  if (!(t > 0.0)) throw Error("rmst: horizon must be > 0");
  if (steps < 1) throw Error("rmst: steps must be >= 1");
  const double h = t / steps;
  double acc = 0.5 * (survival(0.0) + survival(t));
  for (int i = 1; i < steps; ++i) acc += survival(h * i);
  return acc * h;
}

double rmst(std::span<const double> grid, std::span<const double> values) {
  if (grid.size() != values.size() || grid.size() < 2) throw Error("rmst: need a grid of at least two points");
  double acc = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
  return acc;
}

std::vector<double> uniform_grid(double horizon, int steps) {
  if (!(horizon > 0.0) || steps < 1) throw Error("uniform_grid: horizon must be > 0 and steps >= 1");
  std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) grid[static_cast<std::size_t>(i)] = horizon * i / steps;
  grid.back() = horizon;
  return grid;
}

std::vector<double> event_time_quantiles(std::span<const double> times, std::span<const int> events,
                                         std::span<const double> probs) {
  if (times.size() != events.size()) throw Error("event_time_quantiles: size mismatch");
  std::vector<double> ev;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] == 1) ev.push_back(times[i]);
  }
  if (ev.empty()) throw Error("event_time_quantiles: no observed events");
  std::sort(ev.begin(), ev.end());
  std::vector<double> out;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("event_time_quantiles: probability outside [0, 1]");
    const double pos = p * static_cast<double>(ev.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, ev.size() - 1);
    out.push_back(ev[lo] + (pos - static_cast<double>(lo)) * (ev[hi] - ev[lo]));
  }
  return out;
}

std::vector<double> rmst_rows(const Eigen::MatrixXd& curves, std::span<const double> grid) {
  if (curves.cols() != static_cast<Eigen::Index>(grid.size())) throw Error("rmst_rows: curve/grid size mismatch");
  std::vector<double> out(static_cast<std::size_t>(curves.rows()));
  std::vector<double> row(grid.size());
  for (Eigen::Index i = 0; i < curves.rows(); ++i) {
    for (std::size_t j = 0; j < grid.size(); ++j) row[j] = curves(i, static_cast<Eigen::Index>(j));
    out[static_cast<std::size_t>(i)] = rmst(grid, row);
  }
  return out;
}

Estimate cate_rmst(std::span<const std::size_t> group, std::span<const double> rmst_difference,
                   const BootstrapOptions& bootstrap) {
  if (group.empty()) throw Error("cate_rmst: empty group");
  const auto mean_of = [&](auto&& index_at) {
    double s = 0.0;
    for (std::size_t r = 0; r < group.size(); ++r) s += rmst_difference[index_at(r)];
    return s / static_cast<double>(group.size());
  };
  Estimate est;
  est.value = mean_of([&](std::size_t r) { return group[r]; });
  if (bootstrap.resamples > 0) {
    Rng rng = make_rng(bootstrap.seed, Stream::bootstrap);
    std::vector<double> stats(static_cast<std::size_t>(bootstrap.resamples));
    const auto size = static_cast<std::uint64_t>(group.size());
    for (auto& s : stats) {
      s = mean_of([&](std::size_t) { return group[static_cast<std::size_t>(rng() % size)]; });
    }
    std::sort(stats.begin(), stats.end());
    auto quantile = [&](double p) {
      const double pos = p * static_cast<double>(stats.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, stats.size() - 1);
      return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
    };
    est.half_width = 0.5 * (quantile(0.975) - quantile(0.025));
  }
  return est;
}

Estimate cate_rmst(std::span<const std::size_t> group, const Eigen::MatrixXd& treated,
                   const Eigen::MatrixXd& control, std::span<const double> grid,
                   const BootstrapOptions& bootstrap) {
  if (treated.rows() != control.rows() || treated.cols() != control.cols()) {
    throw Error("cate_rmst: treated and control curves differ in shape");
  }
  const auto r1 = rmst_rows(treated, grid);
  const auto r0 = rmst_rows(control, grid);
  std::vector<double> diff(r1.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = r1[i] - r0[i];
  for (const auto i : group) {
    if (i >= diff.size()) throw Error("cate_rmst: group index out of range");
  }
  return cate_rmst(group, diff, bootstrap);
}

Estimate ate_rmst(const Eigen::MatrixXd& treated, const Eigen::MatrixXd& control, std::span<const double> grid,
                  const BootstrapOptions& bootstrap) {
  std::vector<std::size_t> all(static_cast<std::size_t>(treated.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  return cate_rmst(all, treated, control, grid, bootstrap);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over ties
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t q = i; q < j; ++q) {
      if (labels[order[q]] == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw Error("roc_auc: both classes must be present");
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

MetricsReport evaluate(const Eigen::MatrixXd& predicted, std::span<const double> times, std::span<const int> events,
                       std::span<const double> horizons) {
  if (predicted.cols() != static_cast<Eigen::Index>(horizons.size()) ||
      predicted.rows() != static_cast<Eigen::Index>(times.size())) {
    throw Error("evaluate: prediction matrix must be n x horizons");
  }
  const StepSurvivalCurve g = censoring_curve(times, events);
  MetricsReport report;
  report.horizons.assign(horizons.begin(), horizons.end());
  std::vector<double> column(times.size());
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      column[i] = predicted(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h));
    }
    report.concordance.push_back(concordance_td(column, times, events, horizons[h], g));
    report.brier.push_back(brier_score(column, times, events, horizons[h], g));
  }
  report.integrated_brier = integrated_brier(report.horizons, report.brier);
  return report;
}

}  // namespace cmhe::metrics
