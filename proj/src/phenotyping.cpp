#include "cmhe/phenotyping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cmhe/log.hpp"

namespace cmhe::phenotyping {

Eigen::MatrixXd phi_probabilities(const CmheModel& model, const SurvivalDataset& dataset) {
  return phi_gate(model, make_batch(model, dataset));
}

double threshold_for_size(const Eigen::MatrixXd& probs, int m, double target_fraction) {
  if (!(target_fraction > 0.0 && target_fraction <= 1.0)) {
    throw Error("threshold_for_size: target fraction must lie in (0, 1]");
  }
  if (m < 0 || m >= probs.cols()) throw Error("threshold_for_size: invalid group index");
  const auto n = static_cast<std::size_t>(probs.rows());
  if (n == 0) throw Error("threshold_for_size: no samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // descending probability, then ascending index
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs(static_cast<Eigen::Index>(a), m) > probs(static_cast<Eigen::Index>(b), m);
  });
  const auto needed = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(target_fraction * static_cast<double>(n) - 1e-9)));
  const double cutoff = probs(static_cast<Eigen::Index>(order[std::min(needed, n) - 1]), m);
  const double alpha = std::nextafter(cutoff, -std::numeric_limits<double>::infinity());
  if (!(alpha > 0.0)) {
    log::warning("threshold_for_size: no positive threshold reaches the target fraction; using 0");
    return 0.0;
  }
  return alpha;
}

std::vector<std::size_t> members(const Eigen::MatrixXd& probs, int m, double alpha) {
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (probs(i, m) > alpha) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

ModelEstimator::ModelEstimator(const CmheModel& model, const SurvivalDataset& dataset)
    : model_(&model), batch_(make_batch(model, dataset)) {}

Eigen::MatrixXd ModelEstimator::survival(int arm, std::span<const double> grid) const {
  return predict_survival(*model_, batch_, arm, grid);
}

OracleEstimator::OracleEstimator(synthetic::SyntheticConfig config, const SurvivalDataset& dataset,
                                 synthetic::GroundTruth truth)
    : config_(std::move(config)), truth_(std::move(truth)) {
  if (truth_.z.size() != dataset.size() || truth_.phi.size() != dataset.size()) {
    throw Error("oracle estimator: ground truth does not match the dataset");
  }
  if (dataset.dim() != synthetic::kFeatureCount) throw Error("oracle estimator: expected 4 raw features");
  x_ = dataset.features();
}

Eigen::MatrixXd OracleEstimator::survival(int arm, std::span<const double> grid) const {
  Eigen::MatrixXd out(x_.rows(), static_cast<Eigen::Index>(grid.size()));
  std::vector<double> x(synthetic::kFeatureCount);
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    for (int j = 0; j < synthetic::kFeatureCount; ++j) x[static_cast<std::size_t>(j)] = x_(i, j);
    const auto s = synthetic::oracle_survival(config_, x, truth_.z[static_cast<std::size_t>(i)],
                                              truth_.phi[static_cast<std::size_t>(i)], arm, grid);
    for (std::size_t j = 0; j < grid.size(); ++j) out(i, static_cast<Eigen::Index>(j)) = s[j];
  }
  return out;
}

std::vector<double> rmst_differences(const CounterfactualEstimator& estimator, double horizon, int grid_steps) {
  const auto grid = metrics::uniform_grid(horizon, grid_steps);
  const auto r1 = metrics::rmst_rows(estimator.survival(1, grid), grid);
  const auto r0 = metrics::rmst_rows(estimator.survival(0, grid), grid);
  std::vector<double> diff(r1.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = r1[i] - r0[i];
  return diff;
}

namespace {

GroupEffect group_effect(const Eigen::MatrixXd& probs, int m, std::span<const double> diff,
                         const RankOptions& options) {
  GroupEffect g;
  g.group = m;
  g.alpha = threshold_for_size(probs, m, options.target_fraction);
  g.members = members(probs, m, g.alpha);
  g.size_fraction = static_cast<double>(g.members.size()) / static_cast<double>(probs.rows());
  if (!g.members.empty()) g.cate = metrics::cate_rmst(g.members, diff, options.bootstrap);
  return g;
}

}  // namespace

PhenogroupRanking rank_phenogroups(const Eigen::MatrixXd& probs, const CounterfactualEstimator& estimator,
                                   double horizon, const RankOptions& options) {
  const auto diff = rmst_differences(estimator, horizon, options.grid_steps);
  if (static_cast<Eigen::Index>(diff.size()) != probs.rows()) {
    throw Error("rank_phenogroups: estimator and probabilities cover different samples");
  }
  PhenogroupRanking ranking;
  ranking.horizon = horizon;
  ranking.self_evaluated = estimator.self_evaluated();
  std::vector<std::size_t> all(diff.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  ranking.ate = metrics::cate_rmst(all, diff, options.bootstrap);
  for (int m = 0; m < probs.cols(); ++m) {
    GroupEffect g = group_effect(probs, m, diff, options);
    if (g.members.empty()) {
      log::warning("rank_phenogroups: group " + std::to_string(m) + " is empty; excluded");
      continue;
    }
    ranking.groups.push_back(std::move(g));
  }
  if (ranking.groups.empty()) throw Error("rank_phenogroups: every group is empty");
  std::stable_sort(ranking.groups.begin(), ranking.groups.end(),
                   [](const GroupEffect& a, const GroupEffect& b) { return a.cate.value > b.cate.value; });
  return ranking;
}

PhenogroupRanking rank_phenogroups(const CmheModel& model, const SurvivalDataset& train, double horizon,
                                   const CounterfactualEstimator& estimator, const RankOptions& options) {
  return rank_phenogroups(phi_probabilities(model, train), estimator, horizon, options);
}

GroupEffect evaluate_group(const Eigen::MatrixXd& probs, int m, const CounterfactualEstimator& estimator,
                           double horizon, const RankOptions& options) {
  const auto diff = rmst_differences(estimator, horizon, options.grid_steps);
  GroupEffect g = group_effect(probs, m, diff, options);
  if (g.members.empty()) throw Error("evaluate_group: group is empty");
  return g;
}

}  // namespace cmhe::phenotyping
