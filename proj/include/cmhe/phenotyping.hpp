#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cmhe/metrics.hpp"
#include "cmhe/model.hpp"
#include "cmhe/synthetic.hpp"

namespace cmhe::phenotyping {

// P(phi = m | x) for every record, one row per record.
Eigen::MatrixXd phi_probabilities(const CmheModel& model, const SurvivalDataset& dataset);

// Largest alpha such that at least ceil(target * n) samples have
// probs(i, m) > alpha. Ties at the cut-off all enter the group. Returns 0 (with
// a warning) when no positive alpha reaches the fraction.
double threshold_for_size(const Eigen::MatrixXd& probs, int m, double target_fraction);

// Indices with probs(i, m) > alpha, ascending.
std::vector<std::size_t> members(const Eigen::MatrixXd& probs, int m, double alpha);

// Source of counterfactual survival curves for the records of one dataset.
class CounterfactualEstimator {
 public:
  virtual ~CounterfactualEstimator() = default;
  // One row per record, evaluated on `grid`.
  virtual Eigen::MatrixXd survival(int arm, std::span<const double> grid) const = 0;
  // True when the curves come from the model being evaluated.
  virtual bool self_evaluated() const = 0;
};

class ModelEstimator final : public CounterfactualEstimator {
 public:
  ModelEstimator(const CmheModel& model, const SurvivalDataset& dataset);
  Eigen::MatrixXd survival(int arm, std::span<const double> grid) const override;
  bool self_evaluated() const override { return true; }

 private:
  const CmheModel* model_;
  Batch batch_;
};

class OracleEstimator final : public CounterfactualEstimator {
 public:
  OracleEstimator(synthetic::SyntheticConfig config, const SurvivalDataset& dataset,
                  synthetic::GroundTruth truth);
  Eigen::MatrixXd survival(int arm, std::span<const double> grid) const override;
  bool self_evaluated() const override { return false; }

 private:
  synthetic::SyntheticConfig config_;
  Eigen::MatrixXd x_;
  synthetic::GroundTruth truth_;
};

struct RankOptions {
  double target_fraction = 0.15;
  int grid_steps = 1000;
  metrics::BootstrapOptions bootstrap{};
};

struct GroupEffect {
  int group = 0;
  double alpha = 0.0;
  std::vector<std::size_t> members;
  double size_fraction = 0.0;
  metrics::Estimate cate;
};

struct PhenogroupRanking {
  double horizon = 0.0;
  bool self_evaluated = false;
  std::vector<GroupEffect> groups;  // descending CATE
  metrics::Estimate ate;

  const GroupEffect& enhanced() const { return groups.front(); }
  const GroupEffect& diminished() const { return groups.back(); }
};

// Per-record RMST(treated) - RMST(control) up to `horizon`.
std::vector<double> rmst_differences(const CounterfactualEstimator& estimator, double horizon, int grid_steps);

// Selects, for each m, the samples whose P(phi = m | x) clears the
// size-matched threshold, estimates their CATE and orders the groups.
PhenogroupRanking rank_phenogroups(const Eigen::MatrixXd& probs, const CounterfactualEstimator& estimator,
                                   double horizon, const RankOptions& options = {});
PhenogroupRanking rank_phenogroups(const CmheModel& model, const SurvivalDataset& train, double horizon,
                                   const CounterfactualEstimator& estimator, const RankOptions& options = {});

// Size-matched group `m` on another split (typically the held-out one).
GroupEffect evaluate_group(const Eigen::MatrixXd& probs, int m, const CounterfactualEstimator& estimator,
                           double horizon, const RankOptions& options = {});

}  // namespace cmhe::phenotyping
