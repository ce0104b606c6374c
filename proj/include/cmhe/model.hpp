#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cmhe/data.hpp"
#include "cmhe/network.hpp"
#include "cmhe/rng.hpp"
#include "cmhe/spline.hpp"

namespace cmhe {

// Floor on the baseline event density -dS/dt used by the uncensored term.
inline constexpr double kDensityFloor = 1e-12;

struct FitConfig {
  int k = 3;
  int m = 2;
  std::vector<int> hidden{50, 50};
  int batch_size = 128;
  double learning_rate = 1e-3;
  int max_epochs = 1000;
  int patience = 100;
  // negative: choose by GCV on the first epoch, then keep it fixed
  double spline_penalty = -1.0;
  double validation_fraction = 0.25;
  bool standardize = true;
  // hold omega at zero (no treatment effect can be learned)
  bool freeze_omega = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// One survival curve per baseline cluster.
using BaselineSurvival = std::vector<SurvivalSpline>;

struct CmheModel {
  CmheParams params;
  BaselineSurvival baselines;
  StandardizationStats standardization;
  FitConfig config;

  int k() const { return static_cast<int>(params.head_f.out_dim()); }
  int m() const { return static_cast<int>(params.head_g.out_dim()); }
  void validate() const;
};

// Records mapped into the model's (standardized) feature space.
struct Batch {
  Eigen::MatrixXd x;
  std::vector<double> time;
  std::vector<int> event;
  std::vector<int> treatment;

  std::size_t size() const { return time.size(); }
  Batch subset(std::span<const std::size_t> indices) const;
};

// Applies the model's standardization. Feature columns are matched by name.
Batch make_batch(const CmheModel& model, const SurvivalDataset& dataset);
// Uses the dataset's features as-is (already in model space).
Batch make_batch(const SurvivalDataset& dataset);

struct Posteriors {
  Eigen::MatrixXd gamma;  // n x K, soft P(Z = k | t, x, a)
  Eigen::MatrixXd zeta;   // n x M, soft P(phi = m | t, x, a)
  std::vector<int> psi;   // hard draws from gamma (0-based)
  std::vector<int> xi;    // hard draws from zeta (0-based)

  std::size_t size() const { return psi.size(); }
};

// S_k^m(t | x, a) = S_k(t) ^ (exp(h_k(x)) * exp(omega_m)^a); x in model space.
double conditional_survival(const CmheModel& model, const Eigen::VectorXd& x, int a, int k, int m,
                            double t);

// ln f(t | k, m, x, a) for an event, ln S_k^m(t | x, a) when censored.
double conditional_hazard_loglik(const CmheModel& model, const Eigen::VectorXd& x, double t, int event,
                                 int a, int k, int m);

// n x (K*M) matrix of ln[ P(t_i | k, m, x_i, a_i) P(Z=k | x_i) P(phi=m | x_i) ],
// column index k * M + m.
Eigen::MatrixXd joint_log_terms(const CmheModel& model, const Batch& batch);

// Soft posteriors from the joint (log space), then hard draws with `rng`.
Posteriors e_step(const CmheModel& model, const Batch& batch, Rng& rng);

// Draws psi/xi from the gate priors only (no outcome information).
Posteriors prior_posteriors(const CmheParams& params, const Batch& batch, Rng& rng);

// Breslow-tie Cox partial log-likelihood restricted to `member` rows. When
// `grad` is given it receives d/d(eta) (zero for non-members).
double cox_partial_loglik(std::span<const double> time, std::span<const int> event,
                          std::span<const double> eta, std::span<const char> member,
                          std::vector<double>* grad = nullptr);

// ln PL_k over the batch with risk sets restricted to psi == k.
double partial_loglik_k(const CmheParams& params, const Batch& batch, const Posteriors& post, int k);

// Q-hat = sum_k ln PL_k + sum_i sum_k gamma ln softmax(f) + sum_i sum_m zeta ln softmax(g).
double q_hat(const CmheParams& params, const Batch& batch, const Posteriors& post);

struct QHatGradient {
  double value = 0.0;
  CmheParams grad;  // d Q-hat / d theta (ascent direction)
};
QHatGradient q_hat_gradient(const CmheParams& params, const Batch& batch, const Posteriors& post);

// Right-continuous step function of the cumulative hazard.
struct CumulativeHazard {
  std::vector<double> times;       // distinct event times, ascending
  std::vector<double> cumulative;  // Lambda at and after each time

  double at(double t) const;
  bool empty() const { return times.empty(); }
};

CumulativeHazard breslow_estimate(std::span<const double> time, std::span<const int> event,
                                  std::span<const double> eta, std::span<const char> member);

// Per-cluster Breslow estimates before smoothing; eta_j = h_k(x_j) + a_j omega_{xi_j}.
std::vector<CumulativeHazard> breslow_cumulative_hazards(const CmheParams& params, const Batch& batch,
                                                         const Posteriors& post);

// Breslow -> exp(-Lambda) -> smoothing spline -> monotone projection, per
// cluster. Clusters without hard-assigned events keep `model.baselines[k]`.
// `penalties[k] < 0` selects that cluster's penalty by GCV.
BaselineSurvival breslow_update(const CmheModel& model, const Batch& batch, const Posteriors& post,
                                std::span<const double> penalties, double horizon);

// Counterfactual survival under do(A = arm) at each time.
std::vector<double> predict_survival(const CmheModel& model, const Eigen::VectorXd& x, int arm,
                                     std::span<const double> times);
// One row per batch sample.
Eigen::MatrixXd predict_survival(const CmheModel& model, const Batch& batch, int arm,
                                 std::span<const double> times);
// Factual predictions: each sample at its own observed arm.
Eigen::MatrixXd predict_survival_factual(const CmheModel& model, const Batch& batch,
                                         std::span<const double> times);

// Mixture probabilities P(phi = m | x), one row per sample.
Eigen::MatrixXd phi_gate(const CmheModel& model, const Batch& batch);
// Per-sample log hazard h_k(x) for cluster k.
Eigen::VectorXd log_hazards(const CmheModel& model, const Batch& batch, int k = 0);

std::vector<double> full_loglik_terms(const CmheModel& model, const Batch& batch);
double full_loglik(const CmheModel& model, const Batch& batch);

struct EpochRecord {
  int epoch = 0;
  double validation_loglik = 0.0;
  bool checkpoint = false;
};

struct FitResult {
  CmheModel model;
  std::vector<EpochRecord> log;  // epoch 0 is the initialization
  int best_epoch = 0;
};

FitResult fit(const SurvivalDataset& dataset, const FitConfig& config);

}  // namespace cmhe
