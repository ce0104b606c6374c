#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmhe/data.hpp"

namespace cmhe::synthetic {

// Benchmark with three Gaussian blobs in (x1, x2), a non-linear effect group
// phi = 1{|x3| + |x4| > 2} and Gompertz event times.
//
// Survival given the linear predictor lp and shape b:
//   S(t) = exp( (e^lp / b) * (1 - e^{b t}) )
// with lp = beta_z . x + effect, where effect = -magnitude for treated phi = 1,
// +magnitude for treated phi = 0 and 0 for untreated subjects.
struct SyntheticConfig {
  std::size_t n = 5000;
  std::vector<std::array<double, 2>> centers{{-3.0, 0.0}, {3.0, 0.0}, {0.0, 4.0}};
  double blob_sd = 1.0;
  // numpy default_rng(0).standard_normal((3, 4))
  std::vector<std::array<double, 4>> beta{
      {0.1257302210933933, -0.1321048632913019, 0.6404226504432821, 0.10490011715303971},
      {-0.535669373161111, 0.36159505490948474, 1.3040000451301372, 0.9470809631292422},
      {-0.7037352358069926, -1.2654214710460525, -0.6232744625373522, 0.0413259793472436}};
  double gompertz_shape = 1.0;
  double effect_magnitude = 1.0;
  double p_event = 0.75;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  std::vector<int> z;          // 1..K_true
  std::vector<int> phi;        // 0 or 1
  std::vector<double> t_star;  // uncensored event time
};

struct SyntheticData {
  SurvivalDataset dataset;
  GroundTruth truth;
};

inline constexpr int kFeatureCount = 4;

SyntheticData generate(const SyntheticConfig& config);

int phi_rule(double x3, double x4);
double treatment_effect(const SyntheticConfig& config, int phi, int a);
double linear_predictor(const SyntheticConfig& config, std::span<const double> x, int z, int phi, int a);

double gompertz_survival(double lp, double shape, double t);
// Inverse of gompertz_survival in t for a survival level u in (0, 1).
double gompertz_quantile(double lp, double shape, double u);

// Ground-truth counterfactual survival on `times`.
std::vector<double> oracle_survival(const SyntheticConfig& config, std::span<const double> x, int z, int phi,
                                    int a, std::span<const double> times);

GroundTruth subset(const GroundTruth& truth, const std::vector<std::size_t>& indices);

// Columns z_true, phi_true, t_star; one row per record.
void write_truth_csv(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_truth_csv(const std::filesystem::path& path);

}  // namespace cmhe::synthetic
