#include "cmhe/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "cmhe/rng.hpp"

namespace cmhe::synthetic {

void SyntheticConfig::validate() const {
  if (n < 10) throw Error("synthetic: n must be >= 10");
  if (!(p_event > 0.0 && p_event <= 1.0)) throw Error("synthetic: p_event must lie in (0, 1]");
  if (centers.empty()) throw Error("synthetic: at least one blob center required");
  if (centers.size() != beta.size()) throw Error("synthetic: one beta vector per blob required");
  if (!(blob_sd > 0.0)) throw Error("synthetic: blob_sd must be > 0");
  if (!(gompertz_shape > 0.0)) throw Error("synthetic: gompertz_shape must be > 0");
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      if (centers[i] == centers[j]) throw Error("synthetic: blob centers must be distinct");
    }
  }
}

int phi_rule(double x3, double x4) { return std::abs(x3) + std::abs(x4) > 2.0 ? 1 : 0; }

double treatment_effect(const SyntheticConfig& config, int phi, int a) {
  if (a == 0) return 0.0;
  return phi == 1 ? -config.effect_magnitude : config.effect_magnitude;
}

double linear_predictor(const SyntheticConfig& config, std::span<const double> x, int z, int phi, int a) {
  if (x.size() != kFeatureCount) throw Error("synthetic: expected 4 features");
  if (z < 1 || z > static_cast<int>(config.beta.size())) throw Error("synthetic: invalid cluster label");
  const auto& b = config.beta[static_cast<std::size_t>(z - 1)];
  double lp = 0.0;
  for (int j = 0; j < kFeatureCount; ++j) lp += b[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
  return lp + treatment_effect(config, phi, a);
}

double gompertz_survival(double lp, double shape, double t) {
  if (t <= 0.0) return 1.0;
  // expm1 keeps precision for small shape * t
  return std::exp(-std::exp(lp) / shape * std::expm1(shape * t));
}

double gompertz_quantile(double lp, double shape, double u) {
  return std::log1p(-shape * std::log(u) * std::exp(-lp)) / shape;
}

std::vector<double> oracle_survival(const SyntheticConfig& config, std::span<const double> x, int z, int phi,
                                    int a, std::span<const double> times) {
  const double lp = linear_predictor(config, x, z, phi, a);
  std::vector<double> out(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) out[j] = gompertz_survival(lp, config.gompertz_shape, times[j]);
  return out;
}

SyntheticData generate(const SyntheticConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, Stream::simulate);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto k_true = static_cast<std::uint64_t>(config.centers.size());

  std::vector<SurvivalRecord> records;
  records.reserve(config.n);
  GroundTruth truth;
  for (std::size_t i = 0; i < config.n; ++i) {
    SurvivalRecord r;
    const int z = static_cast<int>(rng() % k_true) + 1;
    const auto& c = config.centers[static_cast<std::size_t>(z - 1)];
    const double x1 = c[0] + config.blob_sd * normal(rng);
    const double x2 = c[1] + config.blob_sd * normal(rng);
    const double x3 = -2.0 + 4.0 * uniform_open(rng);
    const double x4 = -2.0 + 4.0 * uniform_open(rng);
    r.x = {x1, x2, x3, x4};
    const int phi = phi_rule(x3, x4);
    r.treatment = uniform_open(rng) < 0.5 ? 1 : 0;
    const double lp = linear_predictor(config, r.x, z, phi, r.treatment);
    const double t_star = gompertz_quantile(lp, config.gompertz_shape, uniform_open(rng));
    r.event = uniform_open(rng) < config.p_event ? 1 : 0;
    // C ~ Uniform(0, t*), strictly inside since the draw is in (0, 1)
    r.time = r.event == 1 ? t_star : t_star * uniform_open(rng);
    records.push_back(std::move(r));
    truth.z.push_back(z);
    truth.phi.push_back(phi);
    truth.t_star.push_back(t_star);
  }
  return {SurvivalDataset{std::move(records), {"x1", "x2", "x3", "x4"}}, std::move(truth)};
}

GroundTruth subset(const GroundTruth& truth, const std::vector<std::size_t>& indices) {
  GroundTruth out;
  for (const auto i : indices) {
    out.z.push_back(truth.z.at(i));
    out.phi.push_back(truth.phi.at(i));
    out.t_star.push_back(truth.t_star.at(i));
  }
  return out;
}

void write_truth_csv(const GroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "z_true,phi_true,t_star\n";
  for (std::size_t i = 0; i < truth.z.size(); ++i) {
    out << truth.z[i] << ',' << truth.phi[i] << ',' << format_double(truth.t_star[i]) << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

GroundTruth load_truth_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split_csv_line(line) != std::vector<std::string>{"z_true", "phi_true", "t_star"}) {
    throw SchemaError(path.string() + ": expected header z_true,phi_true,t_star");
  }
  GroundTruth truth;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw ValidationError(row, "", "expected 3 fields");
    try {
      std::size_t used = 0;
      const int z = std::stoi(f[0], &used);
      if (used != f[0].size() || z < 1) throw ValidationError(row, "z_true", "invalid cluster label");
      const int phi = std::stoi(f[1], &used);
      if (used != f[1].size() || (phi != 0 && phi != 1)) throw ValidationError(row, "phi_true", "must be 0 or 1");
      const double t = std::stod(f[2], &used);
      if (used != f[2].size() || !(t > 0.0) || !std::isfinite(t)) {
        throw ValidationError(row, "t_star", "must be a positive number");
      }
      truth.z.push_back(z);
      truth.phi.push_back(phi);
      truth.t_star.push_back(t);
    } catch (const std::logic_error&) {
      throw ValidationError(row, "", "unparseable number");
    }
  }
  return truth;
}

}  // namespace cmhe::synthetic
