#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written the slow, obvious way and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cmhe/model.hpp"

namespace oracle {

// Breslow-ties Cox log partial likelihood, O(n^2).
inline double cox_loglik(std::span<const double> time, std::span<const int> event, std::span<const double> eta) {
  double ll = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!event[i]) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < time.size(); ++j) {
      if (time[j] >= time[i]) denom += std::exp(eta[j]);
    }
    ll += eta[i] - std::log(denom);
  }
  return ll;
}

// Plain Cox regression by Newton-Raphson on the Breslow partial likelihood.
inline Eigen::VectorXd cox_newton(const Eigen::MatrixXd& x, std::span<const double> time, std::span<const int> event,
                                  int iterations = 50) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
    const Eigen::VectorXd w = (x * beta).array().exp();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!event[static_cast<std::size_t>(i)]) continue;
      double s0 = 0.0;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
      Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (time[static_cast<std::size_t>(j)] < time[static_cast<std::size_t>(i)]) continue;
        s0 += w(j);
        s1 += w(j) * x.row(j).transpose();
        s2 += w(j) * x.row(j).transpose() * x.row(j);
      }
      const Eigen::VectorXd mean = s1 / s0;
      grad += x.row(i).transpose() - mean;
      info += s2 / s0 - mean * mean.transpose();
    }
    const Eigen::VectorXd step = info.ldlt().solve(grad);
    beta += step;
    if (step.norm() < 1e-12) break;
  }
  return beta;
}

// Breslow cumulative hazard at t: sum over events t_i <= t of 1 / sum_{t_j >= t_i} exp(eta_j).
inline double breslow(std::span<const double> time, std::span<const int> event, std::span<const double> eta,
                      double t) {
  double cum = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!event[i] || time[i] > t) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < time.size(); ++j) {
      if (time[j] >= time[i]) denom += std::exp(eta[j]);
    }
    cum += 1.0 / denom;
  }
  return cum;
}

// Product-limit estimate evaluated at t (right-continuous) or just before t.
inline double km(std::span<const double> time, std::span<const int> event, double t, bool left_limit) {
  std::vector<double> distinct;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i]) distinct.push_back(time[i]);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  double s = 1.0;
  for (double u : distinct) {
    if (left_limit ? u >= t : u > t) break;
    double at_risk = 0.0, deaths = 0.0;
    for (std::size_t i = 0; i < time.size(); ++i) {
      if (time[i] >= u) at_risk += 1.0;
      if (time[i] == u && event[i]) deaths += 1.0;
    }
    s *= 1.0 - deaths / at_risk;
  }
  return s;
}

inline std::vector<int> flip(std::span<const int> event) {
  std::vector<int> out(event.size());
  for (std::size_t i = 0; i < event.size(); ++i) out[i] = event[i] ? 0 : 1;
  return out;
}

// IPCW Brier score with censoring weights G(min(T_i, t)-) and a 1e-6 floor.
inline double brier(std::span<const double> pred, std::span<const double> time, std::span<const int> event, double t) {
  const auto cens = flip(event);
  double total = 0.0;
  double used = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (time[i] <= t && !event[i]) {
      used += 1.0;
      continue;
    }
    const double g = km(time, cens, std::min(time[i], t), true);
    if (g < 1e-6) continue;
    const double y = time[i] <= t ? 0.0 : 1.0;
    total += (y - pred[i]) * (y - pred[i]) / g;
    used += 1.0;
  }
  return total / used;
}

// Pairwise time-dependent concordance, O(n^2).
inline double concordance(std::span<const double> pred, std::span<const double> time, std::span<const int> event,
                          double t) {
  const auto cens = flip(event);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!event[i] || time[i] > t) continue;
    const double g = km(time, cens, time[i], true);
    if (g < 1e-6) continue;
    const double w = 1.0 / (g * g);
    for (std::size_t j = 0; j < time.size(); ++j) {
      if (!(time[j] > time[i])) continue;
      den += w;
      const double ri = 1.0 - pred[i], rj = 1.0 - pred[j];
      if (ri > rj) num += w;
      if (ri == rj) num += 0.5 * w;
    }
  }
  return num / den;
}

// Fraction of (positive, negative) pairs ranked correctly, ties 1/2.
inline double auc(std::span<const double> score, std::span<const int> label) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (label[i] != 1) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (label[j] == 1) continue;
      den += 1.0;
      num += score[i] > score[j] ? 1.0 : score[i] == score[j] ? 0.5 : 0.0;
    }
  }
  return num / den;
}

// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
      for (std::size_t q = i; q < j; ++q) r[idx[q]] = 0.5 * static_cast<double>(i + j - 1);
      i = j;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// ---- model-level oracles (explicit loops over every (k, m) pair) ----

inline double softmax_entry(const Eigen::VectorXd& logits, Eigen::Index i) {
  double denom = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) denom += std::exp(logits(j));
  return std::exp(logits(i)) / denom;
}

struct Heads {
  Eigen::VectorXd f, g, h;
};

// Forward pass for one sample, written out directly.
inline Heads heads(const cmhe::CmheParams& p, const Eigen::VectorXd& x) {
  Eigen::VectorXd a = x;
  for (const auto& layer : p.encoder) {
    Eigen::VectorXd z = layer.weight * a + layer.bias;
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = std::tanh(z(i));
    a = z;
  }
  return {p.head_f.weight * a + p.head_f.bias, p.head_g.weight * a + p.head_g.bias, p.head_h.weight * a};
}

// P(t | k, m, x, a): density for events, survival for censored records.
inline double outcome_likelihood(const cmhe::CmheModel& model, const Heads& hd, double t, int event, int a, int k,
                                 int m) {
  const auto& base = model.baselines[static_cast<std::size_t>(k)];
  const double mult = std::exp(hd.h(k)) * std::pow(std::exp(model.params.omega(m)), a);
  const double s0 = base.value(t);
  const double s = std::pow(s0, mult);
  if (!event) return s;
  const double dens = std::max(-base.derivative(t), cmhe::kDensityFloor);
  return dens / s0 * mult * s;
}

struct Enumerated {
  Eigen::MatrixXd gamma, zeta;
  std::vector<double> loglik;
};

// Posteriors and marginal log-likelihood by summing the K*M joint terms.
inline Enumerated enumerate(const cmhe::CmheModel& model, const cmhe::Batch& batch) {
  const int kk = model.k(), mm = model.m();
  const auto n = static_cast<Eigen::Index>(batch.size());
  Enumerated out{Eigen::MatrixXd::Zero(n, kk), Eigen::MatrixXd::Zero(n, mm), {}};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Heads hd = heads(model.params, batch.x.row(i).transpose());
    const auto u = static_cast<std::size_t>(i);
    double total = 0.0;
    Eigen::MatrixXd joint(kk, mm);
    for (int k = 0; k < kk; ++k) {
      for (int m = 0; m < mm; ++m) {
        joint(k, m) = softmax_entry(hd.f, k) * softmax_entry(hd.g, m) *
                      outcome_likelihood(model, hd, batch.time[u], batch.event[u], batch.treatment[u], k, m);
        total += joint(k, m);
      }
    }
    out.loglik.push_back(std::log(total));
    for (int k = 0; k < kk; ++k) out.gamma(i, k) = joint.row(k).sum() / total;
    for (int m = 0; m < mm; ++m) out.zeta(i, m) = joint.col(m).sum() / total;
  }
  return out;
}

// Counterfactual survival as an explicit double sum.
inline double predict(const cmhe::CmheModel& model, const Eigen::VectorXd& x, int arm, double t) {
  const Heads hd = heads(model.params, x);
  double s = 0.0;
  for (int k = 0; k < model.k(); ++k) {
    for (int m = 0; m < model.m(); ++m) {
      const double mult = std::exp(hd.h(k)) * std::pow(std::exp(model.params.omega(m)), arm);
      s += softmax_entry(hd.f, k) * softmax_entry(hd.g, m) *
           std::pow(model.baselines[static_cast<std::size_t>(k)].value(t), mult);
    }
  }
  return s;
}

}  // namespace oracle

namespace fixtures {

// Monotone baseline through random decreasing points on [0, horizon].
inline cmhe::SurvivalSpline random_baseline(std::mt19937_64& rng, double horizon, int points = 6) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> knots{0.0}, values{1.0};
  for (int i = 1; i < points; ++i) {
    knots.push_back(horizon * static_cast<double>(i) / (points - 1));
    values.push_back(values.back() * (0.55 + 0.4 * u(rng)));
  }
  return cmhe::SurvivalSpline::monotone_interpolant(knots, values);
}

// Random parameters (non-zero biases and omega) and baselines.
inline cmhe::CmheModel random_model(int d, std::vector<int> hidden, int k, int m, std::uint64_t seed,
                                    double horizon = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.7);
  cmhe::CmheModel model;
  cmhe::NetworkShape shape{d, std::move(hidden), k, m};
  model.params = cmhe::init_params(shape, seed);
  for (auto& b : model.params.blocks()) {
    for (double& v : b.values) v += 0.3 * normal(rng);
  }
  for (int i = 0; i < k; ++i) model.baselines.push_back(random_baseline(rng, horizon));
  std::vector<std::string> names;
  for (int j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  model.standardization = cmhe::StandardizationStats::identity(names);
  model.config.k = k;
  model.config.m = m;
  model.config.hidden = shape.hidden;
  return model;
}

inline cmhe::Batch random_batch(int n, int d, std::uint64_t seed, double horizon = 3.0, double p_event = 0.7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cmhe::Batch b;
  b.x = Eigen::MatrixXd(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) b.x(i, j) = normal(rng);
    b.time.push_back(0.05 + (horizon - 0.1) * u(rng));
    b.event.push_back(u(rng) < p_event ? 1 : 0);
    b.treatment.push_back(u(rng) < 0.5 ? 1 : 0);
  }
  return b;
}

inline cmhe::SurvivalDataset to_dataset(const cmhe::Batch& b) {
  std::vector<cmhe::SurvivalRecord> records;
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < b.x.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  for (std::size_t i = 0; i < b.size(); ++i) {
    cmhe::SurvivalRecord r;
    for (Eigen::Index j = 0; j < b.x.cols(); ++j) r.x.push_back(b.x(static_cast<Eigen::Index>(i), j));
    r.time = b.time[i];
    r.event = b.event[i];
    r.treatment = b.treatment[i];
    records.push_back(std::move(r));
  }
  return {std::move(records), std::move(names)};
}

}  // namespace fixtures
