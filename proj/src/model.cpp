#include "cmhe/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cmhe/log.hpp"

namespace cmhe {

void FitConfig::validate() const {
  if (k < 1) throw Error("config: K must be >= 1");
  if (m < 1) throw Error("config: M must be >= 1");
  if (batch_size < 2) throw Error("config: batch_size must be >= 2");
  if (patience < 1) throw Error("config: patience must be >= 1");
  if (max_epochs < 1) throw Error("config: max_epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw Error("config: learning_rate must be > 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw Error("config: validation_fraction must lie in (0, 1)");
  }
  for (const int h : hidden) {
    if (h < 1) throw Error("config: hidden layer widths must be >= 1");
  }
}

void CmheModel::validate() const {
  const auto shape = params.shape();
  shape.validate();
  if (static_cast<int>(baselines.size()) != shape.k) throw Error("model: one baseline per cluster required");
  if (params.head_h.out_dim() != shape.k || params.omega.size() != shape.m) {
    throw Error("model: head shapes are inconsistent");
  }
  if (static_cast<int>(standardization.dim()) != shape.input_dim) {
    throw Error("model: standardization does not match the input dimension");
  }
  for (const auto& b : params.blocks()) {
    for (const double v : b.values) {
      if (!std::isfinite(v)) throw Error("model: non-finite parameter in " + b.name);
    }
  }
}

Batch Batch::subset(std::span<const std::size_t> indices) const {
  Batch out;
  out.x.resize(static_cast<Eigen::Index>(indices.size()), x.cols());
  out.time.reserve(indices.size());
  out.event.reserve(indices.size());
  out.treatment.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    out.x.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(i));
    out.time.push_back(time[i]);
    out.event.push_back(event[i]);
    out.treatment.push_back(treatment[i]);
  }
  return out;
}

Batch make_batch(const SurvivalDataset& dataset) {
  return Batch{dataset.features(), dataset.times(), dataset.events(), dataset.treatments()};
}

Batch make_batch(const CmheModel& model, const SurvivalDataset& dataset) {
  return make_batch(model.standardization.apply(dataset));
}

namespace {

void check_indices(const CmheModel& model, int k, int m) {
  if (k < 0 || k >= model.k()) throw Error("invalid cluster index " + std::to_string(k));
  if (m < 0 || m >= model.m()) throw Error("invalid treatment group index " + std::to_string(m));
}

ForwardOutput forward_one(const CmheParams& params, const Eigen::VectorXd& x) {
  return forward(params, x.transpose());
}

// ln P(t | k, m, x, a) given the log hazard ratio r = h_k(x) + a * omega_m.
double log_event_term(const SurvivalSpline& baseline, double t, int event, double r) {
  const double log_base = std::log(baseline.value(t));
  const double log_surv = std::exp(r) * log_base;
  if (event == 0) return log_surv;
  const double density = std::max(-baseline.derivative(t), kDensityFloor);
  return std::log(density) - log_base + r + log_surv;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

double conditional_survival(const CmheModel& model, const Eigen::VectorXd& x, int a, int k, int m,
                            double t) {
  check_indices(model, k, m);
  if (t < 0.0) throw Error("conditional_survival: t must be >= 0");
  const ForwardOutput out = forward_one(model.params, x);
  const double r = out.h_values(0, k) + a * model.params.omega(m);
  return std::pow(model.baselines[static_cast<std::size_t>(k)].value(t), std::exp(r));
}

double conditional_hazard_loglik(const CmheModel& model, const Eigen::VectorXd& x, double t, int event,
                                 int a, int k, int m) {
  check_indices(model, k, m);
  const ForwardOutput out = forward_one(model.params, x);
  const double r = out.h_values(0, k) + a * model.params.omega(m);
  return log_event_term(model.baselines[static_cast<std::size_t>(k)], t, event, r);
}

Eigen::MatrixXd joint_log_terms(const CmheModel& model, const Batch& batch) {
  const ForwardOutput out = forward(model.params, batch.x);
  const Eigen::MatrixXd log_pz = log_softmax_rows(out.f_logits);
  const Eigen::MatrixXd log_pphi = log_softmax_rows(out.g_logits);
  const int kk = model.k();
  const int mm = model.m();
  Eigen::MatrixXd joint(static_cast<Eigen::Index>(batch.size()), kk * mm);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (int k = 0; k < kk; ++k) {
      const auto& baseline = model.baselines[static_cast<std::size_t>(k)];
      for (int m = 0; m < mm; ++m) {
        const double r = out.h_values(row, k) + batch.treatment[i] * model.params.omega(m);
        joint(row, k * mm + m) =
            log_event_term(baseline, batch.time[i], batch.event[i], r) + log_pz(row, k) + log_pphi(row, m);
      }
    }
  }
  return joint;
}

Posteriors e_step(const CmheModel& model, const Batch& batch, Rng& rng) {
  if (batch.size() == 0) throw Error("e_step: empty batch");
  const Eigen::MatrixXd joint = joint_log_terms(model, batch);
  const int kk = model.k();
  const int mm = model.m();
  Posteriors post;
  const auto n = static_cast<Eigen::Index>(batch.size());
  post.gamma = Eigen::MatrixXd::Zero(n, kk);
  post.zeta = Eigen::MatrixXd::Zero(n, mm);
  post.psi.resize(batch.size());
  post.xi.resize(batch.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = joint.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      throw Error("e_step: all joint terms are -inf or non-finite for sample " + std::to_string(i));
    }
    const Eigen::RowVectorXd w = (joint.row(i).array() - mx).exp();
    const double total = w.sum();
    for (int k = 0; k < kk; ++k) {
      for (int m = 0; m < mm; ++m) {
        const double p = w(k * mm + m) / total;
        post.gamma(i, k) += p;
        post.zeta(i, m) += p;
      }
    }
    post.psi[static_cast<std::size_t>(i)] = sample_categorical(post.gamma.row(i), rng);
    post.xi[static_cast<std::size_t>(i)] = sample_categorical(post.zeta.row(i), rng);
  }
  return post;
}

Posteriors prior_posteriors(const CmheParams& params, const Batch& batch, Rng& rng) {
  const ForwardOutput out = forward(params, batch.x);
  Posteriors post;
  post.gamma = softmax_rows(out.f_logits);
  post.zeta = softmax_rows(out.g_logits);
  post.psi.resize(batch.size());
  post.xi.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    post.psi[i] = sample_categorical(post.gamma.row(row), rng);
    post.xi[i] = sample_categorical(post.zeta.row(row), rng);
  }
  return post;
}

namespace {

// Members grouped by distinct time, ascending; each group lists row indices.
struct RiskGroups {
  std::vector<double> times;
  std::vector<std::vector<std::size_t>> rows;
  std::vector<int> events;  // events per group
};

RiskGroups group_by_time(std::span<const double> time, std::span<const int> event,
                         std::span<const char> member) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (member[i]) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
  RiskGroups g;
  for (const auto i : idx) {
    if (g.times.empty() || time[i] != g.times.back()) {
      g.times.push_back(time[i]);
      g.rows.emplace_back();
      g.events.push_back(0);
    }
    g.rows.back().push_back(i);
    g.events.back() += event[i];
  }
  return g;
}

void check_lengths(std::size_t n, std::span<const int> event, std::span<const double> eta,
                   std::span<const char> member) {
  if (event.size() != n || eta.size() != n || member.size() != n) {
    throw Error("cox: time, event, eta and member must be equally sized");
  }
}

}  // namespace

double cox_partial_loglik(std::span<const double> time, std::span<const int> event,
                          std::span<const double> eta, std::span<const char> member,
                          std::vector<double>* grad) {
  check_lengths(time.size(), event, eta, member);
  if (grad) grad->assign(time.size(), 0.0);
  const RiskGroups groups = group_by_time(time, event, member);
  if (groups.times.empty()) return 0.0;

  double shift = -std::numeric_limits<double>::infinity();
  for (const auto& rows : groups.rows) {
    for (const auto i : rows) shift = std::max(shift, eta[i]);
  }
  // risk-set sums S_g = sum_{t_j >= t_g} exp(eta_j - shift), from the right
  const std::size_t ng = groups.times.size();
  std::vector<double> risk(ng);
  double running = 0.0;
  for (std::size_t g = ng; g-- > 0;) {
    for (const auto i : groups.rows[g]) running += std::exp(eta[i] - shift);
    risk[g] = running;
  }

  double ll = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    if (groups.events[g] == 0) continue;
    const double log_risk = shift + std::log(risk[g]);
    for (const auto i : groups.rows[g]) {
      if (event[i]) ll += eta[i] - log_risk;
    }
  }
  if (grad) {
    double cum = 0.0;
    for (std::size_t g = 0; g < ng; ++g) {
      cum += groups.events[g] / risk[g];
      for (const auto i : groups.rows[g]) (*grad)[i] = event[i] - std::exp(eta[i] - shift) * cum;
    }
  }
  return ll;
}

namespace {

std::vector<double> cluster_eta(const Eigen::MatrixXd& h_values, const Eigen::VectorXd& omega,
                                const Batch& batch, const Posteriors& post, int k) {
  std::vector<double> eta(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    eta[i] = h_values(static_cast<Eigen::Index>(i), k) + batch.treatment[i] * omega(post.xi[i]);
  }
  return eta;
}

std::vector<char> cluster_members(const Posteriors& post, int k) {
  std::vector<char> member(post.psi.size());
  for (std::size_t i = 0; i < post.psi.size(); ++i) member[i] = post.psi[i] == k ? 1 : 0;
  return member;
}

void check_posteriors(const CmheParams& params, const Batch& batch, const Posteriors& post) {
  if (post.size() != batch.size() || post.xi.size() != batch.size() ||
      post.gamma.rows() != static_cast<Eigen::Index>(batch.size()) ||
      post.zeta.rows() != static_cast<Eigen::Index>(batch.size()) ||
      post.gamma.cols() != params.head_f.out_dim() || post.zeta.cols() != params.head_g.out_dim()) {
    throw Error("posteriors do not match the batch or model shape");
  }
}

}  // namespace

double partial_loglik_k(const CmheParams& params, const Batch& batch, const Posteriors& post, int k) {
  check_posteriors(params, batch, post);
  if (k < 0 || k >= params.head_h.out_dim()) throw Error("invalid cluster index " + std::to_string(k));
  const ForwardOutput out = forward(params, batch.x);
  const auto eta = cluster_eta(out.h_values, params.omega, batch, post, k);
  const auto member = cluster_members(post, k);
  return cox_partial_loglik(batch.time, batch.event, eta, member);
}

QHatGradient q_hat_gradient(const CmheParams& params, const Batch& batch, const Posteriors& post) {
  check_posteriors(params, batch, post);
  const ForwardOutput out = forward(params, batch.x);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto kk = params.head_f.out_dim();

  UpstreamGradients up;
  up.h_values = Eigen::MatrixXd::Zero(n, kk);
  Eigen::VectorXd d_omega = Eigen::VectorXd::Zero(params.omega.size());
  double value = 0.0;
  std::vector<double> grad;
  for (int k = 0; k < kk; ++k) {
    const auto eta = cluster_eta(out.h_values, params.omega, batch, post, k);
    const auto member = cluster_members(post, k);
    value += cox_partial_loglik(batch.time, batch.event, eta, member, &grad);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(i);
      if (!member[s]) continue;
      up.h_values(i, k) += grad[s];
      if (batch.treatment[s]) d_omega(post.xi[s]) += grad[s];
    }
  }

  const Eigen::MatrixXd log_pz = log_softmax_rows(out.f_logits);
  const Eigen::MatrixXd log_pphi = log_softmax_rows(out.g_logits);
  value += (post.gamma.array() * log_pz.array()).sum();
  value += (post.zeta.array() * log_pphi.array()).sum();
  // d/dlogits sum_k w_k log softmax_k = w - softmax * sum_k w_k
  up.f_logits = post.gamma - (log_pz.array().exp().colwise() * post.gamma.rowwise().sum().array()).matrix();
  up.g_logits = post.zeta - (log_pphi.array().exp().colwise() * post.zeta.rowwise().sum().array()).matrix();

  QHatGradient result{value, backward(params, batch.x, up)};
  result.grad.omega = d_omega;
  return result;
}

double q_hat(const CmheParams& params, const Batch& batch, const Posteriors& post) {
  check_posteriors(params, batch, post);
  double value = 0.0;
  for (int k = 0; k < params.head_h.out_dim(); ++k) value += partial_loglik_k(params, batch, post, k);
  const ForwardOutput out = forward(params, batch.x);
  value += (post.gamma.array() * log_softmax_rows(out.f_logits).array()).sum();
  value += (post.zeta.array() * log_softmax_rows(out.g_logits).array()).sum();
  return value;
}

double CumulativeHazard::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - times.begin()) - 1];
}

CumulativeHazard breslow_estimate(std::span<const double> time, std::span<const int> event,
                                  std::span<const double> eta, std::span<const char> member) {
  check_lengths(time.size(), event, eta, member);
  const RiskGroups groups = group_by_time(time, event, member);
  CumulativeHazard out;
  if (groups.times.empty()) return out;
  double shift = -std::numeric_limits<double>::infinity();
  for (const auto& rows : groups.rows) {
    for (const auto i : rows) shift = std::max(shift, eta[i]);
  }
  const std::size_t ng = groups.times.size();
  std::vector<double> risk(ng);
  double running = 0.0;
  for (std::size_t g = ng; g-- > 0;) {
    for (const auto i : groups.rows[g]) running += std::exp(eta[i] - shift);
    risk[g] = running;
  }
  double cum = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    if (groups.events[g] == 0) continue;
    cum += groups.events[g] * std::exp(-shift) / risk[g];
    out.times.push_back(groups.times[g]);
    out.cumulative.push_back(cum);
  }
  return out;
}

std::vector<CumulativeHazard> breslow_cumulative_hazards(const CmheParams& params, const Batch& batch,
                                                         const Posteriors& post) {
  check_posteriors(params, batch, post);
  const ForwardOutput out = forward(params, batch.x);
  std::vector<CumulativeHazard> result;
  for (int k = 0; k < params.head_h.out_dim(); ++k) {
    const auto eta = cluster_eta(out.h_values, params.omega, batch, post, k);
    const auto member = cluster_members(post, k);
    result.push_back(breslow_estimate(batch.time, batch.event, eta, member));
  }
  return result;
}

BaselineSurvival breslow_update(const CmheModel& model, const Batch& batch, const Posteriors& post,
                                std::span<const double> penalties, double horizon) {
  const auto hazards = breslow_cumulative_hazards(model.params, batch, post);
  if (penalties.size() != hazards.size()) throw Error("breslow_update: one penalty per cluster required");
  BaselineSurvival out;
  for (std::size_t k = 0; k < hazards.size(); ++k) {
    if (hazards[k].empty()) {
      log::warning("breslow_update: cluster " + std::to_string(k) +
                   " has no hard-assigned events; keeping the previous baseline");
      out.push_back(k < model.baselines.size() ? model.baselines[k] : SurvivalSpline{});
      continue;
    }
    // S-hat at the midpoint of each jump; the flat runs between events carry
    // no shape information and pull a GCV-tuned spline towards a staircase
    const auto& cum = hazards[k];
    std::vector<double> t, s, w;
    double previous = 0.0;
    for (std::size_t j = 0; j < cum.times.size(); ++j) {
      t.push_back(cum.times[j]);
      s.push_back(std::exp(-0.5 * (previous + cum.cumulative[j])));
      w.push_back(1.0);
      previous = cum.cumulative[j];
    }
    out.push_back(smooth_survival(t, s, w, std::max(horizon, t.back()), penalties[k]));
  }
  return out;
}

std::vector<double> predict_survival(const CmheModel& model, const Eigen::VectorXd& x, int arm,
                                     std::span<const double> times) {
  Batch one;
  one.x = x.transpose();
  one.time.assign(1, 1.0);
  one.event.assign(1, 0);
  one.treatment.assign(1, arm);
  const Eigen::MatrixXd out = predict_survival(model, one, arm, times);
  return {out.data(), out.data() + out.size()};
}

namespace {

Eigen::MatrixXd predict_impl(const CmheModel& model, const Batch& batch, std::span<const int> arms,
                             std::span<const double> times) {
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (times[j] < 0.0 || (j > 0 && times[j] < times[j - 1])) {
      throw Error("predict_survival: times must be ascending and >= 0");
    }
  }
  const ForwardOutput out = forward(model.params, batch.x);
  const Eigen::MatrixXd pz = softmax_rows(out.f_logits);
  const Eigen::MatrixXd pphi = softmax_rows(out.g_logits);
  const int kk = model.k();
  const int mm = model.m();
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto nt = static_cast<Eigen::Index>(times.size());

  std::vector<std::vector<double>> log_base(static_cast<std::size_t>(kk), std::vector<double>(times.size()));
  for (int k = 0; k < kk; ++k) {
    for (std::size_t j = 0; j < times.size(); ++j) {
      log_base[static_cast<std::size_t>(k)][j] = std::log(model.baselines[static_cast<std::size_t>(k)].value(times[j]));
    }
  }
  Eigen::MatrixXd result = Eigen::MatrixXd::Zero(n, nt);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = arms[static_cast<std::size_t>(i)];
    double total = 0.0;
    for (int k = 0; k < kk; ++k) {
      for (int m = 0; m < mm; ++m) {
        const double w = pz(i, k) * pphi(i, m);
        total += w;
        const double mult = std::exp(out.h_values(i, k) + a * model.params.omega(m));
        for (Eigen::Index j = 0; j < nt; ++j) {
          result(i, j) += w * std::exp(mult * log_base[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);
        }
      }
    }
    // weights sum to 1 only up to rounding; this makes S(0) = 1 exactly
    result.row(i) /= total;
  }
  // extreme hazards underflow
  return result.cwiseMin(1.0).cwiseMax(std::numeric_limits<double>::min());
}

}  // namespace

Eigen::MatrixXd predict_survival(const CmheModel& model, const Batch& batch, int arm,
                                 std::span<const double> times) {
  if (arm != 0 && arm != 1) throw Error("predict_survival: arm must be 0 or 1");
  const std::vector<int> arms(batch.size(), arm);
  return predict_impl(model, batch, arms, times);
}

Eigen::MatrixXd predict_survival_factual(const CmheModel& model, const Batch& batch,
                                         std::span<const double> times) {
  return predict_impl(model, batch, batch.treatment, times);
}

Eigen::MatrixXd phi_gate(const CmheModel& model, const Batch& batch) {
  return softmax_rows(forward(model.params, batch.x).g_logits);
}

Eigen::VectorXd log_hazards(const CmheModel& model, const Batch& batch, int k) {
  return forward(model.params, batch.x).h_values.col(k);
}

std::vector<double> full_loglik_terms(const CmheModel& model, const Batch& batch) {
  const Eigen::MatrixXd joint = joint_log_terms(model, batch);
  std::vector<double> terms(batch.size());
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    const double v = log_sum_exp(joint.row(i));
    if (!std::isfinite(v)) throw Error("full_loglik: non-finite likelihood for sample " + std::to_string(i));
    terms[static_cast<std::size_t>(i)] = v;
  }
  return terms;
}

double full_loglik(const CmheModel& model, const Batch& batch) {
  const auto terms = full_loglik_terms(model, batch);
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

}  // namespace cmhe
