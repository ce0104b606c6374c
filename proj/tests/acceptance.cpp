// Acceptance run: one PASS/FAIL line per criterion.
//
// Exit code is the number of failing criteria not named in --expected-fail, so
// ctest can track regressions while known shortfalls stay visible as FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "cmhe/metrics.hpp"
#include "cmhe/model.hpp"
#include "cmhe/phenotyping.hpp"
#include "cmhe/serialize.hpp"
#include "cmhe/synthetic.hpp"
#include "support.hpp"

using namespace cmhe;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

void note(Outcome& o, bool ok, const std::string& text) {
  o.pass = o.pass && ok;
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += text + (ok ? "" : " [fail]");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

// One synthetic seed: split, fitted model and timing, shared by several criteria.
struct SeedRun {
  std::uint64_t seed = 0;
  synthetic::SyntheticConfig sim;
  Split parts;
  synthetic::GroundTruth train_truth, test_truth;
  FitResult result;
  double seconds = 0.0;
};

SeedRun run_seed(std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  r.sim.n = 5000;
  r.sim.seed = seed;
  const auto data = synthetic::generate(r.sim);
  r.parts = split(data.dataset, 0.7, seed);
  r.train_truth = synthetic::subset(data.truth, r.parts.train_index);
  r.test_truth = synthetic::subset(data.truth, r.parts.test_index);
  FitConfig fc;
  fc.k = 3;
  fc.m = 2;
  fc.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  r.result = fit(r.parts.train, fc);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// The recovered phi = 1 group is the one whose treatment effect lowers the hazard most.
int benefit_group(const CmheModel& model) {
  Eigen::Index best = 0;
  model.params.omega.minCoeff(&best);
  return static_cast<int>(best);
}

std::vector<double> horizons_of(const SurvivalDataset& train) {
  return metrics::event_time_quantiles(train.times(), train.events(), std::vector<double>{0.25, 0.5, 0.75});
}

Outcome criterion_recovery(const std::vector<SeedRun>& runs) {
  Outcome o;
  for (const auto& r : runs) {
    const auto probs = phenotyping::phi_probabilities(r.result.model, r.parts.test);
    const double auc = metrics::roc_auc(column(probs, benefit_group(r.result.model)), r.test_truth.phi);
    note(o, auc >= 0.85, "seed " + std::to_string(r.seed) + " auc " + fmt("%.3f", auc));
    note(o, r.seconds <= 600.0, fmt("%.0fs", r.seconds));
  }
  return o;
}

Outcome criterion_factual(const SeedRun& r) {
  Outcome o;
  const auto horizons = horizons_of(r.parts.train);
  const auto& test = r.parts.test;
  const auto cmhe_report = metrics::evaluate(
      predict_survival_factual(r.result.model, make_batch(r.result.model, test), horizons), test.times(),
      test.events(), horizons);

  FitConfig linear;
  linear.k = 1;
  linear.m = 1;
  linear.hidden = {};
  linear.seed = r.seed;
  const auto cox = fit(r.parts.train, linear).model;
  const auto cox_report = metrics::evaluate(predict_survival_factual(cox, make_batch(cox, test), horizons),
                                            test.times(), test.events(), horizons);

  const double target_ctd[3] = {0.6676, 0.6758, 0.6786};
  for (int h = 0; h < 3; ++h) {
    const double c = cmhe_report.concordance[static_cast<std::size_t>(h)];
    note(o, std::abs(c - target_ctd[h]) <= 0.05, "ctd" + std::to_string(h + 1) + " " + fmt("%.4f", c) + " vs " +
                                                    fmt("%.4f", target_ctd[h]) + "+-0.05");
  }
  note(o, std::abs(cmhe_report.integrated_brier - 0.1604) <= 0.03,
       "ibs " + fmt("%.4f", cmhe_report.integrated_brier) + " vs 0.1604+-0.03");
  for (int h = 0; h < 3; ++h) {
    const auto u = static_cast<std::size_t>(h);
    note(o, cmhe_report.concordance[u] > cox_report.concordance[u],
         "floor h" + std::to_string(h + 1) + " " + fmt("%.4f", cmhe_report.concordance[u]) + " > linear " +
             fmt("%.4f", cox_report.concordance[u]));
  }
  return o;
}

Outcome criterion_degenerate_cox() {
  Outcome o;
  synthetic::SyntheticConfig sim;
  sim.n = 500;
  sim.seed = 11;
  const auto data = synthetic::generate(sim).dataset;
  FitConfig fc;
  fc.k = 1;
  fc.m = 1;
  fc.hidden = {};
  fc.seed = 11;
  const auto model = fit(data, fc).model;
  const Eigen::VectorXd eta = log_hazards(model, make_batch(model, data), 0);

  // plain Cox on the raw covariates plus treatment, which the mixture sees through omega
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), data.dim() + 1);
  x.leftCols(static_cast<Eigen::Index>(data.dim())) = data.features();
  for (std::size_t i = 0; i < data.size(); ++i) x(static_cast<Eigen::Index>(i), x.cols() - 1) = data[i].treatment;
  const Eigen::VectorXd beta = oracle::cox_newton(x, data.times(), data.events());
  // compare the covariate part only: log_hazards excludes the treatment term
  const Eigen::VectorXd ref = x.leftCols(x.cols() - 1) * beta.head(beta.size() - 1);
  const double rho = oracle::spearman(std::vector<double>(eta.data(), eta.data() + eta.size()),
                                      std::vector<double>(ref.data(), ref.data() + ref.size()));
  note(o, rho >= 0.99, "spearman " + fmt("%.4f", rho));
  return o;
}

Outcome criterion_gradient() {
  Outcome o;
  int failures = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 3, m = 1 + (trial / 3) % 3;
    auto model = fixtures::random_model(3, trial % 2 ? std::vector<int>{4} : std::vector<int>{}, k, m, 500 + trial);
    const auto batch = fixtures::random_batch(12, 3, 600 + trial);
    Rng rng = make_rng(static_cast<std::uint64_t>(trial), Stream::hard_posterior);
    const auto post = e_step(model, batch, rng);
    const auto g = q_hat_gradient(model.params, batch, post);
    auto gb = g.grad.blocks();
    auto pb = model.params.blocks();
    for (std::size_t b = 0; b < pb.size(); ++b) {
      for (std::size_t j = 0; j < pb[b].values.size(); ++j) {
        const double keep = pb[b].values[j];
        pb[b].values[j] = keep + 1e-5;
        const double plus = q_hat(model.params, batch, post);
        pb[b].values[j] = keep - 1e-5;
        const double minus = q_hat(model.params, batch, post);
        pb[b].values[j] = keep;
        const double fd = (plus - minus) / 2e-5;
        const double rel = std::abs(gb[b].values[j] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
        if (!(rel < 1e-4)) ++failures;
      }
    }
  }
  note(o, failures == 0, "20 instances, " + std::to_string(failures) + " mismatches, worst " + fmt("%.2e", worst));
  return o;
}

Outcome criterion_oracles() {
  Outcome o;
  // E-step and likelihood against enumeration, K = M = 2, n = 5
  double estep = 0.0, pred = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = fixtures::random_model(2, {3}, 2, 2, 700 + trial);
    const auto batch = fixtures::random_batch(5, 2, 800 + trial);
    Rng rng = make_rng(static_cast<std::uint64_t>(trial), Stream::hard_posterior);
    const auto post = e_step(model, batch, rng);
    const auto ref = oracle::enumerate(model, batch);
    estep = std::max({estep, (post.gamma - ref.gamma).cwiseAbs().maxCoeff(), (post.zeta - ref.zeta).cwiseAbs().maxCoeff()});
    const std::vector<double> grid{0.0, 0.5, 1.5, 2.9};
    for (int arm = 0; arm <= 1; ++arm) {
      const auto s = predict_survival(model, batch, arm, grid);
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
          const double r = oracle::predict(model, batch.x.row(i).transpose(), arm, grid[static_cast<std::size_t>(j)]);
          pred = std::max(pred, std::abs(s(i, j) - r));
        }
      }
    }
  }
  note(o, estep <= 1e-10, "e-step " + fmt("%.1e", estep));
  note(o, pred <= 1e-12, "prediction " + fmt("%.1e", pred));

  // Breslow: Nelson-Aalen hand values, then the reference estimator
  const std::vector<double> t{1.0, 2.0, 3.0}, zero{0.0, 0.0, 0.0};
  const std::vector<int> e{1, 1, 1};
  const std::vector<char> all3(3, 1);
  const auto na = breslow_estimate(t, e, zero, all3);
  note(o, na.cumulative == std::vector<double>{1.0 / 3.0, 1.0 / 3.0 + 0.5, 1.0 / 3.0 + 0.5 + 1.0}, "nelson-aalen");
  double bres = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = fixtures::random_batch(40, 1, 900 + trial);
    std::mt19937_64 rng(trial);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eta;
    for (int i = 0; i < 40; ++i) eta.push_back(normal(rng));
    const auto cum = breslow_estimate(batch.time, batch.event, eta, std::vector<char>(40, 1));
    for (double s = 0.0; s < 3.2; s += 0.1) bres = std::max(bres, std::abs(cum.at(s) - oracle::breslow(batch.time, batch.event, eta, s)));
  }
  note(o, bres <= 1e-8, "breslow " + fmt("%.1e", bres));

  // metrics against brute force
  double bs = 0.0, ctd = 0.0, auc = 0.0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> tt, pp;
    std::vector<int> dd, ll;
    for (int i = 0; i < 50; ++i) {
      tt.push_back(std::round(1.0 + 40.0 * u(rng)) / 10.0);
      dd.push_back(u(rng) < 0.7);
      pp.push_back(std::round(20.0 * u(rng)) / 20.0);
      ll.push_back(i % 2);
    }
    bs = std::max(bs, std::abs(metrics::brier_score(pp, tt, dd, 2.5) - oracle::brier(pp, tt, dd, 2.5)));
    ctd = std::max(ctd, std::abs(metrics::concordance_td(pp, tt, dd, 2.5) - oracle::concordance(pp, tt, dd, 2.5)));
    auc = std::max(auc, std::abs(metrics::roc_auc(pp, ll) - oracle::auc(pp, ll)));
  }
  note(o, bs <= 1e-10, "brier " + fmt("%.1e", bs));
  note(o, ctd <= 1e-10, "ctd " + fmt("%.1e", ctd));
  note(o, auc <= 1e-12, "auc " + fmt("%.1e", auc));
  const double r1 = std::abs(metrics::rmst([](double x) { return std::exp(-x); }, 1.0) - (1.0 - std::exp(-1.0)));
  note(o, r1 <= 1e-6, "rmst " + fmt("%.1e", r1));
  return o;
}

Outcome criterion_phenogroups(const std::vector<SeedRun>& runs) {
  Outcome o;
  for (const auto& r : runs) {
    const auto& model = r.result.model;
    const double horizon = metrics::event_time_quantiles(r.parts.train.times(), r.parts.train.events(),
                                                         std::vector<double>{0.75})[0];
    const phenotyping::OracleEstimator train_est(r.sim, r.parts.train, r.train_truth);
    const phenotyping::OracleEstimator test_est(r.sim, r.parts.test, r.test_truth);
    phenotyping::RankOptions opt;
    opt.target_fraction = 0.15;
    opt.bootstrap.seed = r.seed;
    const auto ranking = phenotyping::rank_phenogroups(model, r.parts.train, horizon, train_est, opt);
    const auto probs = phenotyping::phi_probabilities(model, r.parts.test);
    const auto enh = phenotyping::evaluate_group(probs, ranking.enhanced().group, test_est, horizon, opt);
    const auto dim = phenotyping::evaluate_group(probs, ranking.diminished().group, test_est, horizon, opt);
    const auto diff = phenotyping::rmst_differences(test_est, horizon, opt.grid_steps);
    double ate = 0.0;
    for (double v : diff) ate += v;
    ate /= static_cast<double>(diff.size());
    note(o, enh.cate.value > ate && dim.cate.value < ate,
         "seed " + std::to_string(r.seed) + " enhanced " + fmt("%.3f", enh.cate.value) + " ate " + fmt("%.3f", ate) +
             " diminished " + fmt("%.3f", dim.cate.value));
  }
  return o;
}

Outcome criterion_properties() {
  Outcome o;
  constexpr int cases = 100;
  int norm_fail = 0, surv_fail = 0, shift_fail = 0, det_fail = 0, memb_fail = 0;
  for (int c = 0; c < cases; ++c) {
    std::mt19937_64 rng(2000 + c);
    const int k = 1 + static_cast<int>(rng() % 3), m = 1 + static_cast<int>(rng() % 3);
    const auto model = fixtures::random_model(3, c % 2 ? std::vector<int>{4} : std::vector<int>{}, k, m, rng());
    const auto batch = fixtures::random_batch(10, 3, rng());

    Rng hr = make_rng(static_cast<std::uint64_t>(c), Stream::hard_posterior);
    const auto post = e_step(model, batch, hr);
    for (Eigen::Index i = 0; i < post.gamma.rows(); ++i) {
      if (std::abs(post.gamma.row(i).sum() - 1.0) > 1e-12 || std::abs(post.zeta.row(i).sum() - 1.0) > 1e-12) ++norm_fail;
    }

    std::vector<double> grid;
    for (int j = 0; j <= 30; ++j) grid.push_back(0.1 * j);
    for (int arm = 0; arm <= 1; ++arm) {
      const auto s = predict_survival(model, batch, arm, grid);
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        if (s(i, 0) != 1.0) ++surv_fail;
        for (Eigen::Index j = 1; j < s.cols(); ++j) {
          if (!(s(i, j) > 0.0 && s(i, j) <= s(i, j - 1))) ++surv_fail;
        }
      }
    }

    Eigen::MatrixXd logits = Eigen::MatrixXd::Random(3, 1 + c % 4) * 10.0;
    if ((softmax_rows(logits) - softmax_rows((logits.array() + 37.5).matrix())).cwiseAbs().maxCoeff() > 1e-12) {
      ++shift_fail;
    }

    synthetic::SyntheticConfig sim;
    sim.n = 40;
    sim.seed = static_cast<std::uint64_t>(c);
    const auto data = synthetic::generate(sim).dataset;
    FitConfig fc;
    fc.k = 2;
    fc.m = 2;
    fc.hidden = {3};
    fc.max_epochs = 2;
    fc.batch_size = 16;
    fc.seed = static_cast<std::uint64_t>(c);
    if (dump(to_json(fit(data, fc).model)) != dump(to_json(fit(data, fc).model))) ++det_fail;

    const auto probs = phenotyping::phi_probabilities(model, fixtures::to_dataset(batch));
    std::size_t prev = probs.rows() + 1;
    for (int s = 0; s <= 50; ++s) {
      const auto count = phenotyping::members(probs, 0, s / 50.0).size();
      if (count > prev) ++memb_fail;
      prev = count;
    }
  }
  note(o, norm_fail == 0, "posterior normalization " + std::to_string(norm_fail));
  note(o, surv_fail == 0, "survival bounds " + std::to_string(surv_fail));
  note(o, shift_fail == 0, "softmax shift " + std::to_string(shift_fail));
  note(o, det_fail == 0, "byte-identical refits " + std::to_string(det_fail));
  note(o, memb_fail == 0, "threshold membership " + std::to_string(memb_fail));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> expected_fail;
  app.add_option("--expected-fail", expected_fail, "criteria whose failure does not affect the exit code");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> tolerated(expected_fail.begin(), expected_fail.end());

  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {0, 1, 2}) runs.push_back(run_seed(seed));

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, [&] { return criterion_recovery(runs); }},
      {2, [&] { return criterion_factual(runs.front()); }},
      {3, criterion_degenerate_cox},
      {4, criterion_gradient},
      {5, criterion_oracles},
      {6, [&] { return criterion_phenogroups(runs); }},
      {7, criterion_properties},
  };
  int unexpected = 0;
  for (const auto& [id, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d %s: %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && !tolerated.count(id)) ++unexpected;
  }
  return unexpected;
}
