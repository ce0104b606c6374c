#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cmhe/log.hpp"
#include "cmhe/model.hpp"

namespace cmhe {
namespace {

std::vector<std::vector<std::size_t>> make_minibatches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    // a 1-sample tail carries no partial likelihood; fold it into the previous batch
    if (end - start < 2 && !batches.empty()) {
      batches.back().insert(batches.back().end(), order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(end));
      break;
    }
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<double> penalties_of(const BaselineSurvival& baselines) {
  std::vector<double> p;
  for (const auto& b : baselines) p.push_back(b.penalty());
  return p;
}

}  // namespace

FitResult fit(const SurvivalDataset& dataset, const FitConfig& config) {
  config.validate();
  dataset.require_trainable("fit");

  CmheModel model;
  model.config = config;
  SurvivalDataset prepared;
  if (config.standardize) {
    auto [std_data, stats] = standardize(dataset);
    prepared = std::move(std_data);
    model.standardization = std::move(stats);
  } else {
    prepared = dataset;
    model.standardization = StandardizationStats::identity(dataset.feature_names());
  }

  const Split parts = split(prepared, 1.0 - config.validation_fraction, config.seed);
  const Batch train = make_batch(parts.train);
  const Batch validation = make_batch(parts.test);
  const double horizon = *std::max_element(train.time.begin(), train.time.end());

  NetworkShape shape;
  shape.input_dim = static_cast<int>(prepared.dim());
  shape.hidden = config.hidden;
  shape.k = config.k;
  shape.m = config.m;
  model.params = init_params(shape, config.seed);
  model.baselines.assign(static_cast<std::size_t>(config.k), SurvivalSpline{});

  Rng batch_rng = make_rng(config.seed, Stream::minibatch);
  Rng posterior_rng = make_rng(config.seed, Stream::hard_posterior);

  // initial baselines from hard draws of the gate priors
  std::vector<double> penalties(static_cast<std::size_t>(config.k), config.spline_penalty);
  {
    const Posteriors prior = prior_posteriors(model.params, train, posterior_rng);
    model.baselines = breslow_update(model, train, prior, penalties, horizon);
  }

  FitResult result;
  double best = full_loglik(model, validation);
  if (!std::isfinite(best)) throw Error("fit: non-finite validation likelihood at initialization");
  result.model = model;
  result.log.push_back({0, best, true});

  OptimizerState optimizer = make_optimizer_state(model.params, AdamOptions{config.learning_rate});
  int stale = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    try {
      for (const auto& idx : make_minibatches(train.size(), config.batch_size, batch_rng)) {
        const Batch batch = train.subset(idx);
        const Posteriors post = e_step(model, batch, posterior_rng);
        QHatGradient q = q_hat_gradient(model.params, batch, post);
        // descend on -Q-hat / |batch|
        CmheParams& grad = q.grad;
        const double scale = -1.0 / static_cast<double>(batch.size());
        for (auto& b : grad.blocks()) {
          for (double& v : b.values) v *= scale;
        }
        if (config.freeze_omega) grad.omega.setZero();
        adam_step(model.params, grad, optimizer);
      }
      const Posteriors post = e_step(model, train, posterior_rng);
      model.baselines = breslow_update(model, train, post, penalties, horizon);
      if (epoch == 1) penalties = penalties_of(model.baselines);
    } catch (const Error& e) {
      throw Error("fit: divergence in epoch " + std::to_string(epoch) + ": " + e.what());
    }

    double value = 0.0;
    try {
      value = full_loglik(model, validation);
    } catch (const Error& e) {
      throw Error("fit: divergence in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(value)) {
      throw Error("fit: non-finite validation likelihood in epoch " + std::to_string(epoch));
    }
    const bool improved = value > best;
    result.log.push_back({epoch, value, improved});
    log::debug("epoch " + std::to_string(epoch) + " validation loglik " + std::to_string(value));
    if (improved) {
      best = value;
      result.model = model;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace cmhe
