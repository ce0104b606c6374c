#include "cmhe/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>

#include "cmhe/data.hpp"
#include "cmhe/log.hpp"
#include "cmhe/metrics.hpp"
#include "cmhe/model.hpp"
#include "cmhe/phenotyping.hpp"
#include "cmhe/serialize.hpp"
#include "cmhe/synthetic.hpp"

namespace cmhe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

json data_defaults() { return json{{"time_col", "time"}, {"event_col", "event"}, {"treatment_col", "treatment"}}; }

CsvSchema schema_of(const json& cfg) {
  return {cfg.at("time_col").get<std::string>(), cfg.at("event_col").get<std::string>(),
          cfg.at("treatment_col").get<std::string>()};
}

}  // namespace

json default_config(const std::string& command) {
  if (command == "simulate") {
    return json{{"out_dir", ""}, {"split_fraction", 0.0}, {"split_seed", 0}, {"synthetic", to_json(synthetic::SyntheticConfig{})}};
  }
  if (command == "train") {
    json j = data_defaults();
    j.update(json{{"data", ""}, {"out_dir", ""}, {"fit", to_json(FitConfig{})}});
    return j;
  }
  if (command == "evaluate") {
    json j = data_defaults();
    j.update(json{{"model", ""},
                  {"data", ""},
                  {"out_dir", ""},
                  {"horizons", json::array()},
                  {"horizon_quantiles", {0.25, 0.5, 0.75}},
                  {"curve_points", 100},
                  {"bootstrap_resamples", 500},
                  {"seed", 0}});
    return j;
  }
  if (command == "phenotype") {
    json j = data_defaults();
    j.update(json{{"model", ""},
                  {"train", ""},
                  {"test", ""},
                  {"out_dir", ""},
                  {"target_fraction", 0.15},
                  {"horizon", 0.0},
                  {"horizon_quantile", 0.75},
                  {"grid_steps", 1000},
                  {"bootstrap_resamples", 500},
                  {"seed", 0},
                  {"oracle_manifest", ""},
                  {"train_truth", ""},
                  {"test_truth", ""}});
    return j;
  }
  if (command == "predict") {
    json j = data_defaults();
    j.update(json{{"model", ""}, {"data", ""}, {"out_dir", ""}, {"arm", 1}, {"times", json::array()}});
    return j;
  }
  throw Error("unknown command '" + command + "'");
}

void merge_config(json& base, const json& overlay, const std::string& context) {
  if (!overlay.is_object()) throw Error(context + ": expected a JSON object");
  for (const auto& item : overlay.items()) {
    if (!base.contains(item.key())) throw Error(context + ": unknown key '" + item.key() + "'");
    json& target = base[item.key()];
    if (target.is_object()) {
      merge_config(target, item.value(), context + "." + item.key());
    } else {
      target = item.value();
    }
  }
}

FileWriter text_writer(std::string content) {
  return [content = std::move(content)](const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed for " + path.string());
  };
}

void write_files_atomically(const std::vector<std::pair<fs::path, FileWriter>>& files) {
  std::vector<fs::path> temps;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& t : temps) fs::remove(t, ec);
  };
  try {
    for (const auto& [path, writer] : files) {
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      fs::path tmp = path;
      tmp += ".tmp";
      temps.push_back(tmp);
      writer(tmp);
    }
    for (std::size_t i = 0; i < files.size(); ++i) fs::rename(temps[i], files[i].first);
  } catch (...) {
    cleanup();
    throw;
  }
}

namespace {

std::string require_path(const json& cfg, const char* key) {
  const auto value = cfg.at(key).get<std::string>();
  if (value.empty()) throw Error(std::string("missing required setting '") + key + "'");
  return value;
}

json manifest(const std::string& command, const json& cfg, const std::vector<std::string>& outputs) {
  return json{{"format", "cmhe-manifest"},
              {"version", kManifestVersion},
              {"command", command},
              {"config", cfg},
              {"outputs", outputs}};
}

std::vector<std::string> names_of(const std::vector<std::pair<fs::path, FileWriter>>& files) {
  std::vector<std::string> out;
  for (const auto& f : files) out.push_back(f.first.filename().string());
  out.push_back("manifest.json");
  return out;
}

void finish(const std::string& command, const json& cfg, const fs::path& dir,
            std::vector<std::pair<fs::path, FileWriter>> files) {
  const auto outputs = names_of(files);
  files.emplace_back(dir / "manifest.json", text_writer(dump(manifest(command, cfg, outputs))));
  write_files_atomically(files);
}

std::string curve_csv(std::span<const double> grid, const Eigen::MatrixXd& curves) {
  std::string out = "time,value\n";
  for (std::size_t j = 0; j < grid.size(); ++j) {
    out += format_double(grid[j]) + "," + format_double(curves.col(static_cast<Eigen::Index>(j)).mean()) + "\n";
  }
  return out;
}

// ---- simulate ----

void cmd_simulate(const json& cfg) {
  const fs::path dir = require_path(cfg, "out_dir");
  const auto config = synthetic_config_from_json(cfg.at("synthetic"));
  const double fraction = cfg.at("split_fraction").get<double>();
  if (!(fraction == 0.0 || (fraction > 0.0 && fraction < 1.0))) {
    throw Error("split_fraction must be 0 (no split) or lie in (0, 1)");
  }
  const auto data = synthetic::generate(config);
  std::vector<std::pair<fs::path, FileWriter>> files;
  files.emplace_back(dir / "data.csv", [&](const fs::path& p) { write_csv(data.dataset, p); });
  files.emplace_back(dir / "truth.csv", [&](const fs::path& p) { synthetic::write_truth_csv(data.truth, p); });
  Split parts;
  synthetic::GroundTruth train_truth, test_truth;
  if (fraction > 0.0) {
    parts = split(data.dataset, fraction, cfg.at("split_seed").get<std::uint64_t>());
    train_truth = synthetic::subset(data.truth, parts.train_index);
    test_truth = synthetic::subset(data.truth, parts.test_index);
    files.emplace_back(dir / "train.csv", [&](const fs::path& p) { write_csv(parts.train, p); });
    files.emplace_back(dir / "test.csv", [&](const fs::path& p) { write_csv(parts.test, p); });
    files.emplace_back(dir / "train_truth.csv", [&](const fs::path& p) { synthetic::write_truth_csv(train_truth, p); });
    files.emplace_back(dir / "test_truth.csv", [&](const fs::path& p) { synthetic::write_truth_csv(test_truth, p); });
  }
  finish("simulate", cfg, dir, std::move(files));
}

// ---- train ----

void cmd_train(const json& cfg) {
  const fs::path dir = require_path(cfg, "out_dir");
  const auto config = fit_config_from_json(cfg.at("fit"));
  const auto data = load_csv(require_path(cfg, "data"), schema_of(cfg));
  const auto result = fit(data, config);
  std::string log_csv = "epoch,validation_loglik,checkpoint\n";
  for (const auto& rec : result.log) {
    log_csv += std::to_string(rec.epoch) + "," + format_double(rec.validation_loglik) + "," +
               (rec.checkpoint ? "1" : "0") + "\n";
  }
  std::vector<std::pair<fs::path, FileWriter>> files;
  files.emplace_back(dir / "model.json", text_writer(dump(to_json(result.model))));
  files.emplace_back(dir / "training_log.csv", text_writer(std::move(log_csv)));
  finish("train", cfg, dir, std::move(files));
}

// ---- evaluate ----

std::vector<double> resolve_horizons(const json& cfg, const SurvivalDataset& data) {
  auto horizons = cfg.at("horizons").get<std::vector<double>>();
  if (horizons.empty()) {
    const auto q = cfg.at("horizon_quantiles").get<std::vector<double>>();
    horizons = metrics::event_time_quantiles(data.times(), data.events(), q);
  }
  if (horizons.empty()) throw Error("at least one horizon is required");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0) || !std::isfinite(horizons[i])) throw Error("horizons must be positive");
    if (i > 0 && !(horizons[i] > horizons[i - 1])) throw Error("horizons must be strictly ascending");
  }
  return horizons;
}

void cmd_evaluate(const json& cfg) {
  const fs::path dir = require_path(cfg, "out_dir");
  const auto model = load_model(require_path(cfg, "model"));
  const auto data = load_csv(require_path(cfg, "data"), schema_of(cfg));
  data.require_trainable("evaluate");
  const auto horizons = resolve_horizons(cfg, data);
  const auto times = data.times();
  const double t_max = *std::max_element(times.begin(), times.end());
  if (horizons.back() > t_max) {
    log::warning("evaluate: horizon " + format_double(horizons.back()) +
                 " lies beyond the largest observed time; metrics use the available follow-up");
  }
  const Batch batch = make_batch(model, data);
  const auto predicted = predict_survival_factual(model, batch, horizons);
  auto report = metrics::evaluate(predicted, times, data.events(), horizons);

  const int points = cfg.at("curve_points").get<int>();
  if (points < 2) throw Error("curve_points must be >= 2");
  const auto grid = metrics::uniform_grid(horizons.back(), points - 1);
  const auto s1 = predict_survival(model, batch, 1, grid);
  const auto s0 = predict_survival(model, batch, 0, grid);
  metrics::BootstrapOptions boot{cfg.at("bootstrap_resamples").get<int>(), cfg.at("seed").get<std::uint64_t>()};
  const auto rmst_grid = metrics::uniform_grid(horizons.back(), 1000);
  report.effects.push_back({"ate_rmst", horizons.back(),
                            metrics::ate_rmst(predict_survival(model, batch, 1, rmst_grid),
                                              predict_survival(model, batch, 0, rmst_grid), rmst_grid, boot)});

  std::vector<std::pair<fs::path, FileWriter>> files;
  files.emplace_back(dir / "metrics.json", text_writer(dump(to_json(report))));
  files.emplace_back(dir / "curve_arm0.csv", text_writer(curve_csv(grid, s0)));
  files.emplace_back(dir / "curve_arm1.csv", text_writer(curve_csv(grid, s1)));
  finish("evaluate", cfg, dir, std::move(files));
}

// ---- phenotype ----

json group_json(const phenotyping::GroupEffect& g, std::size_t n) {
  return json{{"group", g.group},
              {"alpha", g.alpha},
              {"size", g.members.size()},
              {"size_fraction", static_cast<double>(g.members.size()) / static_cast<double>(n)},
              {"cate_rmst", g.cate.value},
              {"half_width", g.cate.half_width}};
}

void cmd_phenotype(const json& cfg) {
  const fs::path dir = require_path(cfg, "out_dir");
  const auto model = load_model(require_path(cfg, "model"));
  const auto schema = schema_of(cfg);
  const auto train = load_csv(require_path(cfg, "train"), schema);
  const auto test = load_csv(require_path(cfg, "test"), schema);
  train.require_trainable("phenotype");

  double horizon = cfg.at("horizon").get<double>();
  if (horizon <= 0.0) {
    horizon = metrics::event_time_quantiles(train.times(), train.events(),
                                            std::vector<double>{cfg.at("horizon_quantile").get<double>()})[0];
  }
  phenotyping::RankOptions options;
  options.target_fraction = cfg.at("target_fraction").get<double>();
  options.grid_steps = cfg.at("grid_steps").get<int>();
  options.bootstrap = {cfg.at("bootstrap_resamples").get<int>(), cfg.at("seed").get<std::uint64_t>()};

  const auto oracle_manifest = cfg.at("oracle_manifest").get<std::string>();
  std::unique_ptr<phenotyping::CounterfactualEstimator> train_est, test_est;
  if (!oracle_manifest.empty()) {
    std::ifstream in(oracle_manifest, std::ios::binary);
    if (!in) throw Error("cannot open " + oracle_manifest);
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw Error(oracle_manifest + ": " + e.what());
    }
    if (doc.value("command", "") != "simulate") throw Error("oracle_manifest must come from the simulate command");
    const auto sim = synthetic_config_from_json(doc.at("config").at("synthetic"));
    train_est = std::make_unique<phenotyping::OracleEstimator>(
        sim, train, synthetic::load_truth_csv(require_path(cfg, "train_truth")));
    test_est = std::make_unique<phenotyping::OracleEstimator>(
        sim, test, synthetic::load_truth_csv(require_path(cfg, "test_truth")));
  } else {
    train_est = std::make_unique<phenotyping::ModelEstimator>(model, train);
    test_est = std::make_unique<phenotyping::ModelEstimator>(model, test);
  }

  const auto ranking = phenotyping::rank_phenogroups(model, train, horizon, *train_est, options);
  const auto test_probs = phenotyping::phi_probabilities(model, test);
  const auto enhanced = phenotyping::evaluate_group(test_probs, ranking.enhanced().group, *test_est, horizon, options);
  const auto diminished =
      phenotyping::evaluate_group(test_probs, ranking.diminished().group, *test_est, horizon, options);
  const auto diff = phenotyping::rmst_differences(*test_est, horizon, options.grid_steps);
  std::vector<std::size_t> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto ate = metrics::cate_rmst(all, diff, options.bootstrap);

  json train_groups = json::array();
  for (const auto& g : ranking.groups) train_groups.push_back(group_json(g, train.size()));
  const json summary{{"horizon", horizon},
                     {"target_fraction", options.target_fraction},
                     {"self_evaluated", train_est->self_evaluated()},
                     {"train", {{"ate_rmst", ranking.ate.value}, {"ate_half_width", ranking.ate.half_width},
                                {"groups", train_groups}}},
                     {"test",
                      {{"ate_rmst", ate.value},
                       {"ate_half_width", ate.half_width},
                       {"enhanced", group_json(enhanced, test.size())},
                       {"diminished", group_json(diminished, test.size())}}}};

  std::vector<char> in_enh(test.size(), 0), in_dim(test.size(), 0);
  for (auto i : enhanced.members) in_enh[i] = 1;
  for (auto i : diminished.members) in_dim[i] = 1;
  std::string csv = "index";
  for (Eigen::Index m = 0; m < test_probs.cols(); ++m) csv += ",p_phi_" + std::to_string(m);
  csv += ",enhanced,diminished\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    csv += std::to_string(i);
    for (Eigen::Index m = 0; m < test_probs.cols(); ++m) {
      csv += "," + format_double(test_probs(static_cast<Eigen::Index>(i), m));
    }
    csv += std::string(",") + (in_enh[i] ? "1" : "0") + "," + (in_dim[i] ? "1" : "0") + "\n";
  }
  std::vector<std::pair<fs::path, FileWriter>> files;
  files.emplace_back(dir / "phenotypes.csv", text_writer(std::move(csv)));
  files.emplace_back(dir / "phenotype_summary.json", text_writer(dump(summary)));
  finish("phenotype", cfg, dir, std::move(files));
}

// ---- predict ----

void cmd_predict(const json& cfg) {
  const fs::path dir = require_path(cfg, "out_dir");
  const auto model = load_model(require_path(cfg, "model"));
  const auto data = load_csv(require_path(cfg, "data"), schema_of(cfg));
  const int arm = cfg.at("arm").get<int>();
  if (arm != 0 && arm != 1) throw Error("arm must be 0 or 1");
  const auto times = cfg.at("times").get<std::vector<double>>();
  if (times.empty()) throw Error("at least one prediction time is required");
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (!(times[j] >= 0.0) || !std::isfinite(times[j])) throw Error("prediction times must be finite and >= 0");
    if (j > 0 && times[j] < times[j - 1]) throw Error("prediction times must be ascending");
  }
  const auto s = predict_survival(model, make_batch(model, data), arm, times);
  std::string csv = "index";
  for (double t : times) csv += ",t=" + format_double(t);
  csv += "\n";
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    csv += std::to_string(i);
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (!(s(i, j) > 0.0 && s(i, j) <= 1.0)) throw Error("predict: survival value outside (0, 1]");
      csv += "," + format_double(s(i, j));
    }
    csv += "\n";
  }
  std::vector<std::pair<fs::path, FileWriter>> files;
  files.emplace_back(dir / "survival.csv", text_writer(std::move(csv)));
  finish("predict", cfg, dir, std::move(files));
}

// ---- argument plumbing ----

struct Override {
  CLI::Option* option;
  std::function<void(json&)> apply;
};

class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& help)
      : name_(name), app_(parent.add_subcommand(name, help)) {
    app_->add_option("--config", config_path_, "JSON config; flags override its values");
  }

  template <typename T>
  void option(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flag, *value, help);
    overrides_.push_back({opt, [value, pointer](json& j) { j[json::json_pointer(pointer)] = *value; }});
  }

  void flag(const std::string& flag, const std::string& pointer, bool value, const std::string& help) {
    auto* opt = app_->add_flag(flag, help);
    overrides_.push_back({opt, [value, pointer](json& j) { j[json::json_pointer(pointer)] = value; }});
  }

  void data_flags(const std::string& data_flag, const std::string& key) {
    option<std::string>(data_flag, "/" + key, "input CSV");
    option<std::string>("--time-col", "/time_col", "time column name");
    option<std::string>("--event-col", "/event_col", "event column name");
    option<std::string>("--treatment-col", "/treatment_col", "treatment column name");
  }

  bool parsed() const { return app_->parsed(); }
  const std::string& name() const { return name_; }

  json resolve() const {
    json cfg = default_config(name_);
    if (!config_path_.empty()) {
      std::ifstream in(config_path_, std::ios::binary);
      if (!in) throw Error("cannot open " + config_path_);
      json doc;
      try {
        in >> doc;
      } catch (const json::exception& e) {
        throw Error(config_path_ + ": " + e.what());
      }
      merge_config(cfg, doc, config_path_);
    }
    for (const auto& o : overrides_) {
      if (o.option->count() > 0) o.apply(cfg);
    }
    return cfg;
  }

 private:
  std::string name_;
  CLI::App* app_;
  std::string config_path_;
  std::vector<Override> overrides_;
};

void add_fit_flags(Command& c) {
  c.option<int>("--k", "/fit/k", "baseline clusters K");
  c.option<int>("--m", "/fit/m", "treatment-effect groups M");
  c.option<std::vector<int>>("--hidden", "/fit/hidden", "encoder layer widths (empty list for a linear model)");
  c.option<int>("--batch-size", "/fit/batch_size", "minibatch size");
  c.option<double>("--learning-rate", "/fit/learning_rate", "Adam step size");
  c.option<int>("--max-epochs", "/fit/max_epochs", "epoch limit");
  c.option<int>("--patience", "/fit/patience", "early-stopping patience in epochs");
  c.option<double>("--spline-penalty", "/fit/spline_penalty", "smoothing penalty (negative: GCV)");
  c.option<double>("--validation-fraction", "/fit/validation_fraction", "held-out share for early stopping");
  c.flag("--no-standardize", "/fit/standardize", false, "use features as given");
  c.flag("--freeze-omega", "/fit/freeze_omega", true, "hold treatment effects at zero");
  c.option<std::uint64_t>("--seed", "/fit/seed", "random seed");
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Cox mixtures with heterogeneous effects"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;

  auto& sim = *commands.emplace_back(std::make_unique<Command>(app, "simulate", "generate the synthetic benchmark"));
  sim.option<std::string>("--out-dir", "/out_dir", "output directory");
  sim.option<std::size_t>("--n", "/synthetic/n", "number of samples");
  sim.option<std::uint64_t>("--seed", "/synthetic/seed", "random seed");
  sim.option<double>("--effect-magnitude", "/synthetic/effect_magnitude", "treatment log-hazard shift");
  sim.option<double>("--p-event", "/synthetic/p_event", "probability a record is uncensored");
  sim.option<double>("--split-fraction", "/split_fraction", "also write train/test files with this train share");
  sim.option<std::uint64_t>("--split-seed", "/split_seed", "seed of the train/test split");

  auto& train = *commands.emplace_back(std::make_unique<Command>(app, "train", "fit a model"));
  train.data_flags("--data", "data");
  train.option<std::string>("--out-dir", "/out_dir", "output directory");
  add_fit_flags(train);

  auto& eval = *commands.emplace_back(std::make_unique<Command>(app, "evaluate", "score a model on a dataset"));
  eval.data_flags("--data", "data");
  eval.option<std::string>("--model", "/model", "model JSON");
  eval.option<std::string>("--out-dir", "/out_dir", "output directory");
  eval.option<std::vector<double>>("--horizons", "/horizons", "evaluation times (default: event-time quantiles)");
  eval.option<int>("--curve-points", "/curve_points", "points per exported survival curve");
  eval.option<int>("--bootstrap-resamples", "/bootstrap_resamples", "bootstrap resamples for effect intervals");
  eval.option<std::uint64_t>("--seed", "/seed", "bootstrap seed");

  auto& pheno = *commands.emplace_back(std::make_unique<Command>(app, "phenotype", "extract phenogroups"));
  pheno.data_flags("--train", "train");
  pheno.option<std::string>("--test", "/test", "held-out CSV");
  pheno.option<std::string>("--model", "/model", "model JSON");
  pheno.option<std::string>("--out-dir", "/out_dir", "output directory");
  pheno.option<double>("--target-fraction", "/target_fraction", "group size as a share of the split");
  pheno.option<double>("--horizon", "/horizon", "RMST horizon (default: event-time quantile of train)");
  pheno.option<int>("--grid-steps", "/grid_steps", "RMST integration intervals");
  pheno.option<int>("--bootstrap-resamples", "/bootstrap_resamples", "bootstrap resamples");
  pheno.option<std::uint64_t>("--seed", "/seed", "bootstrap seed");
  pheno.option<std::string>("--oracle-manifest", "/oracle_manifest", "simulate manifest for ground-truth curves");
  pheno.option<std::string>("--train-truth", "/train_truth", "ground truth of the train split");
  pheno.option<std::string>("--test-truth", "/test_truth", "ground truth of the test split");

  auto& pred = *commands.emplace_back(std::make_unique<Command>(app, "predict", "counterfactual survival curves"));
  pred.data_flags("--data", "data");
  pred.option<std::string>("--model", "/model", "model JSON");
  pred.option<std::string>("--out-dir", "/out_dir", "output directory");
  pred.option<int>("--arm", "/arm", "treatment arm to force (0 or 1)");
  pred.option<std::vector<double>>("--times", "/times", "ascending prediction times");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const auto& c : commands) {
      if (!c->parsed()) continue;
      const json cfg = c->resolve();
      if (c->name() == "simulate") cmd_simulate(cfg);
      if (c->name() == "train") cmd_train(cfg);
      if (c->name() == "evaluate") cmd_evaluate(cfg);
      if (c->name() == "phenotype") cmd_phenotype(cfg);
      if (c->name() == "predict") cmd_predict(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cmhe::cli
