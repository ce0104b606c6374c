#include "cmhe/serialize.hpp"

#include <fstream>
#include <sstream>

namespace cmhe {

using nlohmann::json;

void reject_unknown_keys(const json& doc, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!doc.is_object()) throw Error(context + ": expected a JSON object");
  for (const auto& item : doc.items()) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || item.key() == key;
    if (!ok) throw Error(context + ": unknown key '" + item.key() + "'");
  }
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

namespace {

json linear_to_json(const Linear& layer) {
  json j;
  j["rows"] = layer.weight.rows();
  j["cols"] = layer.weight.cols();
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(layer.weight.size()));
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.push_back(layer.weight(r, c));
  }
  j["weight"] = w;
  j["bias"] = std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size());
  return j;
}

Linear linear_from_json(const json& j) {
  reject_unknown_keys(j, {"rows", "cols", "weight", "bias"}, "model layer");
  Linear layer;
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto w = j.at("weight").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(w.size()) != rows * cols) {
    throw Error("model layer: weight array does not match its shape");
  }
  layer.weight.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
  }
  const auto b = j.at("bias").get<std::vector<double>>();
  if (!b.empty() && static_cast<Eigen::Index>(b.size()) != rows) throw Error("model layer: bias size mismatch");
  layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  return layer;
}

}  // namespace

json to_json(const FitConfig& c) {
  return json{{"k", c.k},
              {"m", c.m},
              {"hidden", c.hidden},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"spline_penalty", c.spline_penalty},
              {"validation_fraction", c.validation_fraction},
              {"standardize", c.standardize},
              {"freeze_omega", c.freeze_omega},
              {"seed", c.seed}};
}

FitConfig fit_config_from_json(const json& doc, FitConfig c) {
  reject_unknown_keys(doc,
                      {"k", "m", "hidden", "batch_size", "learning_rate", "max_epochs", "patience",
                       "spline_penalty", "validation_fraction", "standardize", "freeze_omega", "seed"},
                      "fit config");
  try {
    if (doc.contains("k")) c.k = doc["k"].get<int>();
    if (doc.contains("m")) c.m = doc["m"].get<int>();
    if (doc.contains("hidden")) c.hidden = doc["hidden"].get<std::vector<int>>();
    if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<int>();
    if (doc.contains("learning_rate")) c.learning_rate = doc["learning_rate"].get<double>();
    if (doc.contains("max_epochs")) c.max_epochs = doc["max_epochs"].get<int>();
    if (doc.contains("patience")) c.patience = doc["patience"].get<int>();
    if (doc.contains("spline_penalty")) c.spline_penalty = doc["spline_penalty"].get<double>();
    if (doc.contains("validation_fraction")) c.validation_fraction = doc["validation_fraction"].get<double>();
    if (doc.contains("standardize")) c.standardize = doc["standardize"].get<bool>();
    if (doc.contains("freeze_omega")) c.freeze_omega = doc["freeze_omega"].get<bool>();
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("fit config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const synthetic::SyntheticConfig& c) {
  json centers = json::array();
  for (const auto& ctr : c.centers) centers.push_back({ctr[0], ctr[1]});
  json beta = json::array();
  for (const auto& b : c.beta) beta.push_back({b[0], b[1], b[2], b[3]});
  return json{{"n", c.n},
              {"centers", centers},
              {"blob_sd", c.blob_sd},
              {"beta", beta},
              {"gompertz_shape", c.gompertz_shape},
              {"effect_magnitude", c.effect_magnitude},
              {"p_event", c.p_event},
              {"seed", c.seed}};
}

synthetic::SyntheticConfig synthetic_config_from_json(const json& doc, synthetic::SyntheticConfig c) {
  reject_unknown_keys(doc, {"n", "centers", "blob_sd", "beta", "gompertz_shape", "effect_magnitude", "p_event", "seed"},
                      "synthetic config");
  try {
    if (doc.contains("n")) c.n = doc["n"].get<std::size_t>();
    if (doc.contains("centers")) c.centers = doc["centers"].get<std::vector<std::array<double, 2>>>();
    if (doc.contains("blob_sd")) c.blob_sd = doc["blob_sd"].get<double>();
    if (doc.contains("beta")) c.beta = doc["beta"].get<std::vector<std::array<double, 4>>>();
    if (doc.contains("gompertz_shape")) c.gompertz_shape = doc["gompertz_shape"].get<double>();
    if (doc.contains("effect_magnitude")) c.effect_magnitude = doc["effect_magnitude"].get<double>();
    if (doc.contains("p_event")) c.p_event = doc["p_event"].get<double>();
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const CmheModel& model) {
  json params;
  json encoder = json::array();
  for (const auto& layer : model.params.encoder) encoder.push_back(linear_to_json(layer));
  params["encoder"] = encoder;
  params["head_f"] = linear_to_json(model.params.head_f);
  params["head_g"] = linear_to_json(model.params.head_g);
  params["head_h"] = linear_to_json(model.params.head_h);
  params["omega"] = std::vector<double>(model.params.omega.data(), model.params.omega.data() + model.params.omega.size());

  json baselines = json::array();
  for (const auto& b : model.baselines) {
    baselines.push_back({{"knots", b.knots()}, {"values", b.values()}, {"slopes", b.slopes()}, {"penalty", b.penalty()}});
  }
  const auto shape = model.params.shape();
  return json{{"format", "cmhe-model"},
              {"version", kModelFormatVersion},
              {"shape", {{"input_dim", shape.input_dim}, {"hidden", shape.hidden}, {"k", shape.k}, {"m", shape.m}}},
              {"config", to_json(model.config)},
              {"standardization",
               {{"feature_names", model.standardization.feature_names},
                {"mean", model.standardization.mean},
                {"sd", model.standardization.sd}}},
              {"params", params},
              {"baselines", baselines}};
}

CmheModel model_from_json(const json& doc) {
  try {
    reject_unknown_keys(doc, {"format", "version", "shape", "config", "standardization", "params", "baselines"}, "model");
    if (doc.at("format").get<std::string>() != "cmhe-model") throw Error("model: unexpected format tag");
    if (doc.at("version").get<int>() != kModelFormatVersion) throw Error("model: unsupported version");
    CmheModel model;
    model.config = fit_config_from_json(doc.at("config"));
    const auto& st = doc.at("standardization");
    reject_unknown_keys(st, {"feature_names", "mean", "sd"}, "model standardization");
    model.standardization.feature_names = st.at("feature_names").get<std::vector<std::string>>();
    model.standardization.mean = st.at("mean").get<std::vector<double>>();
    model.standardization.sd = st.at("sd").get<std::vector<double>>();
    if (model.standardization.mean.size() != model.standardization.dim() ||
        model.standardization.sd.size() != model.standardization.dim()) {
      throw Error("model: standardization arrays differ in length");
    }
    const auto& p = doc.at("params");
    reject_unknown_keys(p, {"encoder", "head_f", "head_g", "head_h", "omega"}, "model params");
    for (const auto& layer : p.at("encoder")) model.params.encoder.push_back(linear_from_json(layer));
    model.params.head_f = linear_from_json(p.at("head_f"));
    model.params.head_g = linear_from_json(p.at("head_g"));
    model.params.head_h = linear_from_json(p.at("head_h"));
    const auto omega = p.at("omega").get<std::vector<double>>();
    model.params.omega = Eigen::Map<const Eigen::VectorXd>(omega.data(), static_cast<Eigen::Index>(omega.size()));
    for (const auto& b : doc.at("baselines")) {
      reject_unknown_keys(b, {"knots", "values", "slopes", "penalty"}, "model baseline");
      model.baselines.emplace_back(b.at("knots").get<std::vector<double>>(), b.at("values").get<std::vector<double>>(),
                                   b.at("slopes").get<std::vector<double>>(), b.at("penalty").get<double>());
    }
    // chained layer shapes
    Eigen::Index in = model.params.encoder.empty() ? model.params.head_f.in_dim() : model.params.encoder.front().in_dim();
    for (const auto& layer : model.params.encoder) {
      if (layer.in_dim() != in || !layer.has_bias()) throw Error("model: encoder layer shapes do not chain");
      in = layer.out_dim();
    }
    for (const Linear* head : {&model.params.head_f, &model.params.head_g, &model.params.head_h}) {
      if (head->in_dim() != in) throw Error("model: head input size does not match the encoder");
    }
    if (!model.params.head_f.has_bias() || !model.params.head_g.has_bias() || model.params.head_h.has_bias()) {
      throw Error("model: unexpected head bias layout");
    }
    const auto& shape = doc.at("shape");
    const auto actual = model.params.shape();
    if (shape.at("input_dim").get<int>() != actual.input_dim || shape.at("hidden").get<std::vector<int>>() != actual.hidden ||
        shape.at("k").get<int>() != actual.k || shape.at("m").get<int>() != actual.m) {
      throw Error("model: shape metadata does not match the arrays");
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw Error(std::string("model: malformed document: ") + e.what());
  }
}

json to_json(const metrics::MetricsReport& r) {
  json effects = json::array();
  for (const auto& e : r.effects) {
    effects.push_back({{"name", e.name},
                       {"horizon", e.horizon},
                       {"value", e.estimate.value},
                       {"half_width", e.estimate.half_width}});
  }
  return json{{"horizons", r.horizons},
              {"concordance_td", r.concordance},
              {"brier", r.brier},
              {"integrated_brier", r.integrated_brier},
              {"effects", effects}};
}

metrics::MetricsReport metrics_report_from_json(const json& doc) {
  try {
    reject_unknown_keys(doc, {"horizons", "concordance_td", "brier", "integrated_brier", "effects"}, "metrics report");
    metrics::MetricsReport r;
    r.horizons = doc.at("horizons").get<std::vector<double>>();
    r.concordance = doc.at("concordance_td").get<std::vector<double>>();
    r.brier = doc.at("brier").get<std::vector<double>>();
    r.integrated_brier = doc.at("integrated_brier").get<double>();
    for (const auto& e : doc.at("effects")) {
      r.effects.push_back({e.at("name").get<std::string>(), e.at("horizon").get<double>(),
                           {e.at("value").get<double>(), e.at("half_width").get<double>()}});
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("metrics report: ") + e.what());
  }
}

void save_model(const CmheModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << dump(to_json(model));
  if (!out) throw Error("write failed for " + path.string());
}

CmheModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace cmhe
