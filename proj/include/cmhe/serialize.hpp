#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cmhe/metrics.hpp"
#include "cmhe/model.hpp"
#include "cmhe/synthetic.hpp"

namespace cmhe {

inline constexpr int kModelFormatVersion = 1;

// Model documents carry shape metadata and row-major weight arrays:
//   { "format": "cmhe-model", "version": 1, "config": {...},
//     "standardization": {...}, "params": {...}, "baselines": [...] }
nlohmann::json to_json(const CmheModel& model);
CmheModel model_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const FitConfig& config);
// Unknown keys are rejected; missing keys keep `base` values.
FitConfig fit_config_from_json(const nlohmann::json& doc, FitConfig base = {});

nlohmann::json to_json(const synthetic::SyntheticConfig& config);
synthetic::SyntheticConfig synthetic_config_from_json(const nlohmann::json& doc,
                                                      synthetic::SyntheticConfig base = {});

nlohmann::json to_json(const metrics::MetricsReport& report);
metrics::MetricsReport metrics_report_from_json(const nlohmann::json& doc);

void save_model(const CmheModel& model, const std::filesystem::path& path);
CmheModel load_model(const std::filesystem::path& path);

// Stable text form used for files: two-space indent plus trailing newline.
std::string dump(const nlohmann::json& doc);

// Throws if `doc` has keys outside `allowed`.
void reject_unknown_keys(const nlohmann::json& doc, std::initializer_list<const char*> allowed,
                         const std::string& context);

}  // namespace cmhe
