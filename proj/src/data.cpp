#include "cmhe/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cmhe/log.hpp"
#include "cmhe/rng.hpp"

namespace cmhe {

ValidationError::ValidationError(std::size_t row, std::string column, const std::string& what)
    : Error("row " + std::to_string(row) + ", column '" + column + "': " + what),
      row_(row),
      column_(std::move(column)) {}

namespace {

void validate_record(const SurvivalRecord& r, std::size_t row, std::size_t dim,
                     const std::vector<std::string>& names) {
  if (r.x.size() != dim) {
    throw ValidationError(row, "features",
                          "expected " + std::to_string(dim) + " features, got " +
                              std::to_string(r.x.size()));
  }
  if (!std::isfinite(r.time) || r.time <= 0.0) {
    throw ValidationError(row, "time", "time must be finite and > 0");
  }
  if (r.event != 0 && r.event != 1) throw ValidationError(row, "event", "event must be 0 or 1");
  if (r.treatment != 0 && r.treatment != 1) {
    throw ValidationError(row, "treatment", "treatment must be 0 or 1");
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (!std::isfinite(r.x[j])) throw ValidationError(row, names[j], "feature value is not finite");
  }
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end;
}

int parse_indicator(const std::string& text, std::size_t row, const std::string& column) {
  double v = 0.0;
  if (!parse_double(text, v)) throw ValidationError(row, column, "non-numeric value '" + text + "'");
  if (v != 0.0 && v != 1.0) throw ValidationError(row, column, "value must be 0 or 1");
  return static_cast<int>(v);
}

}  // namespace

SurvivalDataset::SurvivalDataset(std::vector<SurvivalRecord> records,
                                 std::vector<std::string> feature_names)
    : records_(std::move(records)), feature_names_(std::move(feature_names)) {
  const std::size_t d = feature_names_.size();
  features_.resize(static_cast<Eigen::Index>(records_.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < records_.size(); ++i) {
    validate_record(records_[i], i + 1, d, feature_names_);
    for (std::size_t j = 0; j < d; ++j) {
      features_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records_[i].x[j];
    }
  }
}

std::size_t SurvivalDataset::event_count() const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(),
                                                [](const SurvivalRecord& r) { return r.event == 1; }));
}

std::vector<double> SurvivalDataset::times() const {
  std::vector<double> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].time;
  return out;
}

std::vector<int> SurvivalDataset::events() const {
  std::vector<int> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].event;
  return out;
}

std::vector<int> SurvivalDataset::treatments() const {
  std::vector<int> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].treatment;
  return out;
}

SurvivalDataset SurvivalDataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<SurvivalRecord> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(records_.at(i));
  return SurvivalDataset{std::move(out), feature_names_};
}

void SurvivalDataset::require_trainable(const char* context) const {
  if (size() < 2) throw Error(std::string(context) + ": dataset needs at least 2 records");
  if (event_count() == 0) throw Error(std::string(context) + ": dataset has no observed events");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("cannot format double");
  return std::string(buf, ptr);
}

SurvivalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto find_col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(path.string() + ": missing required column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_idx = find_col(schema.time_col);
  const std::size_t event_idx = find_col(schema.event_col);
  const std::size_t treat_idx = find_col(schema.treatment_col);

  std::vector<std::size_t> feature_idx;
  std::vector<std::string> feature_names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == time_idx || j == event_idx || j == treat_idx) continue;
    feature_idx.push_back(j);
    feature_names.push_back(header[j]);
  }

  std::vector<SurvivalRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ValidationError(row, "*", "expected " + std::to_string(header.size()) + " fields, got " +
                                          std::to_string(fields.size()));
    }
    SurvivalRecord r;
    if (!parse_double(fields[time_idx], r.time)) {
      throw ValidationError(row, schema.time_col, "non-numeric value '" + fields[time_idx] + "'");
    }
    if (!std::isfinite(r.time) || r.time <= 0.0) {
      throw ValidationError(row, schema.time_col, "time must be finite and > 0");
    }
    r.event = parse_indicator(fields[event_idx], row, schema.event_col);
    r.treatment = parse_indicator(fields[treat_idx], row, schema.treatment_col);
    r.x.resize(feature_idx.size());
    for (std::size_t j = 0; j < feature_idx.size(); ++j) {
      const auto& cell = fields[feature_idx[j]];
      if (!parse_double(cell, r.x[j]) || !std::isfinite(r.x[j])) {
        throw ValidationError(row, feature_names[j], "non-numeric or missing value '" + cell + "'");
      }
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw SchemaError(path.string() + ": no data rows");
  return SurvivalDataset{std::move(records), std::move(feature_names)};
}

void write_csv(const SurvivalDataset& dataset, const std::filesystem::path& path,
               const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << schema.time_col << ',' << schema.event_col << ',' << schema.treatment_col;
  for (const auto& name : dataset.feature_names()) out << ',' << name;
  out << '\n';
  for (const auto& r : dataset.records()) {
    out << format_double(r.time) << ',' << r.event << ',' << r.treatment;
    for (const double v : r.x) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

StandardizationStats StandardizationStats::identity(const std::vector<std::string>& names) {
  StandardizationStats s;
  s.feature_names = names;
  s.mean.assign(names.size(), 0.0);
  s.sd.assign(names.size(), 1.0);
  return s;
}

namespace {

std::vector<std::size_t> resolve_columns(const std::vector<std::string>& wanted,
                                         const std::vector<std::string>& available) {
  std::vector<std::size_t> idx;
  idx.reserve(wanted.size());
  for (const auto& name : wanted) {
    const auto it = std::find(available.begin(), available.end(), name);
    if (it == available.end()) throw SchemaError("feature '" + name + "' not present in data");
    idx.push_back(static_cast<std::size_t>(it - available.begin()));
  }
  return idx;
}

}  // namespace

SurvivalDataset StandardizationStats::apply(const SurvivalDataset& dataset) const {
  const auto idx = resolve_columns(feature_names, dataset.feature_names());
  std::vector<SurvivalRecord> records;
  records.reserve(dataset.size());
  for (const auto& r : dataset.records()) {
    SurvivalRecord out{std::vector<double>(idx.size()), r.time, r.event, r.treatment};
    for (std::size_t j = 0; j < idx.size(); ++j) out.x[j] = (r.x[idx[j]] - mean[j]) / sd[j];
    records.push_back(std::move(out));
  }
  return SurvivalDataset{std::move(records), feature_names};
}

Eigen::VectorXd StandardizationStats::apply(const std::vector<std::string>& names,
                                            const std::vector<double>& x) const {
  if (names.size() != x.size()) throw Error("feature names and values differ in length");
  const auto idx = resolve_columns(feature_names, names);
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out(static_cast<Eigen::Index>(j)) = (x[idx[j]] - mean[j]) / sd[j];
  }
  return out;
}

std::pair<SurvivalDataset, StandardizationStats> standardize(const SurvivalDataset& dataset) {
  if (dataset.size() < 2) throw Error("standardize: need at least 2 records");
  const auto& x = dataset.features();
  const double n = static_cast<double>(dataset.size());

  StandardizationStats stats;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).sum() / n;
    const double var = (x.col(j).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    const auto& name = dataset.feature_names()[static_cast<std::size_t>(j)];
    // relative test so that large-offset columns with tiny spread are still kept
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      log::warning("standardize: dropping constant feature '" + name + "'");
      continue;
    }
    stats.feature_names.push_back(name);
    stats.mean.push_back(mean);
    stats.sd.push_back(sd);
  }
  if (stats.feature_names.empty()) throw Error("standardize: all features are constant");
  return {stats.apply(dataset), std::move(stats)};
}

Split split(const SurvivalDataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split: fraction must lie in (0, 1)");
  const std::size_t n = dataset.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw Error("split: fraction yields an empty split");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, Stream::split);
  // Fisher-Yates with our own index draw so results do not depend on the
  // standard library's shuffle implementation
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  Split out;
  out.train_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_index.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(out.train_index.begin(), out.train_index.end());
  std::sort(out.test_index.begin(), out.test_index.end());
  out.train = dataset.subset(out.train_index);
  out.test = dataset.subset(out.test_index);
  if (out.train.event_count() == 0 || out.test.event_count() == 0) {
    throw Error("split: a part has no observed events");
  }
  return out;
}

}  // namespace cmhe
