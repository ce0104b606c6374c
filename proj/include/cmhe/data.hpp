#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cmhe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Row-level problem in an input file or record list. `row` is the 1-based
// data row (header excluded); `column` names the offending field.
class ValidationError : public Error {
 public:
  ValidationError(std::size_t row, std::string column, const std::string& what);

  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

struct SurvivalRecord {
  std::vector<double> x;
  double time = 0.0;
  int event = 0;
  int treatment = 0;
};

// Immutable collection of right-censored records sharing one feature space.
class SurvivalDataset {
 public:
  SurvivalDataset() = default;
  SurvivalDataset(std::vector<SurvivalRecord> records, std::vector<std::string> feature_names);

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return feature_names_.size(); }
  std::size_t event_count() const;

  const std::vector<SurvivalRecord>& records() const { return records_; }
  const SurvivalRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  // n x d, one row per record.
  const Eigen::MatrixXd& features() const { return features_; }
  std::vector<double> times() const;
  std::vector<int> events() const;
  std::vector<int> treatments() const;

  SurvivalDataset subset(const std::vector<std::size_t>& indices) const;

  // n >= 2 and at least one observed event.
  void require_trainable(const char* context) const;

 private:
  std::vector<SurvivalRecord> records_;
  std::vector<std::string> feature_names_;
  Eigen::MatrixXd features_;
};

struct CsvSchema {
  std::string time_col = "time";
  std::string event_col = "event";
  std::string treatment_col = "treatment";
};

SurvivalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(const SurvivalDataset& dataset, const std::filesystem::path& path,
               const CsvSchema& schema = {});

// Splits one CSV line into fields (quoted fields with doubled quotes allowed).
std::vector<std::string> split_csv_line(const std::string& line);
std::string format_double(double value);

// Population (divide-by-n) moments of the retained features.
struct StandardizationStats {
  std::vector<std::string> feature_names;  // retained, in output order
  std::vector<double> mean;
  std::vector<double> sd;

  std::size_t dim() const { return feature_names.size(); }
  static StandardizationStats identity(const std::vector<std::string>& names);

  // Selects retained features by name and standardizes them.
  SurvivalDataset apply(const SurvivalDataset& dataset) const;
  Eigen::VectorXd apply(const std::vector<std::string>& names, const std::vector<double>& x) const;
};

std::pair<SurvivalDataset, StandardizationStats> standardize(const SurvivalDataset& dataset);

struct Split {
  SurvivalDataset train;
  SurvivalDataset test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
};

// Deterministic random partition; train gets round(fraction * n) records and
// both parts keep the original relative order.
Split split(const SurvivalDataset& dataset, double fraction, std::uint64_t seed);

}  // namespace cmhe
