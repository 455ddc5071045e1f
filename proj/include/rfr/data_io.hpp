#ifndef RFR_DATA_IO_HPP_
#define RFR_DATA_IO_HPP_

#include "rfr/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rfr::io {

enum class MissingPolicy { kDrop, kError };

// Declarative description of a CSV file. Loaded from key = value lines:
//
//   label            = income
//   label_positive   = >50K, >50K.
//   sensitive        = sex
//   sensitive_group0 = Female
//   categorical      = workclass, education, race
//   numeric          = age, hours-per-week
//   split_column     = year          (optional)
//   split_source     = 2016
//   split_target     = 2018
//   missing          = drop          (drop | error)
//   standardize      = true
//   delimiter        = ,
//
// Lists are comma separated and may quote items with double quotes. Blank
// lines and lines starting with '#' are ignored.
struct SchemaConfig {
  std::string label;
  std::vector<std::string> label_positive;
  std::string sensitive;
  std::string sensitive_group0;
  std::vector<std::string> categorical;
  std::vector<std::string> numeric;
  std::optional<std::string> split_column;
  std::vector<std::string> split_source;
  std::vector<std::string> split_target;
  MissingPolicy missing = MissingPolicy::kDrop;
  bool standardize = true;
  char delimiter = ',';

  // Throws kSchema when required keys are empty or label == sensitive.
  void validate() const;
};

SchemaConfig parse_schema(std::string_view text);
SchemaConfig load_schema(const std::string& path);
std::string format_schema(const SchemaConfig& schema);

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws kSchema naming the column when absent.
  std::size_t column(const std::string& name) const;
};

// RFC 4180 style: fields may be quoted, quotes doubled inside quotes,
// CRLF tolerated. Unquoted fields are trimmed of surrounding blanks.
// Throws kIo when the file cannot be read, kSchema on a ragged row.
RawTable read_csv(const std::string& path, char delimiter = ',');
RawTable parse_csv(std::string_view text, char delimiter = ',');
std::vector<std::string> split_record(std::string_view line, char delimiter);

struct LoadResult {
  Dataset data;
  std::size_t dropped_rows = 0;  // rows with an empty or "?" field
};

// One-hot encodes categorical columns (levels sorted, named "col=level"),
// standardizes numeric columns with population statistics of the loaded
// rows when schema.standardize is set. Throws kSchema for a missing column
// or a non-binary sensitive attribute, kEmptyData when no rows survive.
LoadResult load_csv(const std::string& path, const SchemaConfig& schema);
LoadResult load_table(const RawTable& table, const SchemaConfig& schema);

struct SplitResult {
  Dataset source;
  Dataset target;
  std::size_t dropped_rows = 0;
};

// Partitions by schema.split_column. Category levels come from both sides;
// standardization statistics come from the source side only. Throws
// kPartition when either side is empty.
SplitResult split_by_column(const RawTable& table, const SchemaConfig& schema);
SplitResult split_by_column(const std::string& path, const SchemaConfig& schema);

// Writes features, y and a to a CSV with 17 significant digits and a sidecar
// "<path>.schema" that reloads it without standardization.
void save_dataset(const Dataset& data, const std::string& path);

// Gaussian mixture: group a rows draw x ~ N(mean[a], cov[a]); the label is
// 1[w . x + bias + group_bias * a + noise > 0] with noise ~ N(0, label_noise^2).
struct ToySpec {
  Eigen::VectorXd mean0 = Eigen::Vector2d(0.0, 0.0);
  Eigen::VectorXd mean1 = Eigen::Vector2d(0.0, 0.0);
  Eigen::MatrixXd cov0 = Eigen::Matrix2d::Identity();
  Eigen::MatrixXd cov1 = Eigen::Matrix2d::Identity();
  double group1_fraction = 0.5;
  Eigen::VectorXd w = Eigen::Vector2d(1.0, 0.0);
  double bias = 0.0;
  double group_bias = 0.0;
  double label_noise = 0.0;

  void validate() const;
};

Dataset make_toy(const ToySpec& spec, Eigen::Index n, std::uint64_t seed);

// Population mean and standard deviation per column; a constant column
// gets scale 1 so it maps to zero.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& columns);
  void apply(Eigen::MatrixXd& x) const;
};

}  // namespace rfr::io

#endif  // RFR_DATA_IO_HPP_
