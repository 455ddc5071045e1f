#ifndef RFR_HARNESS_HPP_
#define RFR_HARNESS_HPP_

#include "rfr/data_io.hpp"
#include "rfr/dataset.hpp"
#include "rfr/losses.hpp"
#include "rfr/nn.hpp"
#include "rfr/shift.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rfr::harness {

inline constexpr int kSchemaVersion = 1;

struct FairnessReport {
  double accuracy = 0.0;
  double delta_dp = 0.0;
  std::optional<double> delta_eo;  // unset when a group has no positive rows
  double threshold = 0.5;
  Eigen::Index n0 = 0;
  Eigen::Index n1 = 0;
};

// yhat = 1[f >= threshold]. Throws kDegenerateGroup when a group is empty.
FairnessReport evaluate_predictions(const Eigen::VectorXd& pred, const std::vector<int>& y,
                                    const std::vector<int>& a, double threshold = 0.5);
FairnessReport evaluate(const nn::ModelParams& params, const Dataset& data,
                        double threshold = 0.5);

// |mean_{a=0} pred - mean_{a=1} pred|
double soft_dp(const Eigen::VectorXd& pred, const std::vector<int>& a);

struct BoundReport {
  double dp_source = 0.0;
  double dp_target = 0.0;
  double delta0 = 0.0;  // |E_{S0} f - E_{T0} f|
  double delta1 = 0.0;  // |E_{S1} f - E_{T1} f|
  double bound = 0.0;
  bool satisfied = false;
};

// Soft DP on the target never exceeds the source value plus the two group
// drifts. Throws kDegenerateGroup when any of the four group views is empty.
BoundReport check_bound(const nn::ModelParams& params, const Dataset& source,
                        const Dataset& target);
BoundReport check_bound_predictions(const Eigen::VectorXd& pred_source,
                                    const std::vector<int>& a_source,
                                    const Eigen::VectorXd& pred_target,
                                    const std::vector<int>& a_target);

enum class Method { kMlp, kReg, kRfr };

std::string_view to_string(Method method);
std::optional<Method> parse_method(std::string_view text);

enum class DataKind { kToy, kCsv };
enum class ShiftKind { kSynthetic, kSplit, kNone };

// Resolved experiment description. Text form is key = value lines; see
// parse_config for the keys.
struct ExperimentConfig {
  std::vector<Method> methods{Method::kMlp, Method::kReg, Method::kRfr};

  DataKind data = DataKind::kToy;
  std::string data_path;
  std::string schema_path;
  io::ToySpec toy;
  Eigen::Index toy_n = 3000;

  ShiftKind shift = ShiftKind::kSynthetic;
  shift::ShiftConfig shift_cfg;  // seed is taken from the run seed

  std::vector<Eigen::Index> hidden{50, 50};
  fair::TrainConfig train;      // lambda, seed and rho are filled per cell
  std::vector<double> lambdas{1.0};
  std::optional<double> rho;    // required
  std::optional<double> p_norm; // required; +inf allowed
  bool rho_relative = false;    // rho scaled by ||theta_0||_p
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double threshold = 0.5;
  std::string output = "results";
  int threads = 1;

  // Throws kUsage on contradictory or incomplete settings, naming the key.
  void validate() const;
  nlohmann::json to_json() const;
};

// Keys (defaults in parentheses):
//   methods (MLP, REG, RFR)  data (toy) = toy | csv  data.path  data.schema
//   toy.n (3000)  toy.mean0  toy.mean1  toy.cov0  toy.cov1 (row-major)
//   toy.group1_fraction  toy.w  toy.bias  toy.group_bias  toy.label_noise
//   shift (synthetic) = synthetic | split | none  shift.alpha (0)
//   shift.beta (1)  shift.orientation (shifted-source)  shift.n_source
//   shift.n_target  hidden (50, 50)  epochs (100)  batch_size (0 = full)
//   learning_rate (1e-5)  weight_decay (0.01)  loss (linear)
//   lambda (1)  rho  p_norm (number or inf)  rho_relative (false)
//   rfr_form (sharpness)  update (descend-all)  seeds (0..4)
//   threshold (0.5)  output (results)  threads (1)
// Throws kUsage for unknown keys or malformed values.
ExperimentConfig parse_config(std::string_view text,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

struct DataSplit {
  Dataset source;
  Dataset target;
  std::size_t dropped_rows = 0;
};

// Source and target for one seed, standardized and shifted as configured.
DataSplit prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);

struct MethodFit {
  fair::TrainResult result;
  double rho_effective = 0.0;
};

// One training run of a method with the configuration's optimizer and loss.
// MLP forces lambda 0; REG forces rho 0; rho_relative scales rho by the
// p-norm of the seed's initial parameters.
MethodFit train_method(const ExperimentConfig& cfg, const Dataset& source, Method method,
                       double lambda, std::uint64_t seed);

struct CellResult {
  Method method = Method::kMlp;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double rho_effective = 0.0;
  FairnessReport source;
  FairnessReport target;
  BoundReport bound;
  fair::LossBreakdown final_loss;
};

struct ExperimentOutput {
  std::vector<CellResult> cells;
  std::vector<nlohmann::json> records;  // one per cell, same order
};

// Every method x lambda x seed cell. MLP runs once per seed with lambda 0;
// REG uses rho 0. Training failures become failed cells. Writes
// <output>/records.jsonl, <output>/cells.csv and <output>/tradeoff.csv when
// write_files is set.
ExperimentOutput run_experiment(const ExperimentConfig& cfg, bool write_files = true);

nlohmann::json record_json(const CellResult& cell, const ExperimentConfig& cfg);

struct SummaryRow {
  std::string method;
  double lambda = 0.0;
  int runs = 0;
  int failed = 0;
  // mean and sample standard deviation (n - 1) over successful runs
  double acc_mean = 0.0, acc_std = 0.0;
  double dp_mean = 0.0, dp_std = 0.0;
  double eo_mean = 0.0, eo_std = 0.0;
  int eo_runs = 0;
  double src_acc_mean = 0.0, src_dp_mean = 0.0;
};

// Groups records by (method, lambda) over target metrics.
std::vector<SummaryRow> summarize(const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_records(const std::string& jsonl_path);

// "15.11±0.42" style cells: percentages with two decimals, std labelled.
std::string format_table(const std::vector<SummaryRow>& rows);
std::string format_pct(double mean, double sd);

}  // namespace rfr::harness

#endif  // RFR_HARNESS_HPP_
