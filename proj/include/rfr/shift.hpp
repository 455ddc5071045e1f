#ifndef RFR_SHIFT_HPP_
#define RFR_SHIFT_HPP_

#include "rfr/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace rfr::shift {

struct PcaProjection {
  Eigen::VectorXd direction;  // unit length, largest-magnitude coordinate positive
  Eigen::VectorXd values;     // x_i . direction per row
  double mu = 0.0;
  double sigma = 0.0;         // population standard deviation of values
  double eigenvalue = 0.0;    // top eigenvalue of the population covariance
  int iterations = 0;
};

// First principal component by power iteration on the population covariance,
// started from the covariance column with the largest diagonal entry and
// stopped once successive directions differ by at most 1e-10 radians.
// Throws kSize for fewer than 2 rows or no columns, kDegenerateVariance for
// constant data, kNumeric if the iteration fails to settle.
PcaProjection first_pc(const Eigen::MatrixXd& features);

// Which side receives the mean-shifted, narrowed Gaussian weights.
enum class Orientation {
  kShiftedSource,  // target ~ N(mu, sigma), source ~ N(mu + alpha, sigma / beta)
  kShiftedTarget,  // the two roles swapped
};

std::string_view to_string(Orientation orientation);
std::optional<Orientation> parse_orientation(std::string_view text);

struct ShiftConfig {
  double alpha = 0.0;
  double beta = 1.0;
  // Unset counts default to floor(N / 3).
  std::optional<Eigen::Index> n_source;
  std::optional<Eigen::Index> n_target;
  std::uint64_t seed = 0;
  Orientation orientation = Orientation::kShiftedSource;

  // Throws kValidation unless beta > 0 and alpha is finite.
  void validate() const;
};

double gaussian_density(double x, double mean, double sd);

struct ShiftWeights {
  Eigen::VectorXd target;
  Eigen::VectorXd source;
};

// Sampling weights per row for both sides, before any row is removed.
ShiftWeights shift_weights(const PcaProjection& proj, const ShiftConfig& cfg);

struct ShiftSplit {
  Dataset source;
  Dataset target;
  std::vector<Eigen::Index> source_rows;
  std::vector<Eigen::Index> target_rows;
};

// Target rows drawn first without replacement, source rows from what is
// left, each with probability proportional to its Gaussian weight
// (exponential keys). Throws kSize when the requested counts do not fit.
ShiftSplit biased_sample(const Dataset& data, const PcaProjection& proj, const ShiftConfig& cfg);

// first_pc on the features, then biased_sample.
ShiftSplit make_shift(const Dataset& data, const ShiftConfig& cfg);

// k indices drawn without replacement from pool with probability
// proportional to exp(log_weight), in draw order.
std::vector<Eigen::Index> weighted_sample_without_replacement(
    const std::vector<Eigen::Index>& pool, const Eigen::VectorXd& log_weight, Eigen::Index k,
    std::uint64_t seed);

}  // namespace rfr::shift

#endif  // RFR_SHIFT_HPP_
