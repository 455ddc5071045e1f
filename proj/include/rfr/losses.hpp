#ifndef RFR_LOSSES_HPP_
#define RFR_LOSSES_HPP_

#include "rfr/dataset.hpp"
#include "rfr/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace rfr::fair {

enum class LossVariant {
  kLinear,   // E[-Y f - (1 - Y)(1 - f)]
  kCrossEntropy,  // mean binary cross-entropy
};

std::string_view to_string(LossVariant variant);
std::optional<LossVariant> parse_loss_variant(std::string_view text);

// L_p ball {eps : ||eps||_p <= rho} in flattened parameter space. p may be
// +infinity; the conjugate exponent is derived, never stored.
struct PerturbationConfig {
  double rho = 0.05;
  double p = 2.0;

  bool p_is_infinite() const;
  double q() const;
  // Throws kValidation unless rho >= 0 and p > 1.
  void validate() const;
};

// How the RFR gradient enters the update.
enum class RfrGradientForm {
  // d/dtheta of E_a[f(theta + eps_a)] - E_a[f(theta)] with eps_a frozen.
  kSharpness,
  // d/dtheta of E_a[f(theta + eps_a)] only, as printed for the update.
  kPerturbedOnly,
};

enum class UpdateRule {
  // Adam on grad_clf + lambda (grad_dp + grad_rfr).
  kDescendAll,
  // Adam on grad_clf + lambda grad_dp, then theta += lambda grad_rfr.
  kLiteral,
};

std::string_view to_string(RfrGradientForm form);
std::string_view to_string(UpdateRule rule);

struct TrainConfig {
  double lambda = 0.0;
  int epochs = 100;
  Eigen::Index batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  LossVariant variant = LossVariant::kLinear;
  PerturbationConfig perturbation;
  nn::AdamOptions adam;
  RfrGradientForm rfr_form = RfrGradientForm::kSharpness;
  UpdateRule update = UpdateRule::kDescendAll;

  void validate() const;
};

struct LossBreakdown {
  double clf = 0.0;
  double dp = 0.0;
  double rfr_s0 = 0.0;
  double rfr_s1 = 0.0;
  double total = 0.0;
};

LossBreakdown make_breakdown(double clf, double dp, double rfr_s0, double rfr_s1,
                             double lambda);

// Classification loss as a scalar objective over a label vector.
class ClassificationObjective final : public nn::ScalarObjective {
 public:
  ClassificationObjective(std::vector<int> labels, LossVariant variant);
  double value(const Eigen::VectorXd& pred) const override;
  Eigen::VectorXd sensitivity(const Eigen::VectorXd& pred) const override;

 private:
  std::vector<int> labels_;
  LossVariant variant_;
};

// |mean_{a=0} f - mean_{a=1} f| with subgradient 0 at equality.
class DemographicParityObjective final : public nn::ScalarObjective {
 public:
  explicit DemographicParityObjective(std::vector<int> groups);
  double value(const Eigen::VectorXd& pred) const override;
  Eigen::VectorXd sensitivity(const Eigen::VectorXd& pred) const override;

 private:
  std::vector<int> groups_;
  double inv_n0_ = 0.0;
  double inv_n1_ = 0.0;
};

double clf_loss(const nn::ModelParams& params, const Dataset& data,
                LossVariant variant);
nn::GradientVector clf_gradient(const nn::ModelParams& params, const Dataset& data,
                                LossVariant variant);

// Soft demographic parity on mean predictions. Throws kDegenerateGroup when a
// group is empty.
double dp_loss(const nn::ModelParams& params, const Dataset& data);
nn::GradientVector dp_gradient(const nn::ModelParams& params, const Dataset& data);

// Exact gradient of the group-a mean prediction.
nn::GradientVector group_mean_gradient(const nn::ModelParams& params,
                                       const Dataset& data, int group);

struct DualNormSolution {
  Eigen::VectorXd eps;
  bool flat = false;  // g was identically zero; eps is zero
};

// argmax_{||eps||_p <= rho} <g, eps>
//   = rho sign(g) |g|^(q-1) / (||g||_q^q)^(1/p)
// computed on g / max|g_i| so extreme exponents stay finite. sign(0) = 0.
DualNormSolution dual_norm_epsilon(const Eigen::VectorXd& g,
                                   const PerturbationConfig& cfg);

double lp_norm(const Eigen::VectorXd& v, double p);

struct RfrTerms {
  double rfr_s0 = 0.0;
  double rfr_s1 = 0.0;
  Eigen::VectorXd eps0;
  Eigen::VectorXd eps1;
  bool flat0 = false;
  bool flat1 = false;
};

// Worst-case increase of each group's mean prediction over the ball, using
// the closed-form first-order maximizer. The candidates are {0, eps_a*}, so
// each term is nonnegative.
RfrTerms rfr_terms(const nn::ModelParams& params, const Dataset& data,
                   const PerturbationConfig& cfg);

// sum_a d E_{S_a}[f] / d theta evaluated at theta + eps_a*.
nn::GradientVector rfr_gradient(const nn::ModelParams& params, const Dataset& data,
                                const PerturbationConfig& cfg);

struct TrainResult {
  nn::ModelParams params;
  std::vector<LossBreakdown> trace;  // one entry per epoch
};

// Throws kValidation when the data lacks a group or a label class, kNumeric
// with the epoch index when the loss diverges.
TrainResult train(const Dataset& data, const nn::Architecture& arch,
                  const TrainConfig& cfg);

// Same as train() but starting from given parameters.
TrainResult train_from(const Dataset& data, nn::ModelParams init,
                       const TrainConfig& cfg);

}  // namespace rfr::fair

#endif  // RFR_LOSSES_HPP_
