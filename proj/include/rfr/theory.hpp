#ifndef RFR_THEORY_HPP_
#define RFR_THEORY_HPP_

#include "rfr/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rfr::theory {

// Finite-support probability distribution. Points may be scalars (dim 1) or
// small vectors; for labelled data the last coordinate carries the label.
struct DiscreteDistribution {
  std::vector<Eigen::VectorXd> support;
  Eigen::VectorXd mass;

  static DiscreteDistribution point_mass(Eigen::VectorXd at);
  static DiscreteDistribution scalar(std::vector<double> points, std::vector<double> masses);

  std::size_t size() const { return support.size(); }
  Eigen::Index dim() const { return support.empty() ? 0 : support.front().size(); }

  // Throws kValidation: empty support, mixed dimensions, negative mass,
  // masses not summing to 1 within 1e-12, or repeated points.
  void validate() const;
};

double ground_cost(const Eigen::VectorXd& s, const Eigen::VectorXd& t, double exponent);

struct TransportPlan {
  Eigen::MatrixXd gamma;  // source x target
  double cost_exponent = 2.0;
  DiscreteDistribution source;
  DiscreteDistribution target;

  double cost() const;
  // Throws kValidation on a negative entry or a marginal off by more than tol.
  void validate(double tol = 1e-9) const;
};

struct OtSolution {
  TransportPlan plan;
  Eigen::VectorXd row_potential;  // u
  Eigen::VectorXd col_potential;  // v, with u_i + v_j <= c_ij at optimum
  int pivots = 0;
};

// Exact discrete optimal transport under c(s,t) = ||s - t||_2^exponent,
// solved with the transportation simplex (MODI). Throws kValidation when the
// marginals are infeasible and kNumeric if the pivot budget runs out.
OtSolution solve_ot_certified(const DiscreteDistribution& src, const DiscreteDistribution& tgt,
                              double exponent);
TransportPlan solve_ot(const DiscreteDistribution& src, const DiscreteDistribution& tgt,
                       double exponent);

// A random feasible plan: Sinkhorn scaling of a random positive kernel until
// both marginals match to 1e-13.
TransportPlan random_feasible_plan(const DiscreteDistribution& src,
                                   const DiscreteDistribution& tgt, double exponent,
                                   std::mt19937_64& rng);

// Distribution of the displacement t - s under a plan. Displacements equal
// to 1e-12 are merged.
struct PerturbationLaw {
  std::vector<Eigen::VectorXd> support;
  Eigen::VectorXd mass;

  // E[||delta||_2^exponent]
  double expected_power(double exponent) const;
  Eigen::VectorXd mean() const;
};

PerturbationLaw perturbation_law(const TransportPlan& plan);

// Mass reaching each target point when s ~ source and delta | s is drawn
// from the plan's conditional law; equals the target mass for a valid plan.
Eigen::VectorXd pushforward_mass(const TransportPlan& plan);

enum class PointLoss { kSquared, kLinear, kCrossEntropy };

std::string_view to_string(PointLoss loss);
double point_loss(PointLoss loss, double f, double y);
double point_loss_df(PointLoss loss, double f, double y);
double point_loss_dy(PointLoss loss, double f, double y);

struct TransportLossReport {
  double target_loss = 0.0;
  double perturbed_source_loss = 0.0;
  double gap = 0.0;
  double plan_cost = 0.0;
  std::size_t source_points = 0;
  std::size_t target_points = 0;
  PointLoss loss = PointLoss::kSquared;
};

// Source and target live on (x, y) points: all coordinates but the last are
// features, the last is the label. The plan is solved jointly over (x, y).
TransportLossReport check_transport_loss(const nn::ModelParams& params,
                                  const DiscreteDistribution& src,
                                  const DiscreteDistribution& tgt, PointLoss loss,
                                  double cost_exponent = 2.0);

// How a label displacement enters the first-order data term.
enum class LabelChannel {
  kLossDirect,   // d l / d y
  kModelOutput,  // d l / d f * d f / d y, which is zero: f does not read y
};

enum class WeightShiftStatus {
  kOk,
  kZeroPerturbation,  // the law is a point mass at zero
  kZeroFirstOrder,    // data term vanishes at first order; delta_theta = 0
  kUnrepresentable,   // parameter gradient vanishes but the data term does not
};

std::string_view to_string(LabelChannel channel);
std::string_view to_string(WeightShiftStatus status);

struct WeightShiftReport {
  WeightShiftStatus status = WeightShiftStatus::kOk;
  LabelChannel channel = LabelChannel::kLossDirect;
  PointLoss loss = PointLoss::kSquared;
  double data_term = 0.0;       // right-hand side of the first-order condition
  double param_grad_norm = 0.0;
  Eigen::VectorXd delta_theta;  // minimum-norm solution
  std::vector<double> scales;
  std::vector<double> mismatches;
  std::vector<double> ratios;   // mismatch(s_{k+1}) / mismatch(s_k)
  double ratio_bound = 0.35;
  bool quadratic_decay = false;
};

// Solves E[dl/df df/dtheta] . dtheta = E[data term] for the minimum-norm
// dtheta, then compares the loss under s * delta data perturbation with the
// loss under s * dtheta weight perturbation over the given scales. law
// points are (delta_x..., delta_y).
WeightShiftReport check_weight_shift(const nn::ModelParams& params, const DiscreteDistribution& src,
                              const PerturbationLaw& law, PointLoss loss,
                              LabelChannel channel = LabelChannel::kLossDirect,
                              std::vector<double> scales = {1.0, 0.5, 0.25, 0.125},
                              double ratio_bound = 0.35);

// | |a1 - b1| - |a2 - b2| | <= |a1 - a2| + |b1 - b2|, with a few ulps of
// slack for rounding.
bool gap_triangle_check(double a1, double b1, double a2, double b2);

nlohmann::json to_json(const DiscreteDistribution& dist);
nlohmann::json to_json(const TransportLossReport& report);
nlohmann::json to_json(const WeightShiftReport& report);

struct SuiteCheck {
  std::string name;
  bool passed = false;
  nlohmann::json detail;
};

struct SuiteOptions {
  std::uint64_t seed = 20240601;
  int transport_instances = 20;
  int weight_shift_instances = 10;
  int ot_instances = 10;
  int alternative_plans = 1000;
  long triangle_tuples = 1000000;
};

// Runs every certification: OT marginal feasibility and optimality against
// random feasible plans, the perturbation-law pushforward and minimal-power
// property, the loss equivalence on random labelled instances, first-order
// weight-perturbation equivalence with quadratic decay, and the gap triangle inequality.
std::vector<SuiteCheck> run_theory_suite(const SuiteOptions& options = {});

}  // namespace rfr::theory

#endif  // RFR_THEORY_HPP_
