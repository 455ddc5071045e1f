#include "rfr/theory.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rfr::theory {
namespace {

using Json = nlohmann::json;

DiscreteDistribution random_distribution(std::mt19937_64& rng, std::size_t points,
                                         Eigen::Index dim, bool labelled) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  DiscreteDistribution d;
  d.mass.resize(static_cast<Eigen::Index>(points));
  for (std::size_t k = 0; k < points; ++k) {
    Eigen::VectorXd p(dim);
    for (Eigen::Index c = 0; c < dim; ++c) p(c) = normal(rng);
    if (labelled) p(dim - 1) = coin(rng) ? 1.0 : 0.0;
    d.support.push_back(p);
    d.mass(static_cast<Eigen::Index>(k)) = expo(rng) + 1e-3;
  }
  d.mass /= d.mass.sum();
  return d;
}

nn::ModelParams random_net(std::mt19937_64& rng, Eigen::Index input_dim, Eigen::Index hidden) {
  const nn::ModelParams base = nn::ModelParams::glorot({input_dim, {hidden}}, rng());
  std::vector<nn::Layer> layers = base.layers();
  std::normal_distribution<double> normal(0.0, 0.3);
  for (auto& layer : layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = normal(rng);
  }
  return nn::ModelParams(std::move(layers));
}

double rel_tol(double scale) { return 1e-12 * std::max(1.0, std::abs(scale)); }

SuiteCheck ot_examples() {
  SuiteCheck check{"ot_examples", true, Json::array()};
  auto record = [&](const char* name, bool ok, double cost) {
    check.detail.push_back({{"case", name}, {"cost", cost}, {"passed", ok}});
    check.passed = check.passed && ok;
  };
  {
    const auto plan = solve_ot(DiscreteDistribution::scalar({0.0}, {1.0}),
                               DiscreteDistribution::scalar({1.0}, {1.0}), 2.0);
    record("point masses 0 -> 1", std::abs(plan.gamma(0, 0) - 1.0) <= 1e-15 &&
                                      std::abs(plan.cost() - 1.0) <= 1e-15,
           plan.cost());
  }
  {
    const auto d = DiscreteDistribution::scalar({-1.0, 0.5, 2.0}, {0.2, 0.5, 0.3});
    const auto plan = solve_ot(d, d, 2.0);
    const Eigen::MatrixXd diag = d.mass.asDiagonal();
    record("identical marginals", (plan.gamma - diag).cwiseAbs().maxCoeff() <= 1e-15 &&
                                      plan.cost() == 0.0,
           plan.cost());
  }
  {
    const auto plan = solve_ot(DiscreteDistribution::scalar({0.0, 1.0}, {0.5, 0.5}),
                               DiscreteDistribution::scalar({1.0, 2.0}, {0.5, 0.5}), 2.0);
    const auto law = perturbation_law(plan);
    const bool monotone = plan.gamma(0, 0) == 0.5 && plan.gamma(1, 1) == 0.5 &&
                          plan.gamma(0, 1) == 0.0 && plan.gamma(1, 0) == 0.0;
    const bool unit_shift = law.support.size() == 1 && law.support[0](0) == 1.0;
    record("two-point monotone", monotone && unit_shift && std::abs(plan.cost() - 1.0) <= 1e-15,
           plan.cost());
  }
  return check;
}

void ot_random(const SuiteOptions& opt, std::mt19937_64& rng, std::vector<SuiteCheck>& out) {
  static constexpr std::size_t kSizes[][2] = {{2, 3}, {3, 3}, {4, 4}, {5, 7}, {8, 6}, {12, 12}};
  SuiteCheck feasible{"ot_marginal_feasibility", true, Json::array()};
  SuiteCheck optimal{"ot_beats_random_feasible_plans", true, Json::array()};
  SuiteCheck pushforward{"perturbation_law_pushforward", true, Json::array()};
  SuiteCheck minimal{"perturbation_law_minimal_power", true, Json::array()};
  for (int inst = 0; inst < opt.ot_instances; ++inst) {
    const auto& size = kSizes[static_cast<std::size_t>(inst) % std::size(kSizes)];
    const Eigen::Index dim = 1 + inst % 2;
    const auto src = random_distribution(rng, size[0], dim, false);
    const auto tgt = random_distribution(rng, size[1], dim, false);
    const double exponent = 2.0;
    const TransportPlan plan = solve_ot(src, tgt, exponent);

    const double row_err = (plan.gamma.rowwise().sum() - src.mass).cwiseAbs().maxCoeff();
    const double col_err = (plan.gamma.colwise().sum().transpose() - tgt.mass).cwiseAbs().maxCoeff();
    const bool nonneg = (plan.gamma.array() >= 0.0).all();
    const bool feas_ok = row_err <= 1e-9 && col_err <= 1e-9 && nonneg;
    feasible.detail.push_back({{"instance", inst}, {"row_error", row_err}, {"col_error", col_err}});
    feasible.passed = feasible.passed && feas_ok;

    const double cost = plan.cost();
    const PerturbationLaw law = perturbation_law(plan);
    const double power = law.expected_power(exponent);
    const double push_err = (pushforward_mass(plan) - tgt.mass).cwiseAbs().maxCoeff();
    const double law_sum_err = std::abs(law.mass.sum() - 1.0);
    const bool push_ok =
        push_err <= 1e-12 && law_sum_err <= 1e-9 && std::abs(power - cost) <= rel_tol(cost);
    pushforward.detail.push_back({{"instance", inst},
                                  {"pushforward_error", push_err},
                                  {"law_mass_error", law_sum_err},
                                  {"power_minus_cost", power - cost}});
    pushforward.passed = pushforward.passed && push_ok;

    double best_alt_cost = std::numeric_limits<double>::infinity();
    double best_alt_power = std::numeric_limits<double>::infinity();
    for (int a = 0; a < opt.alternative_plans; ++a) {
      const TransportPlan alt = random_feasible_plan(src, tgt, exponent, rng);
      best_alt_cost = std::min(best_alt_cost, alt.cost());
      best_alt_power = std::min(best_alt_power, perturbation_law(alt).expected_power(exponent));
    }
    const bool opt_ok = cost <= best_alt_cost + rel_tol(cost);
    const bool min_ok = power <= best_alt_power + rel_tol(power);
    optimal.detail.push_back({{"instance", inst},
                              {"size", {size[0], size[1]}},
                              {"optimal_cost", cost},
                              {"best_alternative_cost", best_alt_cost}});
    minimal.detail.push_back({{"instance", inst},
                              {"optimal_power", power},
                              {"best_alternative_power", best_alt_power}});
    optimal.passed = optimal.passed && opt_ok;
    minimal.passed = minimal.passed && min_ok;
  }
  out.push_back(std::move(feasible));
  out.push_back(std::move(optimal));
  out.push_back(std::move(pushforward));
  out.push_back(std::move(minimal));
}

SuiteCheck transport_loss_suite(const SuiteOptions& opt, std::mt19937_64& rng) {
  static constexpr PointLoss kLosses[] = {PointLoss::kSquared, PointLoss::kLinear,
                                          PointLoss::kCrossEntropy};
  SuiteCheck check{"transport_loss_equivalence", true, Json::array()};
  double worst = 0.0;
  for (int inst = 0; inst < opt.transport_instances; ++inst) {
    const Eigen::Index features = 2;
    const auto net = random_net(rng, features, 4);
    const auto src = random_distribution(rng, 3, features + 1, true);
    const auto tgt = random_distribution(rng, 3, features + 1, true);
    const PointLoss loss = kLosses[static_cast<std::size_t>(inst) % std::size(kLosses)];
    const TransportLossReport report = check_transport_loss(net, src, tgt, loss);
    worst = std::max(worst, report.gap);
    Json row = to_json(report);
    row["instance"] = inst;
    check.detail.push_back(row);
    check.passed = check.passed && report.gap <= 1e-10;
  }
  check.detail = {{"worst_gap", worst}, {"instances", check.detail}};
  return check;
}

// Target points are the source points nudged in both features and label, so
// the extracted law is small and the comparison stays in the first-order
// regime.
SuiteCheck weight_shift_suite(const SuiteOptions& opt, std::mt19937_64& rng) {
  static constexpr PointLoss kLosses[] = {PointLoss::kSquared, PointLoss::kLinear,
                                          PointLoss::kCrossEntropy};
  SuiteCheck check{"weight_shift_quadratic_decay", true, Json::array()};
  std::normal_distribution<double> nudge(0.0, 0.1);
  for (int inst = 0; inst < opt.weight_shift_instances; ++inst) {
    const auto net = random_net(rng, 1, 3);
    const auto src = random_distribution(rng, 3, 2, true);
    DiscreteDistribution tgt = src;
    for (auto& p : tgt.support) {
      p(0) += nudge(rng);
      p(1) += nudge(rng);
    }
    const PerturbationLaw law = perturbation_law(solve_ot(src, tgt, 2.0));
    const PointLoss loss = kLosses[static_cast<std::size_t>(inst) % std::size(kLosses)];
    const WeightShiftReport report = check_weight_shift(net, src, law, loss);
    Json row = to_json(report);
    row["instance"] = inst;
    check.detail.push_back(row);
    check.passed =
        check.passed && report.status == WeightShiftStatus::kOk && report.quadratic_decay;
  }
  return check;
}

SuiteCheck triangle_suite(const SuiteOptions& opt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  long violations = 0;
  for (long k = 0; k < opt.triangle_tuples; ++k) {
    const double a1 = u(rng), b1 = u(rng), a2 = u(rng), b2 = u(rng);
    if (!gap_triangle_check(a1, b1, a2, b2)) ++violations;
  }
  const bool fixed = gap_triangle_check(1, 0, 0, 1) && gap_triangle_check(5, 2, 5, 2);
  return {"gap_triangle",
          violations == 0 && fixed,
          {{"tuples", opt.triangle_tuples}, {"violations", violations}}};
}

}  // namespace

std::vector<SuiteCheck> run_theory_suite(const SuiteOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<SuiteCheck> out;
  out.push_back(ot_examples());
  ot_random(options, rng, out);
  out.push_back(transport_loss_suite(options, rng));
  out.push_back(weight_shift_suite(options, rng));
  out.push_back(triangle_suite(options, rng));
  return out;
}

}  // namespace rfr::theory
