#include "rfr/losses.hpp"

#include "rfr/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace rfr::fair {
namespace {

constexpr double kProbFloor = 1e-15;

double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  }
  return out;
}

void require_groups(const Dataset& data) {
  if (data.rows() == 0) fail(ErrorKind::kEmptyBatch, "empty dataset");
  for (int g = 0; g < 2; ++g) {
    if (data.group_size(g) == 0) {
      fail(ErrorKind::kDegenerateGroup,
           "sensitive group " + std::to_string(g) + " is empty");
    }
  }
}

Eigen::VectorXd mean_sensitivity(Eigen::Index n) {
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

// Everything one update needs, evaluated on one batch at the current
// parameters.
struct StepEvaluation {
  LossBreakdown breakdown;
  Eigen::VectorXd base;      // grad clf + lambda grad dp
  Eigen::VectorXd rfr_grad;  // per cfg.rfr_form
};

StepEvaluation evaluate_step(const nn::ModelParams& params, const Dataset& batch,
                             const TrainConfig& cfg) {
  require_groups(batch);
  const nn::ForwardPass pass(params, batch.x);
  const Eigen::VectorXd& pred = pass.predictions();
  const ClassificationObjective clf(batch.y, cfg.variant);
  const DemographicParityObjective dp(batch.a);

  StepEvaluation out;
  Eigen::VectorXd sens = clf.sensitivity(pred);
  if (cfg.lambda != 0.0) sens += cfg.lambda * dp.sensitivity(pred);
  out.base = pass.backward(sens);

  double rfr[2] = {0.0, 0.0};
  out.rfr_grad = Eigen::VectorXd::Zero(params.parameter_count());
  for (int g = 0; g < 2; ++g) {
    const Eigen::MatrixXd xg = rows_of(batch.x, batch.group_indices(g));
    const nn::ForwardPass here(params, xg);
    const Eigen::VectorXd grad_here = here.backward(mean_sensitivity(xg.rows()));
    const DualNormSolution sol = dual_norm_epsilon(grad_here, cfg.perturbation);
    const nn::ModelParams moved = nn::perturb(params, sol.eps);
    const nn::ForwardPass there(moved, xg);
    const double gain = there.predictions().mean() - here.predictions().mean();
    rfr[g] = std::max(gain, 0.0);
    out.rfr_grad += there.backward(mean_sensitivity(xg.rows()));
    if (cfg.rfr_form == RfrGradientForm::kSharpness) out.rfr_grad -= grad_here;
  }
  out.breakdown = make_breakdown(clf.value(pred), dp.value(pred), rfr[0], rfr[1],
                                 cfg.lambda);
  return out;
}

// Stratified batches: each group is shuffled and dealt round-robin so every
// batch holds both groups.
std::vector<std::vector<Eigen::Index>> make_batches(const Dataset& data,
                                                    Eigen::Index batch_size,
                                                    std::mt19937_64& rng) {
  const Eigen::Index n = data.rows();
  if (batch_size <= 0 || batch_size >= n) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    return {all};
  }
  auto g0 = data.group_indices(0);
  auto g1 = data.group_indices(1);
  std::shuffle(g0.begin(), g0.end(), rng);
  std::shuffle(g1.begin(), g1.end(), rng);
  Eigen::Index count = (n + batch_size - 1) / batch_size;
  count = std::min<Eigen::Index>(
      count, std::min<Eigen::Index>(static_cast<Eigen::Index>(g0.size()),
                                    static_cast<Eigen::Index>(g1.size())));
  std::vector<std::vector<Eigen::Index>> batches(static_cast<std::size_t>(count));
  for (std::size_t k = 0; k < g0.size(); ++k) batches[k % batches.size()].push_back(g0[k]);
  for (std::size_t k = 0; k < g1.size(); ++k) batches[k % batches.size()].push_back(g1[k]);
  for (auto& b : batches) std::sort(b.begin(), b.end());
  return batches;
}

}  // namespace

std::string_view to_string(LossVariant variant) {
  switch (variant) {
    case LossVariant::kLinear: return "linear";
    case LossVariant::kCrossEntropy: return "cross-entropy";
  }
  return "unknown";
}

std::optional<LossVariant> parse_loss_variant(std::string_view text) {
  if (text == "linear") return LossVariant::kLinear;
  if (text == "cross-entropy" || text == "ce") return LossVariant::kCrossEntropy;
  return std::nullopt;
}

std::string_view to_string(RfrGradientForm form) {
  switch (form) {
    case RfrGradientForm::kSharpness: return "sharpness";
    case RfrGradientForm::kPerturbedOnly: return "perturbed-only";
  }
  return "unknown";
}

std::string_view to_string(UpdateRule rule) {
  switch (rule) {
    case UpdateRule::kDescendAll: return "descend-all";
    case UpdateRule::kLiteral: return "literal";
  }
  return "unknown";
}

bool PerturbationConfig::p_is_infinite() const { return std::isinf(p) && p > 0; }

double PerturbationConfig::q() const {
  if (p_is_infinite()) return 1.0;
  return p / (p - 1.0);
}

void PerturbationConfig::validate() const {
  if (!(rho >= 0.0) || std::isinf(rho)) {
    fail(ErrorKind::kValidation, "rho must be a finite nonnegative number");
  }
  if (!(p > 1.0)) fail(ErrorKind::kValidation, "p must exceed 1");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || std::isinf(lambda)) {
    fail(ErrorKind::kValidation, "lambda must be a finite nonnegative number");
  }
  if (epochs < 1) fail(ErrorKind::kValidation, "epochs must be at least 1");
  if (batch_size < 0) fail(ErrorKind::kValidation, "batch size must be nonnegative");
  if (!(adam.learning_rate > 0.0)) {
    fail(ErrorKind::kValidation, "learning rate must be positive");
  }
  perturbation.validate();
}

LossBreakdown make_breakdown(double clf, double dp, double rfr_s0, double rfr_s1,
                             double lambda) {
  LossBreakdown b;
  b.clf = clf;
  b.dp = dp;
  b.rfr_s0 = rfr_s0;
  b.rfr_s1 = rfr_s1;
  b.total = clf + lambda * (dp + rfr_s0 + rfr_s1);
  return b;
}

ClassificationObjective::ClassificationObjective(std::vector<int> labels,
                                                 LossVariant variant)
    : labels_(std::move(labels)), variant_(variant) {}

double ClassificationObjective::value(const Eigen::VectorXd& pred) const {
  if (pred.size() == 0) fail(ErrorKind::kEmptyBatch, "classification loss on an empty batch");
  if (static_cast<std::size_t>(pred.size()) != labels_.size()) {
    fail(ErrorKind::kShape, "label count does not match predictions");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double y = labels_[static_cast<std::size_t>(i)];
    const double f = pred(i);
    if (variant_ == LossVariant::kLinear) {
      sum += -y * f - (1.0 - y) * (1.0 - f);
    } else {
      const double fc = std::clamp(f, kProbFloor, 1.0 - kProbFloor);
      sum += -y * std::log(fc) - (1.0 - y) * std::log(1.0 - fc);
    }
  }
  return sum / static_cast<double>(pred.size());
}

Eigen::VectorXd ClassificationObjective::sensitivity(const Eigen::VectorXd& pred) const {
  if (pred.size() == 0) fail(ErrorKind::kEmptyBatch, "classification loss on an empty batch");
  if (static_cast<std::size_t>(pred.size()) != labels_.size()) {
    fail(ErrorKind::kShape, "label count does not match predictions");
  }
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  Eigen::VectorXd s(pred.size());
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double y = labels_[static_cast<std::size_t>(i)];
    if (variant_ == LossVariant::kLinear) {
      s(i) = (1.0 - 2.0 * y) * inv_n;
    } else {
      const double fc = std::clamp(pred(i), kProbFloor, 1.0 - kProbFloor);
      s(i) = (-y / fc + (1.0 - y) / (1.0 - fc)) * inv_n;
    }
  }
  return s;
}

DemographicParityObjective::DemographicParityObjective(std::vector<int> groups)
    : groups_(std::move(groups)) {
  std::size_t n0 = 0;
  std::size_t n1 = 0;
  for (int g : groups_) (g == 0 ? n0 : n1) += 1;
  if (n0 == 0 || n1 == 0) {
    fail(ErrorKind::kDegenerateGroup, "demographic parity needs both groups non-empty");
  }
  inv_n0_ = 1.0 / static_cast<double>(n0);
  inv_n1_ = 1.0 / static_cast<double>(n1);
}

double DemographicParityObjective::value(const Eigen::VectorXd& pred) const {
  double m0 = 0.0;
  double m1 = 0.0;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    (groups_[i] == 0 ? m0 : m1) += pred(static_cast<Eigen::Index>(i));
  }
  return std::abs(m0 * inv_n0_ - m1 * inv_n1_);
}

Eigen::VectorXd DemographicParityObjective::sensitivity(const Eigen::VectorXd& pred) const {
  double m0 = 0.0;
  double m1 = 0.0;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    (groups_[i] == 0 ? m0 : m1) += pred(static_cast<Eigen::Index>(i));
  }
  const double s = sign_of(m0 * inv_n0_ - m1 * inv_n1_);
  Eigen::VectorXd out(pred.size());
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = groups_[i] == 0 ? s * inv_n0_ : -s * inv_n1_;
  }
  return out;
}

double clf_loss(const nn::ModelParams& params, const Dataset& data, LossVariant variant) {
  if (data.rows() == 0) fail(ErrorKind::kEmptyBatch, "classification loss on an empty dataset");
  return ClassificationObjective(data.y, variant).value(nn::forward(params, data.x));
}

nn::GradientVector clf_gradient(const nn::ModelParams& params, const Dataset& data,
                                LossVariant variant) {
  return nn::backward_scalar(params, data.x, ClassificationObjective(data.y, variant),
                             nn::GradOrigin::kClassification);
}

double dp_loss(const nn::ModelParams& params, const Dataset& data) {
  const DemographicParityObjective dp(data.a);
  return dp.value(nn::forward(params, data.x));
}

nn::GradientVector dp_gradient(const nn::ModelParams& params, const Dataset& data) {
  return nn::backward_scalar(params, data.x, DemographicParityObjective(data.a),
                             nn::GradOrigin::kDp);
}

nn::GradientVector group_mean_gradient(const nn::ModelParams& params, const Dataset& data,
                                       int group) {
  const auto idx = data.group_indices(group);
  if (idx.empty()) {
    fail(ErrorKind::kDegenerateGroup, "sensitive group " + std::to_string(group) + " is empty");
  }
  const Eigen::MatrixXd xg = rows_of(data.x, idx);
  const nn::ForwardPass pass(params, xg);
  nn::GradientVector grad;
  grad.origin = nn::GradOrigin::kGroupMean;
  grad.group = group;
  grad.values = pass.backward(mean_sensitivity(xg.rows()));
  return grad;
}

double lp_norm(const Eigen::VectorXd& v, double p) {
  const double m = v.cwiseAbs().maxCoeff();
  if (v.size() == 0 || m == 0.0) return 0.0;
  if (std::isinf(p)) return m;
  if (p == 2.0) return v.norm();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sum += std::pow(std::abs(v(i)) / m, p);
  return m * std::pow(sum, 1.0 / p);
}

DualNormSolution dual_norm_epsilon(const Eigen::VectorXd& g, const PerturbationConfig& cfg) {
  cfg.validate();
  DualNormSolution out;
  out.eps = Eigen::VectorXd::Zero(g.size());
  const double scale = g.size() == 0 ? 0.0 : g.cwiseAbs().maxCoeff();
  if (!std::isfinite(scale)) fail(ErrorKind::kNumeric, "non-finite gradient in dual-norm step");
  if (scale == 0.0) {
    out.flat = true;
    return out;
  }
  if (cfg.rho == 0.0) return out;

  const Eigen::VectorXd u = g / scale;
  if (cfg.p_is_infinite()) {
    for (Eigen::Index i = 0; i < u.size(); ++i) out.eps(i) = cfg.rho * sign_of(u(i));
  } else if (cfg.p == 2.0) {
    out.eps = (cfg.rho / u.norm()) * u;
  } else {
    const double q = cfg.q();
    double sum_q = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) sum_q += std::pow(std::abs(u(i)), q);
    const double denom = std::pow(sum_q, 1.0 / cfg.p);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      out.eps(i) = cfg.rho * sign_of(u(i)) * std::pow(std::abs(u(i)), q - 1.0) / denom;
    }
  }
  return out;
}

RfrTerms rfr_terms(const nn::ModelParams& params, const Dataset& data,
                   const PerturbationConfig& cfg) {
  require_groups(data);
  RfrTerms out;
  for (int g = 0; g < 2; ++g) {
    const Eigen::MatrixXd xg = rows_of(data.x, data.group_indices(g));
    const nn::ForwardPass here(params, xg);
    const DualNormSolution sol =
        dual_norm_epsilon(here.backward(mean_sensitivity(xg.rows())), cfg);
    const double moved_mean = nn::forward(nn::perturb(params, sol.eps), xg).mean();
    const double value = std::max(moved_mean - here.predictions().mean(), 0.0);
    if (g == 0) {
      out.rfr_s0 = value;
      out.eps0 = sol.eps;
      out.flat0 = sol.flat;
    } else {
      out.rfr_s1 = value;
      out.eps1 = sol.eps;
      out.flat1 = sol.flat;
    }
  }
  return out;
}

nn::GradientVector rfr_gradient(const nn::ModelParams& params, const Dataset& data,
                                const PerturbationConfig& cfg) {
  require_groups(data);
  nn::GradientVector out;
  out.origin = nn::GradOrigin::kRfr;
  out.values = Eigen::VectorXd::Zero(params.parameter_count());
  for (int g = 0; g < 2; ++g) {
    const Eigen::MatrixXd xg = rows_of(data.x, data.group_indices(g));
    const Eigen::VectorXd g_here =
        nn::ForwardPass(params, xg).backward(mean_sensitivity(xg.rows()));
    const nn::ModelParams moved =
        nn::perturb(params, dual_norm_epsilon(g_here, cfg).eps);
    out.values += nn::ForwardPass(moved, xg).backward(mean_sensitivity(xg.rows()));
  }
  if (!out.values.allFinite()) fail(ErrorKind::kNumeric, "non-finite RFR gradient");
  return out;
}

TrainResult train(const Dataset& data, const nn::Architecture& arch,
                  const TrainConfig& cfg) {
  nn::Architecture resolved = arch;
  resolved.input_dim = data.cols();
  return train_from(data, nn::ModelParams::glorot(resolved, cfg.seed), cfg);
}

TrainResult train_from(const Dataset& data, nn::ModelParams init, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  require_groups(data);
  const auto positives = std::count(data.y.begin(), data.y.end(), 1);
  if (positives == 0 || positives == data.rows()) {
    fail(ErrorKind::kValidation, "training data must contain both label classes");
  }

  TrainResult result;
  result.params = std::move(init);
  nn::OptimizerState state = nn::OptimizerState::for_params(result.params, cfg.adam);
  // Batch shuffling draws from its own stream so init and order stay decoupled.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(data, cfg.batch_size, rng);
    LossBreakdown sum;
    try {
      for (const auto& rows : batches) {
        const bool full = rows.size() == static_cast<std::size_t>(data.rows());
        const StepEvaluation step =
            evaluate_step(result.params, full ? data : data.subset(rows), cfg);
        if (!std::isfinite(step.breakdown.total)) {
          fail(ErrorKind::kNumeric, "loss is non-finite");
        }
        sum.clf += step.breakdown.clf;
        sum.dp += step.breakdown.dp;
        sum.rfr_s0 += step.breakdown.rfr_s0;
        sum.rfr_s1 += step.breakdown.rfr_s1;

        nn::GradientVector grad;
        grad.origin = nn::GradOrigin::kCombined;
        if (cfg.lambda == 0.0) {
          grad.values = step.base;
          nn::adam_step(state, result.params, grad);
        } else if (cfg.update == UpdateRule::kDescendAll) {
          grad.values = step.base + cfg.lambda * step.rfr_grad;
          nn::adam_step(state, result.params, grad);
        } else {
          grad.values = step.base;
          nn::adam_step(state, result.params, grad);
          result.params = nn::perturb(result.params, cfg.lambda * step.rfr_grad);
        }
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      fail(ErrorKind::kNumeric,
           "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const double k = static_cast<double>(batches.size());
    result.trace.push_back(
        make_breakdown(sum.clf / k, sum.dp / k, sum.rfr_s0 / k, sum.rfr_s1 / k, cfg.lambda));
  }
  return result;
}

}  // namespace rfr::fair
