#include "rfr/nn.hpp"

#include "rfr/error.hpp"

#include <cmath>
#include <random>
#include <string>

namespace rfr::nn {
namespace {

double logistic(double z) {
  // Split by sign so exp never overflows.
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_input(const ModelParams& params, const Eigen::MatrixXd& x) {
  if (params.depth() == 0) fail(ErrorKind::kShape, "model has no layers");
  if (x.cols() != params.input_dim()) {
    fail(ErrorKind::kShape, "feature matrix has " + std::to_string(x.cols()) +
                                " columns, model expects " +
                                std::to_string(params.input_dim()));
  }
}

}  // namespace

ModelParams::ModelParams(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) fail(ErrorKind::kShape, "model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.bias.size() != layer.weight.rows()) {
      fail(ErrorKind::kShape, "layer " + std::to_string(l) +
                                  ": bias length does not match weight rows");
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      fail(ErrorKind::kShape, "layer " + std::to_string(l) +
                                  ": input width does not chain");
    }
  }
  if (layers_.back().weight.rows() != 1) {
    fail(ErrorKind::kShape, "output layer must have exactly one unit");
  }
}

ModelParams ModelParams::zeros(const Architecture& arch) {
  if (arch.input_dim <= 0) fail(ErrorKind::kShape, "input dimension must be positive");
  std::vector<Layer> layers;
  Eigen::Index in = arch.input_dim;
  for (Eigen::Index width : arch.hidden) {
    if (width <= 0) fail(ErrorKind::kShape, "hidden width must be positive");
    layers.push_back({Eigen::MatrixXd::Zero(width, in), Eigen::VectorXd::Zero(width)});
    in = width;
  }
  layers.push_back({Eigen::MatrixXd::Zero(1, in), Eigen::VectorXd::Zero(1)});
  return ModelParams(std::move(layers));
}

ModelParams ModelParams::glorot(const Architecture& arch, std::uint64_t seed) {
  ModelParams params = zeros(arch);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Layer& layer : params.layers_) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    // Column-major fill keeps the draw order aligned with flatten().
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) {
      layer.weight.data()[k] = limit * unit(rng);
    }
  }
  return params;
}

Eigen::Index ModelParams::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().weight.cols();
}

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const Layer& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Architecture ModelParams::architecture() const {
  Architecture arch;
  arch.input_dim = input_dim();
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    arch.hidden.push_back(layers_[l].weight.rows());
  }
  return arch;
}

Eigen::VectorXd ModelParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index offset = 0;
  for (const Layer& layer : layers_) {
    flat.segment(offset, layer.weight.size()) =
        Eigen::Map<const Eigen::VectorXd>(layer.weight.data(), layer.weight.size());
    offset += layer.weight.size();
    flat.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  return flat;
}

ModelParams ModelParams::unflatten(const Eigen::VectorXd& flat) const {
  if (flat.size() != parameter_count()) {
    fail(ErrorKind::kShape, "flat vector has length " + std::to_string(flat.size()) +
                                ", model has " + std::to_string(parameter_count()) +
                                " parameters");
  }
  ModelParams out = *this;
  Eigen::Index offset = 0;
  for (Layer& layer : out.layers_) {
    Eigen::Map<Eigen::VectorXd>(layer.weight.data(), layer.weight.size()) =
        flat.segment(offset, layer.weight.size());
    offset += layer.weight.size();
    layer.bias = flat.segment(offset, layer.bias.size());
    offset += layer.bias.size();
  }
  return out;
}

Eigen::VectorXd ModelParams::weight_mask() const {
  Eigen::VectorXd mask(parameter_count());
  Eigen::Index offset = 0;
  for (const Layer& layer : layers_) {
    mask.segment(offset, layer.weight.size()).setOnes();
    offset += layer.weight.size();
    mask.segment(offset, layer.bias.size()).setZero();
    offset += layer.bias.size();
  }
  return mask;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& a = layers_[l];
    const Layer& b = other.layers_[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) {
      return false;
    }
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

std::string_view to_string(GradOrigin origin) {
  switch (origin) {
    case GradOrigin::kClassification: return "classification";
    case GradOrigin::kDp: return "dp";
    case GradOrigin::kGroupMean: return "group-mean";
    case GradOrigin::kRfr: return "rfr";
    case GradOrigin::kCombined: return "combined";
  }
  return "unknown";
}

std::string GradientVector::tag() const {
  std::string out(to_string(origin));
  if (origin == GradOrigin::kGroupMean) out += "(" + std::to_string(group) + ")";
  return out;
}

MeanPrediction::MeanPrediction(std::vector<Eigen::Index> rows)
    : rows_(std::move(rows)) {}

MeanPrediction MeanPrediction::all(Eigen::Index n) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
  return MeanPrediction(std::move(rows));
}

double MeanPrediction::value(const Eigen::VectorXd& pred) const {
  if (rows_.empty()) fail(ErrorKind::kEmptyBatch, "mean over an empty subset");
  double sum = 0.0;
  for (Eigen::Index i : rows_) sum += pred(i);
  return sum / static_cast<double>(rows_.size());
}

Eigen::VectorXd MeanPrediction::sensitivity(const Eigen::VectorXd& pred) const {
  if (rows_.empty()) fail(ErrorKind::kEmptyBatch, "mean over an empty subset");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(pred.size());
  const double w = 1.0 / static_cast<double>(rows_.size());
  for (Eigen::Index i : rows_) s(i) += w;
  return s;
}

double WeightedSum::value(const Eigen::VectorXd& pred) const {
  if (pred.size() != weights_.size()) fail(ErrorKind::kShape, "weight length mismatch");
  return weights_.dot(pred);
}

Eigen::VectorXd WeightedSum::sensitivity(const Eigen::VectorXd& pred) const {
  if (pred.size() != weights_.size()) fail(ErrorKind::kShape, "weight length mismatch");
  return weights_;
}

ForwardPass::ForwardPass(const ModelParams& params, const Eigen::MatrixXd& x)
    : params_(&params) {
  check_input(params, x);
  Eigen::MatrixXd act = x;
  const auto& layers = params.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = act * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    inputs_.push_back(std::move(act));
    if (l + 1 < layers.size()) act = z.cwiseMax(0.0);
    pre_.push_back(std::move(z));
  }
  const Eigen::MatrixXd& out = pre_.back();
  pred_.resize(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) pred_(i) = logistic(out(i, 0));
}

Eigen::VectorXd ForwardPass::backward(const Eigen::VectorXd& sensitivity) const {
  if (sensitivity.size() != pred_.size()) {
    fail(ErrorKind::kShape, "sensitivity length does not match the batch");
  }
  const auto& layers = params_->layers();
  Eigen::VectorXd flat(params_->parameter_count());
  // Offsets of each layer's block in the flat vector.
  std::vector<Eigen::Index> offsets(layers.size());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offsets[l] = offset;
    offset += layers[l].weight.size() + layers[l].bias.size();
  }

  Eigen::MatrixXd delta =
      (sensitivity.array() * pred_.array() * (1.0 - pred_.array())).matrix();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Eigen::MatrixXd dw = delta.transpose() * inputs_[l];
    flat.segment(offsets[l], dw.size()) =
        Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
    flat.segment(offsets[l] + dw.size(), layers[l].bias.size()) =
        delta.colwise().sum().transpose();
    if (l == 0) break;
    const Eigen::MatrixXd back = delta * layers[l].weight;
    delta = (back.array() * (pre_[l - 1].array() > 0.0).cast<double>()).matrix();
  }
  return flat;
}

Eigen::MatrixXd ForwardPass::input_gradient() const {
  const auto& layers = params_->layers();
  Eigen::MatrixXd delta = (pred_.array() * (1.0 - pred_.array())).matrix();
  for (std::size_t l = layers.size(); l-- > 0;) {
    Eigen::MatrixXd back = delta * layers[l].weight;
    if (l == 0) return back;
    delta = (back.array() * (pre_[l - 1].array() > 0.0).cast<double>()).matrix();
  }
  return delta;
}

Eigen::VectorXd forward(const ModelParams& params, const Eigen::MatrixXd& x) {
  return ForwardPass(params, x).predictions();
}

GradientVector backward_scalar(const ModelParams& params, const Eigen::MatrixXd& x,
                               const ScalarObjective& objective, GradOrigin origin,
                               int group) {
  if (x.rows() == 0) fail(ErrorKind::kEmptyBatch, "backward pass on an empty batch");
  const ForwardPass pass(params, x);
  GradientVector grad;
  grad.origin = origin;
  grad.group = group;
  grad.values = pass.backward(objective.sensitivity(pass.predictions()));
  return grad;
}

Eigen::MatrixXd input_gradient(const ModelParams& params, const Eigen::MatrixXd& x) {
  if (x.rows() == 0) fail(ErrorKind::kEmptyBatch, "input gradient on an empty batch");
  return ForwardPass(params, x).input_gradient();
}

ModelParams perturb(const ModelParams& params, const Eigen::VectorXd& eps) {
  if (eps.size() != params.parameter_count()) {
    fail(ErrorKind::kShape, "perturbation has length " + std::to_string(eps.size()) +
                                ", model has " +
                                std::to_string(params.parameter_count()) + " parameters");
  }
  return params.unflatten(params.flatten() + eps);
}

OptimizerState OptimizerState::for_params(const ModelParams& params,
                                          AdamOptions options) {
  OptimizerState state;
  state.first_moment = Eigen::VectorXd::Zero(params.parameter_count());
  state.second_moment = Eigen::VectorXd::Zero(params.parameter_count());
  state.options = options;
  return state;
}

void adam_step(OptimizerState& state, ModelParams& params, const GradientVector& grad) {
  const Eigen::Index n = params.parameter_count();
  if (grad.values.size() != n || state.first_moment.size() != n ||
      state.second_moment.size() != n) {
    fail(ErrorKind::kShape, "optimizer, gradient and parameter lengths disagree");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(grad.values(i))) {
      fail(ErrorKind::kNumeric, "non-finite entry " + std::to_string(i) +
                                    " in gradient '" + grad.tag() + "'");
    }
  }
  const AdamOptions& opt = state.options;
  state.step += 1;
  state.first_moment = opt.beta1 * state.first_moment + (1.0 - opt.beta1) * grad.values;
  state.second_moment = opt.beta2 * state.second_moment +
                        (1.0 - opt.beta2) * grad.values.cwiseProduct(grad.values);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);

  Eigen::VectorXd theta = params.flatten();
  if (opt.weight_decay != 0.0) {
    const Eigen::VectorXd mask = params.weight_mask();
    theta -= opt.learning_rate * opt.weight_decay * theta.cwiseProduct(mask);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m_hat = state.first_moment(i) / bc1;
    const double v_hat = state.second_moment(i) / bc2;
    theta(i) -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
  }
  params = params.unflatten(theta);
}

}  // namespace rfr::nn
