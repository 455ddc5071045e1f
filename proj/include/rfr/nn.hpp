#ifndef RFR_NN_HPP_
#define RFR_NN_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rfr::nn {

// Hidden layers use a rectifier, the single output unit a logistic, so every
// prediction is a probability.
struct Architecture {
  Eigen::Index input_dim = 0;
  std::vector<Eigen::Index> hidden;
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

class ModelParams {
 public:
  ModelParams() = default;
  // Throws kShape unless consecutive layers chain and the last has one output.
  explicit ModelParams(std::vector<Layer> layers);

  static ModelParams zeros(const Architecture& arch);
  // Uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
  static ModelParams glorot(const Architecture& arch, std::uint64_t seed);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t depth() const { return layers_.size(); }
  Eigen::Index input_dim() const;
  Eigen::Index parameter_count() const;
  Architecture architecture() const;

  // Layer by layer: weight in column-major order, then bias.
  Eigen::VectorXd flatten() const;
  // Same shape as *this, values from flat. Throws kShape on length mismatch.
  ModelParams unflatten(const Eigen::VectorXd& flat) const;
  // 1 on weight coordinates, 0 on bias coordinates, flattened order.
  Eigen::VectorXd weight_mask() const;

  bool operator==(const ModelParams& other) const;

 private:
  std::vector<Layer> layers_;
};

enum class GradOrigin { kClassification, kDp, kGroupMean, kRfr, kCombined };

std::string_view to_string(GradOrigin origin);

struct GradientVector {
  Eigen::VectorXd values;
  GradOrigin origin = GradOrigin::kCombined;
  int group = -1;  // set for kGroupMean

  std::string tag() const;
};

// A differentiable scalar of the prediction vector. sensitivity() returns
// d(value)/d(pred_i) for every row.
class ScalarObjective {
 public:
  virtual ~ScalarObjective() = default;
  virtual double value(const Eigen::VectorXd& pred) const = 0;
  virtual Eigen::VectorXd sensitivity(const Eigen::VectorXd& pred) const = 0;
};

// Mean prediction over a subset of rows. Throws kEmptyBatch on evaluation
// when the subset is empty.
class MeanPrediction final : public ScalarObjective {
 public:
  explicit MeanPrediction(std::vector<Eigen::Index> rows);
  static MeanPrediction all(Eigen::Index n);

  double value(const Eigen::VectorXd& pred) const override;
  Eigen::VectorXd sensitivity(const Eigen::VectorXd& pred) const override;

 private:
  std::vector<Eigen::Index> rows_;
};

// Sum of w_i * pred_i; zero weights give a constant objective.
class WeightedSum final : public ScalarObjective {
 public:
  explicit WeightedSum(Eigen::VectorXd weights) : weights_(std::move(weights)) {}
  double value(const Eigen::VectorXd& pred) const override;
  Eigen::VectorXd sensitivity(const Eigen::VectorXd& pred) const override;

 private:
  Eigen::VectorXd weights_;
};

Eigen::VectorXd forward(const ModelParams& params, const Eigen::MatrixXd& x);

// A recorded forward pass that can be differentiated several times with
// different output sensitivities. Keeps a pointer to params, which must
// outlive the pass.
class ForwardPass {
 public:
  ForwardPass(const ModelParams& params, const Eigen::MatrixXd& x);

  const Eigen::VectorXd& predictions() const { return pred_; }
  Eigen::Index rows() const { return pred_.size(); }

  // Gradient of sum_i sensitivity_i * pred_i w.r.t. the flat parameters.
  Eigen::VectorXd backward(const Eigen::VectorXd& sensitivity) const;
  // d pred_i / d x, n x d.
  Eigen::MatrixXd input_gradient() const;

 private:
  const ModelParams* params_;
  std::vector<Eigen::MatrixXd> inputs_;
  std::vector<Eigen::MatrixXd> pre_;
  Eigen::VectorXd pred_;
};

// Exact reverse-mode gradient of objective(forward(params, x)) w.r.t. the
// flattened parameters. Throws kEmptyBatch for a zero-row batch.
GradientVector backward_scalar(const ModelParams& params,
                               const Eigen::MatrixXd& x,
                               const ScalarObjective& objective,
                               GradOrigin origin, int group = -1);

// d f(x_i) / d x for every row, as an n x d matrix.
Eigen::MatrixXd input_gradient(const ModelParams& params,
                               const Eigen::MatrixXd& x);

// Returns params + eps; the input is left untouched.
ModelParams perturb(const ModelParams& params, const Eigen::VectorXd& eps);

struct AdamOptions {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step = 0;
  AdamOptions options;

  static OptimizerState for_params(const ModelParams& params,
                                   AdamOptions options);
};

// One Adam step with decoupled weight decay on weight coordinates only.
// Updates params and state in place. Throws kNumeric when the gradient has a
// non-finite entry, naming its origin.
void adam_step(OptimizerState& state, ModelParams& params,
               const GradientVector& grad);

}  // namespace rfr::nn

#endif  // RFR_NN_HPP_
