#include "rfr/theory.hpp"

#include "rfr/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>

namespace rfr::theory {
namespace {

constexpr double kMassTol = 1e-12;
constexpr double kMergeTol = 1e-12;

bool same_point(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double tol) {
  return a.size() == b.size() && (a - b).cwiseAbs().maxCoeff() <= tol;
}

void require_compatible(const DiscreteDistribution& src, const DiscreteDistribution& tgt) {
  src.validate();
  tgt.validate();
  if (src.dim() != tgt.dim()) {
    fail(ErrorKind::kValidation, "source and target supports differ in dimension");
  }
}

Eigen::MatrixXd cost_matrix(const DiscreteDistribution& src, const DiscreteDistribution& tgt,
                            double exponent) {
  Eigen::MatrixXd c(src.size(), tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      c(i, j) = ground_cost(src.support[i], tgt.support[j], exponent);
    }
  }
  return c;
}

// Spanning-tree basis of the transportation polytope. Node r < m is a row,
// node m + c a column; every basic cell is a tree edge.
class TransportSimplex {
 public:
  TransportSimplex(Eigen::VectorXd supply, Eigen::VectorXd demand, Eigen::MatrixXd cost)
      : m_(static_cast<int>(supply.size())),
        n_(static_cast<int>(demand.size())),
        supply_(std::move(supply)),
        demand_(std::move(demand)),
        cost_(std::move(cost)),
        flow_(Eigen::MatrixXd::Zero(m_, n_)) {
    northwest_corner();
  }

  void solve() {
    const double scale = std::max(1.0, cost_.cwiseAbs().maxCoeff());
    const double tol = 1e-12 * scale;
    const long budget = 200L * (m_ + n_) * (m_ + n_) + 1000;
    int degenerate_run = 0;
    for (long it = 0; it < budget; ++it) {
      compute_potentials();
      // Dantzig pricing, falling back to Bland's rule after a run of
      // degenerate pivots so the method cannot cycle.
      const bool bland = degenerate_run > m_ + n_;
      int ei = -1, ej = -1;
      double best = -tol;
      for (int i = 0; i < m_ && !(bland && ei >= 0); ++i) {
        for (int j = 0; j < n_; ++j) {
          if (basic_(i, j)) continue;
          const double r = cost_(i, j) - u_(i) - v_(j);
          if (r < best) {
            best = r;
            ei = i;
            ej = j;
            if (bland) break;
          }
        }
      }
      if (ei < 0) return;
      const bool moved = pivot(ei, ej);
      degenerate_run = moved ? 0 : degenerate_run + 1;
      ++pivots_;
    }
    fail(ErrorKind::kNumeric, "transportation simplex exceeded its pivot budget");
  }

  Eigen::MatrixXd plan() const { return flow_.cwiseMax(0.0); }
  const Eigen::VectorXd& u() const { return u_; }
  const Eigen::VectorXd& v() const { return v_; }
  int pivots() const { return pivots_; }

 private:
  void add_basic(int i, int j, double x) {
    basic_(i, j) = true;
    flow_(i, j) = x;
    cells_.emplace_back(i, j);
  }

  void northwest_corner() {
    basic_ = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m_, n_, false);
    Eigen::VectorXd s = supply_;
    Eigen::VectorXd d = demand_;
    int i = 0, j = 0;
    while (true) {
      if (i == m_ - 1 && j == n_ - 1) {
        add_basic(i, j, std::max(0.0, std::min(s(i), d(j))));
        break;
      }
      const bool row_done = (j == n_ - 1) || (i < m_ - 1 && s(i) <= d(j));
      const double x = row_done ? s(i) : d(j);
      add_basic(i, j, std::max(0.0, x));
      if (row_done) {
        d(j) -= x;
        s(i) = 0.0;
        ++i;
      } else {
        s(i) -= x;
        d(j) = 0.0;
        ++j;
      }
    }
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(m_ + n_);
    for (int e = 0; e < static_cast<int>(cells_.size()); ++e) {
      adj[cells_[e].first].push_back(e);
      adj[m_ + cells_[e].second].push_back(e);
    }
    return adj;
  }

  int other_end(int e, int node) const {
    const auto [r, c] = cells_[e];
    return node == r ? m_ + c : r;
  }

  void compute_potentials() {
    u_ = Eigen::VectorXd::Zero(m_);
    v_ = Eigen::VectorXd::Zero(n_);
    const auto adj = adjacency();
    std::vector<char> seen(m_ + n_, 0);
    std::deque<int> queue{0};
    seen[0] = 1;
    while (!queue.empty()) {
      const int node = queue.front();
      queue.pop_front();
      for (int e : adj[node]) {
        const int next = other_end(e, node);
        if (seen[next]) continue;
        seen[next] = 1;
        const auto [r, c] = cells_[e];
        if (next >= m_) {
          v_(c) = cost_(r, c) - u_(r);
        } else {
          u_(r) = cost_(r, c) - v_(c);
        }
        queue.push_back(next);
      }
    }
  }

  // Tree path from column node of j to row node i, as edges ordered from i.
  std::vector<int> tree_path(int i, int j) const {
    const auto adj = adjacency();
    std::vector<int> parent_edge(m_ + n_, -1);
    std::vector<char> seen(m_ + n_, 0);
    const int start = m_ + j;
    std::deque<int> queue{start};
    seen[start] = 1;
    while (!queue.empty() && !seen[i]) {
      const int node = queue.front();
      queue.pop_front();
      for (int e : adj[node]) {
        const int next = other_end(e, node);
        if (seen[next]) continue;
        seen[next] = 1;
        parent_edge[next] = e;
        queue.push_back(next);
      }
    }
    std::vector<int> path;
    for (int node = i; node != start;) {
      const int e = parent_edge[node];
      path.push_back(e);
      node = other_end(e, node);
    }
    return path;
  }

  // Returns whether the flow moved (false for a degenerate pivot).
  bool pivot(int ei, int ej) {
    const std::vector<int> path = tree_path(ei, ej);
    // Signs alternate starting with '-' next to the entering cell.
    double theta = std::numeric_limits<double>::infinity();
    int leave = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const double x = flow_(cells_[path[k]].first, cells_[path[k]].second);
      if (leave < 0 || x < theta || (x == theta && cells_[path[k]] < cells_[leave])) {
        theta = x;
        leave = path[k];
      }
    }
    theta = std::max(0.0, theta);
    for (std::size_t k = 0; k < path.size(); ++k) {
      const auto [r, c] = cells_[path[k]];
      flow_(r, c) += (k % 2 == 0) ? -theta : theta;
    }
    const auto [lr, lc] = cells_[leave];
    basic_(lr, lc) = false;
    flow_(lr, lc) = 0.0;
    cells_[leave] = {ei, ej};
    basic_(ei, ej) = true;
    flow_(ei, ej) = theta;
    return theta > 0.0;
  }

  int m_, n_;
  Eigen::VectorXd supply_, demand_;
  Eigen::MatrixXd cost_;
  Eigen::MatrixXd flow_;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> basic_;
  std::vector<std::pair<int, int>> cells_;
  Eigen::VectorXd u_, v_;
  int pivots_ = 0;
};

Eigen::MatrixXd features_of(const std::vector<Eigen::VectorXd>& points) {
  const Eigen::Index d = points.front().size() - 1;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(points.size()), d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = points[i].head(d).transpose();
  }
  return x;
}

double expected_loss(const nn::ModelParams& params, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& y, const Eigen::VectorXd& weight, PointLoss loss) {
  const Eigen::VectorXd f = nn::forward(params, x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (weight(i) != 0.0) total += weight(i) * point_loss(loss, f(i), y(i));
  }
  return total;
}

void require_labelled(const nn::ModelParams& params, const DiscreteDistribution& dist) {
  if (dist.dim() != params.input_dim() + 1) {
    std::ostringstream msg;
    msg << "labelled points need " << params.input_dim() + 1 << " coordinates, got "
        << dist.dim();
    fail(ErrorKind::kShape, msg.str());
  }
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

DiscreteDistribution DiscreteDistribution::point_mass(Eigen::VectorXd at) {
  DiscreteDistribution d;
  d.support.push_back(std::move(at));
  d.mass = Eigen::VectorXd::Ones(1);
  return d;
}

DiscreteDistribution DiscreteDistribution::scalar(std::vector<double> points,
                                                  std::vector<double> masses) {
  if (points.size() != masses.size()) {
    fail(ErrorKind::kShape, "support and mass lengths differ");
  }
  DiscreteDistribution d;
  for (double p : points) d.support.push_back(Eigen::VectorXd::Constant(1, p));
  d.mass = Eigen::Map<Eigen::VectorXd>(masses.data(), static_cast<Eigen::Index>(masses.size()));
  return d;
}

void DiscreteDistribution::validate() const {
  if (support.empty()) fail(ErrorKind::kValidation, "distribution has empty support");
  if (mass.size() != static_cast<Eigen::Index>(support.size())) {
    fail(ErrorKind::kValidation, "support and mass lengths differ");
  }
  const Eigen::Index d = support.front().size();
  for (const auto& p : support) {
    if (p.size() != d || d == 0) fail(ErrorKind::kValidation, "support points differ in dimension");
    if (!p.allFinite()) fail(ErrorKind::kValidation, "support point is not finite");
  }
  if (!mass.allFinite() || (mass.array() < 0.0).any()) {
    fail(ErrorKind::kValidation, "masses must be finite and nonnegative");
  }
  if (std::abs(mass.sum() - 1.0) > kMassTol) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "infeasible marginals: masses sum to " << mass.sum();
    fail(ErrorKind::kValidation, msg.str());
  }
  for (std::size_t i = 0; i < support.size(); ++i) {
    for (std::size_t j = i + 1; j < support.size(); ++j) {
      if (support[i] == support[j]) fail(ErrorKind::kValidation, "support points must be distinct");
    }
  }
}

double ground_cost(const Eigen::VectorXd& s, const Eigen::VectorXd& t, double exponent) {
  return std::pow((s - t).norm(), exponent);
}

double TransportPlan::cost() const {
  double total = 0.0;
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
    for (Eigen::Index j = 0; j < gamma.cols(); ++j) {
      if (gamma(i, j) != 0.0) {
        total += gamma(i, j) * ground_cost(source.support[i], target.support[j], cost_exponent);
      }
    }
  }
  return total;
}

void TransportPlan::validate(double tol) const {
  if (gamma.rows() != static_cast<Eigen::Index>(source.size()) ||
      gamma.cols() != static_cast<Eigen::Index>(target.size())) {
    fail(ErrorKind::kValidation, "plan shape does not match the supports");
  }
  if (!(cost_exponent > 0.0)) fail(ErrorKind::kValidation, "cost exponent must be positive");
  if (!gamma.allFinite() || (gamma.array() < 0.0).any()) {
    fail(ErrorKind::kValidation, "plan entries must be finite and nonnegative");
  }
  const double row_err = (gamma.rowwise().sum() - source.mass).cwiseAbs().maxCoeff();
  const double col_err = (gamma.colwise().sum().transpose() - target.mass).cwiseAbs().maxCoeff();
  if (row_err > tol || col_err > tol) {
    std::ostringstream msg;
    msg << "plan marginals off by " << std::max(row_err, col_err);
    fail(ErrorKind::kValidation, msg.str());
  }
}

OtSolution solve_ot_certified(const DiscreteDistribution& src, const DiscreteDistribution& tgt,
                              double exponent) {
  if (!(exponent > 0.0) || !std::isfinite(exponent)) {
    fail(ErrorKind::kValidation, "cost exponent must be positive and finite");
  }
  require_compatible(src, tgt);
  TransportSimplex simplex(src.mass, tgt.mass, cost_matrix(src, tgt, exponent));
  simplex.solve();
  OtSolution out;
  out.plan.gamma = simplex.plan();
  out.plan.cost_exponent = exponent;
  out.plan.source = src;
  out.plan.target = tgt;
  out.row_potential = simplex.u();
  out.col_potential = simplex.v();
  out.pivots = simplex.pivots();
  return out;
}

TransportPlan solve_ot(const DiscreteDistribution& src, const DiscreteDistribution& tgt,
                       double exponent) {
  return solve_ot_certified(src, tgt, exponent).plan;
}

TransportPlan random_feasible_plan(const DiscreteDistribution& src,
                                   const DiscreteDistribution& tgt, double exponent,
                                   std::mt19937_64& rng) {
  require_compatible(src, tgt);
  const Eigen::Index m = src.mass.size();
  const Eigen::Index n = tgt.mass.size();
  std::uniform_real_distribution<double> unit(1e-3, 1.0);
  std::uniform_real_distribution<double> sharpness(0.5, 12.0);
  const double power = sharpness(rng);
  Eigen::MatrixXd k(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      k(i, j) = (src.mass(i) > 0.0 && tgt.mass(j) > 0.0) ? std::pow(unit(rng), power) : 0.0;
    }
  }
  for (int it = 0; it < 100000; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = k.row(i).sum();
      if (s > 0.0) k.row(i) *= src.mass(i) / s;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double s = k.col(j).sum();
      if (s > 0.0) k.col(j) *= tgt.mass(j) / s;
    }
    if ((k.rowwise().sum() - src.mass).cwiseAbs().maxCoeff() <= 1e-13) break;
  }
  TransportPlan plan{k, exponent, src, tgt};
  plan.validate();
  return plan;
}

double PerturbationLaw::expected_power(double exponent) const {
  double total = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) {
    total += mass(static_cast<Eigen::Index>(k)) * std::pow(support[k].norm(), exponent);
  }
  return total;
}

Eigen::VectorXd PerturbationLaw::mean() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(support.empty() ? 0 : support.front().size());
  for (std::size_t k = 0; k < support.size(); ++k) {
    out += mass(static_cast<Eigen::Index>(k)) * support[k];
  }
  return out;
}

PerturbationLaw perturbation_law(const TransportPlan& plan) {
  plan.validate();
  PerturbationLaw law;
  std::vector<double> mass;
  for (Eigen::Index i = 0; i < plan.gamma.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.gamma.cols(); ++j) {
      const double g = plan.gamma(i, j);
      if (g == 0.0) continue;
      Eigen::VectorXd delta = plan.target.support[j] - plan.source.support[i];
      auto hit = std::find_if(law.support.begin(), law.support.end(), [&](const auto& d) {
        return same_point(d, delta, kMergeTol);
      });
      if (hit == law.support.end()) {
        law.support.push_back(std::move(delta));
        mass.push_back(g);
      } else {
        mass[static_cast<std::size_t>(hit - law.support.begin())] += g;
      }
    }
  }
  law.mass = Eigen::Map<Eigen::VectorXd>(mass.data(), static_cast<Eigen::Index>(mass.size()));
  return law;
}

Eigen::VectorXd pushforward_mass(const TransportPlan& plan) {
  plan.validate();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(plan.gamma.cols());
  for (Eigen::Index i = 0; i < plan.gamma.rows(); ++i) {
    const double ps = plan.source.mass(i);
    if (ps == 0.0) continue;
    const Eigen::VectorXd& s = plan.source.support[i];
    for (Eigen::Index j = 0; j < plan.gamma.cols(); ++j) {
      const double conditional = plan.gamma(i, j) / ps;
      if (conditional == 0.0) continue;
      const Eigen::VectorXd landed = s + (plan.target.support[j] - s);
      auto hit = std::find_if(plan.target.support.begin(), plan.target.support.end(),
                              [&](const auto& t) { return same_point(t, landed, kMergeTol); });
      if (hit == plan.target.support.end()) {
        fail(ErrorKind::kValidation, "displacement lands outside the target support");
      }
      out(hit - plan.target.support.begin()) += ps * conditional;
    }
  }
  return out;
}

std::string_view to_string(PointLoss loss) {
  switch (loss) {
    case PointLoss::kSquared: return "squared";
    case PointLoss::kLinear: return "linear";
    case PointLoss::kCrossEntropy: return "cross-entropy";
  }
  return "unknown";
}

double point_loss(PointLoss loss, double f, double y) {
  switch (loss) {
    case PointLoss::kSquared: return (f - y) * (f - y);
    case PointLoss::kLinear: return -y * f - (1.0 - y) * (1.0 - f);
    case PointLoss::kCrossEntropy: {
      const double c = std::clamp(f, 1e-15, 1.0 - 1e-15);
      return -y * std::log(c) - (1.0 - y) * std::log1p(-c);
    }
  }
  return 0.0;
}

double point_loss_df(PointLoss loss, double f, double y) {
  switch (loss) {
    case PointLoss::kSquared: return 2.0 * (f - y);
    case PointLoss::kLinear: return 1.0 - 2.0 * y;
    case PointLoss::kCrossEntropy: {
      const double c = std::clamp(f, 1e-15, 1.0 - 1e-15);
      return -y / c + (1.0 - y) / (1.0 - c);
    }
  }
  return 0.0;
}

double point_loss_dy(PointLoss loss, double f, double y) {
  switch (loss) {
    case PointLoss::kSquared: return -2.0 * (f - y);
    case PointLoss::kLinear: return 1.0 - 2.0 * f;
    case PointLoss::kCrossEntropy: {
      const double c = std::clamp(f, 1e-15, 1.0 - 1e-15);
      return -std::log(c) + std::log1p(-c);
    }
  }
  return 0.0;
}

TransportLossReport check_transport_loss(const nn::ModelParams& params,
                                  const DiscreteDistribution& src,
                                  const DiscreteDistribution& tgt, PointLoss loss,
                                  double cost_exponent) {
  require_labelled(params, src);
  require_labelled(params, tgt);
  const TransportPlan plan = solve_ot(src, tgt, cost_exponent);
  const Eigen::Index d = params.input_dim();

  TransportLossReport report;
  report.loss = loss;
  report.source_points = src.size();
  report.target_points = tgt.size();
  report.plan_cost = plan.cost();

  Eigen::VectorXd ty(static_cast<Eigen::Index>(tgt.size()));
  for (std::size_t j = 0; j < tgt.size(); ++j) ty(static_cast<Eigen::Index>(j)) = tgt.support[j](d);
  report.target_loss = expected_loss(params, features_of(tgt.support), ty, tgt.mass, loss);

  // Every (s, delta) pair with positive plan mass, moved by delta.
  std::vector<Eigen::VectorXd> moved;
  std::vector<double> weight;
  for (Eigen::Index i = 0; i < plan.gamma.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.gamma.cols(); ++j) {
      if (plan.gamma(i, j) == 0.0) continue;
      const Eigen::VectorXd delta = tgt.support[j] - src.support[i];
      moved.push_back(src.support[i] + delta);
      weight.push_back(plan.gamma(i, j));
    }
  }
  Eigen::VectorXd my(static_cast<Eigen::Index>(moved.size()));
  for (std::size_t k = 0; k < moved.size(); ++k) my(static_cast<Eigen::Index>(k)) = moved[k](d);
  report.perturbed_source_loss =
      expected_loss(params, features_of(moved), my,
                    Eigen::Map<Eigen::VectorXd>(weight.data(), static_cast<Eigen::Index>(weight.size())),
                    loss);
  report.gap = std::abs(report.target_loss - report.perturbed_source_loss);
  return report;
}

std::string_view to_string(LabelChannel channel) {
  switch (channel) {
    case LabelChannel::kLossDirect: return "loss-direct";
    case LabelChannel::kModelOutput: return "model-output";
  }
  return "unknown";
}

std::string_view to_string(WeightShiftStatus status) {
  switch (status) {
    case WeightShiftStatus::kOk: return "ok";
    case WeightShiftStatus::kZeroPerturbation: return "zero-perturbation";
    case WeightShiftStatus::kZeroFirstOrder: return "zero-first-order";
    case WeightShiftStatus::kUnrepresentable: return "unrepresentable at first order";
  }
  return "unknown";
}

WeightShiftReport check_weight_shift(const nn::ModelParams& params, const DiscreteDistribution& src,
                              const PerturbationLaw& law, PointLoss loss, LabelChannel channel,
                              std::vector<double> scales, double ratio_bound) {
  src.validate();
  require_labelled(params, src);
  if (law.support.empty() || law.mass.size() != static_cast<Eigen::Index>(law.support.size())) {
    fail(ErrorKind::kValidation, "perturbation law is empty or malformed");
  }
  if (std::abs(law.mass.sum() - 1.0) > 1e-9) {
    fail(ErrorKind::kValidation, "perturbation law masses must sum to 1");
  }
  for (const auto& delta : law.support) {
    if (delta.size() != src.dim()) {
      fail(ErrorKind::kShape, "perturbation and source points differ in dimension");
    }
  }
  for (double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) fail(ErrorKind::kValidation, "scales must lie in (0, 1]");
  }

  const Eigen::Index d = params.input_dim();
  const Eigen::Index n = static_cast<Eigen::Index>(src.size());
  const Eigen::MatrixXd x = features_of(src.support);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = src.support[i](d);

  const nn::ForwardPass pass(params, x);
  const Eigen::VectorXd& f = pass.predictions();
  Eigen::VectorXd w(n);
  double label_coef = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i) = src.mass(i) * point_loss_df(loss, f(i), y(i));
    if (channel == LabelChannel::kLossDirect) {
      label_coef += src.mass(i) * point_loss_dy(loss, f(i), y(i));
    }
  }
  const Eigen::VectorXd g = pass.backward(w);
  const Eigen::VectorXd feature_coef = pass.input_gradient().transpose() * w;

  WeightShiftReport report;
  report.channel = channel;
  report.loss = loss;
  report.scales = scales;
  report.ratio_bound = ratio_bound;
  report.param_grad_norm = g.norm();

  double data_scale = 0.0;
  bool all_zero = true;
  for (std::size_t k = 0; k < law.support.size(); ++k) {
    const Eigen::VectorXd& delta = law.support[k];
    const double pk = law.mass(static_cast<Eigen::Index>(k));
    const double term = feature_coef.dot(delta.head(d)) + label_coef * delta(d);
    report.data_term += pk * term;
    data_scale += pk * (std::abs(feature_coef.dot(delta.head(d))) + std::abs(label_coef * delta(d)));
    if (pk != 0.0 && !delta.isZero(0.0)) all_zero = false;
  }

  const double grad_scale = pass.backward(w.cwiseAbs()).norm();
  report.delta_theta = Eigen::VectorXd::Zero(g.size());
  if (all_zero) {
    report.status = WeightShiftStatus::kZeroPerturbation;
  } else if (std::abs(report.data_term) <= 1e-12 * data_scale) {
    report.status = WeightShiftStatus::kZeroFirstOrder;
  } else if (report.param_grad_norm <= 1e-13 * grad_scale || report.param_grad_norm == 0.0) {
    report.status = WeightShiftStatus::kUnrepresentable;
  } else {
    report.status = WeightShiftStatus::kOk;
    report.delta_theta = (report.data_term / g.squaredNorm()) * g;
  }

  // Data side: every (source point, displacement) pair.
  const Eigen::Index kk = static_cast<Eigen::Index>(law.support.size());
  Eigen::MatrixXd big_x(n * kk, d);
  Eigen::VectorXd big_y(n * kk);
  Eigen::VectorXd big_w(n * kk);
  const Eigen::VectorXd base = params.flatten();
  for (double s : scales) {
    for (Eigen::Index k = 0; k < kk; ++k) {
      const Eigen::VectorXd& delta = law.support[static_cast<std::size_t>(k)];
      for (Eigen::Index i = 0; i < n; ++i) {
        big_x.row(k * n + i) = x.row(i) + s * delta.head(d).transpose();
        big_y(k * n + i) = y(i) + s * delta(d);
        big_w(k * n + i) = law.mass(k) * src.mass(i);
      }
    }
    const double data_side = expected_loss(params, big_x, big_y, big_w, loss);
    const nn::ModelParams moved = params.unflatten(base + s * report.delta_theta);
    const double weight_side = expected_loss(moved, x, y, src.mass, loss);
    report.mismatches.push_back(std::abs(data_side - weight_side));
  }
  report.quadratic_decay = true;
  for (std::size_t k = 0; k + 1 < report.mismatches.size(); ++k) {
    const double a = report.mismatches[k];
    const double b = report.mismatches[k + 1];
    const double ratio = a > 0.0 ? b / a : (b > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    report.ratios.push_back(ratio);
    if (!(ratio <= ratio_bound)) report.quadratic_decay = false;
  }
  return report;
}

bool gap_triangle_check(double a1, double b1, double a2, double b2) {
  const double lhs = std::abs(std::abs(a1 - b1) - std::abs(a2 - b2));
  const double rhs = std::abs(a1 - a2) + std::abs(b1 - b2);
  const double slack = 4.0 * std::numeric_limits<double>::epsilon() *
                       (std::abs(a1) + std::abs(a2) + std::abs(b1) + std::abs(b2));
  return lhs <= rhs + slack;
}

nlohmann::json to_json(const DiscreteDistribution& dist) {
  nlohmann::json support = nlohmann::json::array();
  for (const auto& p : dist.support) support.push_back(vector_json(p));
  return {{"support", support}, {"mass", vector_json(dist.mass)}};
}

nlohmann::json to_json(const TransportLossReport& report) {
  return {{"loss", to_string(report.loss)},
          {"source_points", report.source_points},
          {"target_points", report.target_points},
          {"target_loss", report.target_loss},
          {"perturbed_source_loss", report.perturbed_source_loss},
          {"gap", report.gap},
          {"plan_cost", report.plan_cost}};
}

nlohmann::json to_json(const WeightShiftReport& report) {
  return {{"status", to_string(report.status)},
          {"label_channel", to_string(report.channel)},
          {"loss", to_string(report.loss)},
          {"data_term", report.data_term},
          {"param_grad_norm", report.param_grad_norm},
          {"delta_theta_norm", report.delta_theta.norm()},
          {"scales", report.scales},
          {"mismatches", report.mismatches},
          {"ratios", report.ratios},
          {"ratio_bound", report.ratio_bound},
          {"quadratic_decay", report.quadratic_decay}};
}

}  // namespace rfr::theory
