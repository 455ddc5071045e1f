#include "rfr/shift.hpp"

#include "rfr/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace rfr::shift {
namespace {

constexpr double kAngleTol = 1e-10;
constexpr int kMaxIterations = 1000000;

void fix_sign(Eigen::VectorXd& v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0.0) v = -v;
}

// Angle between two unit vectors, accurate near zero.
double angle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return 2.0 * std::atan2((a - b).norm(), (a + b).norm());
}

Eigen::VectorXd log_gaussian(const Eigen::VectorXd& v, double mean, double sd) {
  const double norm = std::log(sd) + 0.5 * std::log(2.0 * std::numbers::pi);
  return (-(v.array() - mean).square() / (2.0 * sd * sd) - norm).matrix();
}

}  // namespace

PcaProjection first_pc(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (n < 2 || d < 1) {
    fail(ErrorKind::kSize, "principal component needs at least 2 rows and 1 column");
  }
  if (!features.allFinite()) fail(ErrorKind::kValidation, "non-finite feature value");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  const Eigen::MatrixXd centered = features.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);

  Eigen::Index start = 0;
  const double top_var = cov.diagonal().maxCoeff(&start);
  if (!(top_var > 0.0)) fail(ErrorKind::kDegenerateVariance, "features have zero variance");

  PcaProjection out;
  Eigen::VectorXd v = cov.col(start).normalized();
  fix_sign(v);
  for (int it = 1; it <= kMaxIterations; ++it) {
    Eigen::VectorXd next = cov * v;
    const double len = next.norm();
    if (!(len > 0.0) || !std::isfinite(len)) {
      fail(ErrorKind::kNumeric, "power iteration collapsed");
    }
    next /= len;
    fix_sign(next);
    const double step = angle(v, next);
    v = std::move(next);
    if (step <= kAngleTol) {
      out.iterations = it;
      break;
    }
    if (it == kMaxIterations) {
      fail(ErrorKind::kNumeric, "power iteration did not converge");
    }
  }
  out.direction = v;
  out.eigenvalue = v.dot(cov * v);
  out.values = features * v;
  out.mu = out.values.mean();
  out.sigma = std::sqrt((out.values.array() - out.mu).square().mean());
  if (!(out.sigma > 0.0)) {
    fail(ErrorKind::kDegenerateVariance, "projection onto the first component is constant");
  }
  return out;
}

std::string_view to_string(Orientation orientation) {
  switch (orientation) {
    case Orientation::kShiftedSource: return "shifted-source";
    case Orientation::kShiftedTarget: return "shifted-target";
  }
  return "unknown";
}

std::optional<Orientation> parse_orientation(std::string_view text) {
  if (text == "shifted-source") return Orientation::kShiftedSource;
  if (text == "shifted-target") return Orientation::kShiftedTarget;
  return std::nullopt;
}

void ShiftConfig::validate() const {
  if (!std::isfinite(alpha)) fail(ErrorKind::kValidation, "alpha must be finite");
  if (!(beta > 0.0) || !std::isfinite(beta)) fail(ErrorKind::kValidation, "beta must be positive");
  if ((n_source && *n_source < 0) || (n_target && *n_target < 0)) {
    fail(ErrorKind::kValidation, "sample counts must be nonnegative");
  }
}

double gaussian_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

ShiftWeights shift_weights(const PcaProjection& proj, const ShiftConfig& cfg) {
  cfg.validate();
  Eigen::VectorXd plain(proj.values.size());
  Eigen::VectorXd shifted(proj.values.size());
  for (Eigen::Index i = 0; i < proj.values.size(); ++i) {
    plain(i) = gaussian_density(proj.values(i), proj.mu, proj.sigma);
    shifted(i) = gaussian_density(proj.values(i), proj.mu + cfg.alpha, proj.sigma / cfg.beta);
  }
  if (cfg.orientation == Orientation::kShiftedSource) return {plain, shifted};
  return {shifted, plain};
}

std::vector<Eigen::Index> weighted_sample_without_replacement(
    const std::vector<Eigen::Index>& pool, const Eigen::VectorXd& log_weight, Eigen::Index k,
    std::uint64_t seed) {
  if (k < 0 || k > static_cast<Eigen::Index>(pool.size())) {
    std::ostringstream msg;
    msg << "cannot draw " << k << " rows from a pool of " << pool.size();
    fail(ErrorKind::kSize, msg.str());
  }
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  // Key log(E_i) - log(w_i); the k smallest keys form the sample and their
  // order is the draw order.
  std::vector<std::pair<double, Eigen::Index>> keys;
  keys.reserve(pool.size());
  for (Eigen::Index idx : pool) {
    keys.emplace_back(std::log(expo(rng)) - log_weight(idx), idx);
  }
  std::partial_sort(keys.begin(), keys.begin() + k, keys.end());
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) out.push_back(keys[static_cast<std::size_t>(i)].second);
  return out;
}

ShiftSplit biased_sample(const Dataset& data, const PcaProjection& proj, const ShiftConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = data.rows();
  if (proj.values.size() != n) {
    fail(ErrorKind::kShape, "projection and dataset row counts differ");
  }
  const Eigen::Index n_target = cfg.n_target.value_or(n / 3);
  const Eigen::Index n_source = cfg.n_source.value_or(n / 3);
  if (n_source + n_target > n) {
    std::ostringstream msg;
    msg << "requested " << n_source << " source + " << n_target << " target rows from " << n;
    fail(ErrorKind::kSize, msg.str());
  }

  const Eigen::VectorXd plain = log_gaussian(proj.values, proj.mu, proj.sigma);
  const Eigen::VectorXd shifted = log_gaussian(proj.values, proj.mu + cfg.alpha, proj.sigma / cfg.beta);
  const bool src_shifted = cfg.orientation == Orientation::kShiftedSource;

  std::vector<Eigen::Index> pool(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 seeder(cfg.seed);
  const std::uint64_t seeds[2] = {seeder(), seeder()};

  ShiftSplit out;
  out.target_rows =
      weighted_sample_without_replacement(pool, src_shifted ? plain : shifted, n_target, seeds[0]);
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i : out.target_rows) taken[static_cast<std::size_t>(i)] = 1;
  std::vector<Eigen::Index> rest;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);
  }
  out.source_rows =
      weighted_sample_without_replacement(rest, src_shifted ? shifted : plain, n_source, seeds[1]);
  out.target = data.subset(out.target_rows);
  out.source = data.subset(out.source_rows);
  std::ostringstream note;
  note << "synthetic shift alpha=" << cfg.alpha << " beta=" << cfg.beta << " "
       << to_string(cfg.orientation) << " seed=" << cfg.seed;
  out.source.provenance = data.provenance.empty() ? note.str() : data.provenance + "; " + note.str();
  out.target.provenance = out.source.provenance;
  return out;
}

ShiftSplit make_shift(const Dataset& data, const ShiftConfig& cfg) {
  return biased_sample(data, first_pc(data.x), cfg);
}

}  // namespace rfr::shift
