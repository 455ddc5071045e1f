#include "doctest.h"

#include "rfr/error.hpp"
#include "rfr/shift.hpp"
#include "test_util.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

using namespace rfr;
using namespace rfr::shift;

namespace {

Dataset gaussian_data(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset data;
  data.x = testing::random_matrix(n, d, rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    data.y.push_back(static_cast<int>(i % 2));
    data.a.push_back(static_cast<int>((i / 2) % 2));
  }
  return data;
}

double mean_of(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  double s = 0.0;
  for (Eigen::Index r : rows) s += v(r);
  return s / static_cast<double>(rows.size());
}

}  // namespace

TEST_CASE("first_pc on hand-solvable data") {
  SUBCASE("points on the x-axis") {
    Eigen::MatrixXd x(4, 2);
    x << -2, 0, -1, 0, 1, 0, 3, 0;
    const auto pc = first_pc(x);
    CHECK(pc.direction(0) == doctest::Approx(1.0));
    CHECK(pc.direction(1) == doctest::Approx(0.0));
    CHECK(pc.mu == doctest::Approx(0.25));
  }
  SUBCASE("two points on the diagonal") {
    Eigen::MatrixXd x(2, 2);
    x << 1, 1, -1, -1;
    const auto pc = first_pc(x);
    CHECK(pc.direction(0) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));
    CHECK(pc.direction(1) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));
    // Projections are +-sqrt(2), population variance 2.
    CHECK(pc.sigma == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(pc.eigenvalue == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("negated data gives the same sign-fixed direction") {
    Eigen::MatrixXd x(3, 2);
    x << 0, 0, -1, -2, -2, -4.1;
    const auto a = first_pc(x);
    const auto b = first_pc(-x);
    CHECK((a.direction - b.direction).norm() <= 1e-10);
    Eigen::Index arg = 0;
    a.direction.cwiseAbs().maxCoeff(&arg);
    CHECK(a.direction(arg) > 0.0);
  }
}

TEST_CASE("first_pc agrees with a dense eigensolver") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd x = testing::random_matrix(200, 5, rng);
    // Stretch a random direction so the top eigenvalue is well separated.
    const Eigen::VectorXd w = testing::random_matrix(5, 1, rng).col(0).normalized();
    x += (x * w) * w.transpose() * (1.0 + trial % 3);
    const auto pc = first_pc(x);

    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(x.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double top = eig.eigenvalues()(4);
    const Eigen::VectorXd top_vec = eig.eigenvectors().col(4);

    CHECK(pc.direction.norm() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(pc.sigma * pc.sigma == doctest::Approx(top).epsilon(1e-8));
    CHECK(std::abs(pc.direction.dot(top_vec)) == doctest::Approx(1.0).epsilon(1e-8));
    // No random direction projects with more variance.
    for (int k = 0; k < 1000; ++k) {
      const Eigen::VectorXd u = testing::random_matrix(5, 1, rng).col(0).normalized();
      const Eigen::VectorXd p = c * u;
      REQUIRE(p.squaredNorm() / static_cast<double>(x.rows()) <= top * (1 + 1e-12));
    }
  }
}

TEST_CASE("first_pc rejects degenerate input") {
  try {
    first_pc(Eigen::MatrixXd::Constant(5, 3, 2.0));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateVariance);
  }
  try {
    first_pc(Eigen::MatrixXd::Ones(1, 3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSize);
  }
}

TEST_CASE("shift weights") {
  const Dataset data = gaussian_data(300, 3, 22);
  const auto pc = first_pc(data.x);
  SUBCASE("no shift gives identical weights") {
    ShiftConfig cfg;
    const auto w = shift_weights(pc, cfg);
    CHECK(w.source == w.target);
  }
  SUBCASE("the shifted mode carries the peak density") {
    ShiftConfig cfg;
    cfg.alpha = 1.5;
    cfg.beta = 3.0;
    const double sd = pc.sigma / cfg.beta;
    const double peak = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
    CHECK(gaussian_density(pc.mu + cfg.alpha, pc.mu + cfg.alpha, sd) == doctest::Approx(peak));
    const auto w = shift_weights(pc, cfg);
    CHECK(w.source.maxCoeff() <= peak);
    CHECK(w.target.maxCoeff() <= 1.0 / (pc.sigma * std::sqrt(2.0 * std::numbers::pi)));
  }
  SUBCASE("orientation swaps the roles") {
    ShiftConfig cfg;
    cfg.alpha = 1.0;
    cfg.beta = 2.0;
    const auto a = shift_weights(pc, cfg);
    cfg.orientation = Orientation::kShiftedTarget;
    const auto b = shift_weights(pc, cfg);
    CHECK(a.source == b.target);
    CHECK(a.target == b.source);
  }
  SUBCASE("invalid beta") {
    ShiftConfig cfg;
    cfg.beta = 0.0;
    CHECK_THROWS_AS(shift_weights(pc, cfg), Error);
  }
}

TEST_CASE("weighted sampling follows the weights") {
  // One draw from weights {1, 2, 7}: inclusion probabilities 0.1, 0.2, 0.7.
  const std::vector<Eigen::Index> pool{0, 1, 2};
  const Eigen::VectorXd logw = Eigen::Vector3d(1, 2, 7).array().log();
  std::vector<int> hits(3, 0);
  const int trials = 40000;
  for (int s = 0; s < trials; ++s) {
    hits[static_cast<std::size_t>(weighted_sample_without_replacement(pool, logw, 1, s)[0])]++;
  }
  CHECK(hits[0] / double(trials) == doctest::Approx(0.1).epsilon(0.1));
  CHECK(hits[1] / double(trials) == doctest::Approx(0.2).epsilon(0.05));
  CHECK(hits[2] / double(trials) == doctest::Approx(0.7).epsilon(0.02));
  // Two draws: P(first = 2, second = 1) = 0.7 * 2/3.
  int ordered = 0;
  for (int s = 0; s < trials; ++s) {
    const auto d = weighted_sample_without_replacement(pool, logw, 2, s);
    ordered += (d[0] == 2 && d[1] == 1);
  }
  CHECK(ordered / double(trials) == doctest::Approx(0.7 * 2.0 / 3.0).epsilon(0.03));
  CHECK_THROWS_AS(weighted_sample_without_replacement(pool, logw, 4, 0), Error);
}

TEST_CASE("biased_sample produces disjoint seeded splits") {
  const Dataset data = gaussian_data(301, 4, 23);
  ShiftConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 2.0;
  cfg.seed = 5;
  const auto split = make_shift(data, cfg);
  CHECK(split.source.rows() == 100);
  CHECK(split.target.rows() == 100);
  std::set<Eigen::Index> seen(split.target_rows.begin(), split.target_rows.end());
  for (Eigen::Index r : split.source_rows) CHECK(seen.count(r) == 0);
  CHECK(seen.size() == split.target_rows.size());
  for (std::size_t k = 0; k < split.source_rows.size(); ++k) {
    CHECK(split.source.x.row(static_cast<Eigen::Index>(k)) == data.x.row(split.source_rows[k]));
  }

  const auto again = make_shift(data, cfg);
  CHECK(again.source_rows == split.source_rows);
  CHECK(again.target_rows == split.target_rows);
  cfg.seed = 6;
  CHECK(make_shift(data, cfg).source_rows != split.source_rows);

  cfg.n_source = 200;
  cfg.n_target = 102;
  try {
    make_shift(data, cfg);
    FAIL("expected a size error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSize);
  }
}

TEST_CASE("biased_sample shifts the source toward mu + alpha") {
  Dataset data = gaussian_data(600, 1, 24);
  const auto pc = first_pc(data.x);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ShiftConfig cfg;
    cfg.alpha = 3.0;
    cfg.beta = 6.0;
    cfg.seed = seed;
    const auto split = biased_sample(data, pc, cfg);
    CAPTURE(seed);
    CHECK(mean_of(pc.values, split.source_rows) > mean_of(pc.values, split.target_rows));
    cfg.orientation = Orientation::kShiftedTarget;
    const auto flipped = biased_sample(data, pc, cfg);
    CHECK(mean_of(pc.values, flipped.target_rows) > mean_of(pc.values, flipped.source_rows));
  }
}

TEST_CASE("no shift is indistinguishable from a random split") {
  const Dataset data = gaussian_data(600, 3, 25);
  const auto pc = first_pc(data.x);
  // Null distribution of |mean difference| over random disjoint splits.
  std::mt19937_64 rng(26);
  std::vector<double> null_diffs;
  std::vector<Eigen::Index> idx(600);
  for (Eigen::Index i = 0; i < 600; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int k = 0; k < 200; ++k) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::vector<Eigen::Index> t(idx.begin(), idx.begin() + 200);
    const std::vector<Eigen::Index> s(idx.begin() + 200, idx.begin() + 400);
    null_diffs.push_back(std::abs(mean_of(pc.values, s) - mean_of(pc.values, t)));
  }
  std::sort(null_diffs.begin(), null_diffs.end());
  const double q95 = null_diffs[189];
  int exceed = 0;
  const int seeds = 40;
  for (int seed = 0; seed < seeds; ++seed) {
    ShiftConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto split = biased_sample(data, pc, cfg);
    exceed += std::abs(mean_of(pc.values, split.source_rows) -
                       mean_of(pc.values, split.target_rows)) > q95;
  }
  // About 5% expected; 20% would signal a systematic shift.
  CHECK(exceed <= seeds / 5);
}
