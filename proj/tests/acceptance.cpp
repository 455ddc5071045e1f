// Acceptance suite: one PASS/FAIL line per criterion. Criteria 1-6 decide the
// exit status; criterion 7 needs a user-supplied CSV and never gates.

#include "rfr/data_io.hpp"
#include "rfr/error.hpp"
#include "rfr/harness.hpp"
#include "rfr/losses.hpp"
#include "rfr/nn.hpp"
#include "rfr/theory.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

using namespace rfr;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string printf_string(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
std::string printf_string(const char* fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

// splitmix64; the sampler draws billions of coordinates.
struct FastRng {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double symmetric() {  // uniform in [-1, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-52 - 1.0;
  }
};

Outcome criterion1() {
  const auto t0 = Clock::now();
  constexpr int kVectors = 100;
  constexpr int kSamples = 100000;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> log_dim(std::log(3.0), std::log(500.0));
  std::uniform_real_distribution<double> rho_dist(0.05, 1.0);
  std::normal_distribution<double> n01;
  FastRng fast{202};
  double worst_gap = -std::numeric_limits<double>::infinity();
  double worst_norm = 0.0;
  int failures = 0;
  for (int v = 0; v < kVectors; ++v) {
    int dim = static_cast<int>(std::lround(std::exp(log_dim(rng))));
    if (v == 0) dim = 3;
    if (v == kVectors - 1) dim = 500;
    Eigen::VectorXd g(dim);
    for (int i = 0; i < dim; ++i) g(i) = n01(rng) * std::exp(n01(rng));
    const double rho = rho_dist(rng);
    const fair::PerturbationConfig c2{rho, 2.0};
    const fair::PerturbationConfig cinf{rho, std::numeric_limits<double>::infinity()};
    const Eigen::VectorXd e2 = fair::dual_norm_epsilon(g, c2).eps;
    const Eigen::VectorXd einf = fair::dual_norm_epsilon(g, cinf).eps;
    const double star2 = g.dot(e2);
    const double starinf = g.dot(einf);
    // Each draw is scaled onto both spheres, so one pass serves both norms.
    double best2 = -std::numeric_limits<double>::infinity();
    double bestinf = best2;
    for (int k = 0; k < kSamples; ++k) {
      double dot = 0.0, sq = 0.0, mx = 0.0;
      for (int i = 0; i < dim; ++i) {
        const double u = fast.symmetric();
        dot += g(i) * u;
        sq += u * u;
        mx = std::max(mx, std::abs(u));
      }
      if (mx == 0.0) continue;
      best2 = std::max(best2, rho * dot / std::sqrt(sq));
      bestinf = std::max(bestinf, rho * dot / mx);
    }
    // Independent norms of the returned vectors.
    double sq = 0.0, mx = 0.0;
    for (int i = 0; i < dim; ++i) sq += e2(i) * e2(i);
    for (int i = 0; i < dim; ++i) mx = std::max(mx, std::abs(einf(i)));
    const double n2_err = std::abs(std::sqrt(sq) - rho);
    const double ninf_err = std::abs(mx - rho);
    const double gap2 = (best2 - star2) / std::abs(best2);
    const double gapinf = (bestinf - starinf) / std::abs(bestinf);
    worst_gap = std::max({worst_gap, gap2, gapinf});
    worst_norm = std::max({worst_norm, n2_err, ninf_err});
    if (gap2 > 1e-3 || gapinf > 1e-3 || n2_err > 1e-9 || ninf_err > 1e-9) ++failures;
  }
  const double t = seconds_since(t0);
  Outcome o;
  o.passed = failures == 0 && t < 10.0;
  o.detail = printf_string(
      "dual-norm optimality: 100 vectors (dims 3-500), p in {2, inf}, 1e5 samples each; "
      "worst (best_sample - closed_form)/|best_sample| = %.3g (limit 1e-3), "
      "worst | ||eps*||_p - rho | = %.3g (limit 1e-9), failures %d, %.2f s (limit 10 s)",
      worst_gap, worst_norm, failures, t);
  return o;
}

Dataset fd_dataset(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset data = testing::random_dataset(n, d, rng);
  return data;
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  struct Shape {
    Eigen::Index in;
    std::vector<Eigen::Index> hidden;
  };
  const std::vector<Shape> shapes{{3, {5}},     {4, {8, 6}},    {5, {10, 8}},
                                  {6, {12, 6}}, {2, {6, 6, 6}}, {8, {16}}};
  double worst = 0.0;
  int checks = 0;
  long max_params = 0;
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    for (std::uint64_t rep = 0; rep < 5; ++rep) {
      const std::uint64_t seed = 1000 * si + rep;
      const auto net = testing::random_net(shapes[si].in, shapes[si].hidden, seed);
      max_params = std::max<long>(max_params, static_cast<long>(net.parameter_count()));
      const Dataset data = fd_dataset(24, shapes[si].in, seed + 7);
      const Eigen::VectorXd theta = net.flatten();
      auto compare = [&](const Eigen::VectorXd& analytic,
                         const std::function<double(const Eigen::VectorXd&)>& f) {
        // A 1e-6 step keeps the probe on one side of every rectifier kink here.
        worst = std::max(worst, testing::relative_error(
                                    analytic, testing::finite_difference(f, theta, 1e-6)));
        ++checks;
      };
      for (auto variant : {fair::LossVariant::kLinear, fair::LossVariant::kCrossEntropy}) {
        compare(fair::clf_gradient(net, data, variant).values, [&](const Eigen::VectorXd& v) {
          return fair::clf_loss(net.unflatten(v), data, variant);
        });
      }
      compare(fair::dp_gradient(net, data).values, [&](const Eigen::VectorXd& v) {
        return fair::dp_loss(net.unflatten(v), data);
      });
      for (int g = 0; g < 2; ++g) {
        compare(fair::group_mean_gradient(net, data, g).values, [&](const Eigen::VectorXd& v) {
          const Eigen::VectorXd f = nn::forward(net.unflatten(v), data.x);
          double sum = 0.0;
          int count = 0;
          for (std::size_t i = 0; i < data.a.size(); ++i) {
            if (data.a[i] == g) {
              sum += f(static_cast<Eigen::Index>(i));
              ++count;
            }
          }
          return sum / count;
        });
      }
    }
  }
  const double t = seconds_since(t0);
  Outcome o;
  o.passed = worst <= 1e-4 && max_params <= 200 && t < 30.0;
  o.detail = printf_string(
      "gradient exactness: %d comparisons (CLF linear and cross-entropy, DP, both group "
      "means, central differences with step 1e-6) on nets up to %ld parameters; worst relative error %.3g (limit 1e-4), "
      "%.2f s (limit 30 s)",
      checks, max_params, worst, t);
  return o;
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  const auto checks = theory::run_theory_suite({});
  const double t = seconds_since(t0);
  bool all = true;
  std::string names;
  for (const auto& c : checks) {
    all = all && c.passed;
    names += (names.empty() ? "" : ", ") + c.name + (c.passed ? " ok" : " FAILED");
  }
  const auto cor = std::find_if(checks.begin(), checks.end(), [](const theory::SuiteCheck& c) {
    return c.name == "transport_loss_equivalence";
  });
  const auto thm = std::find_if(checks.begin(), checks.end(), [](const theory::SuiteCheck& c) {
    return c.name == "weight_shift_quadratic_decay";
  });
  std::string numbers;
  if (cor != checks.end() && cor->detail.contains("worst_gap")) {
    numbers += printf_string("; worst transport-loss gap %.3g (limit 1e-10)",
                             cor->detail["worst_gap"].get<double>());
  }
  if (thm != checks.end()) {
    double max_ratio = 0.0;
    for (const auto& row : thm->detail) {
      for (const auto& r : row["ratios"]) max_ratio = std::max(max_ratio, r.get<double>());
    }
    numbers += printf_string("; worst mismatch ratio per halving %.3f (limit 0.35)", max_ratio);
  }
  Outcome o;
  o.passed = all && checks.size() == 8 && t < 60.0;
  o.detail = "theory suite (20 transport-loss instances, 10 first-order instances, 1000 "
             "alternative plans per transport instance): " +
             names + numbers + printf_string(", %.2f s (limit 60 s)", t);
  return o;
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> size(4, 40), dim(1, 6), width(1, 8);
  std::normal_distribution<double> n01;
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = dim(rng);
    const Dataset s = testing::random_dataset(size(rng), d, rng);
    Dataset t = testing::random_dataset(size(rng), d, rng);
    t.x = (t.x.array() * std::exp(n01(rng)) + n01(rng)).matrix();
    const auto net = testing::random_net(d, {width(rng)}, 5000 + trial);
    if (!harness::check_bound(net, s, t).satisfied) ++violations;
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> scale_exp(0.0, 4.0);
  long triangle_failures = 0;
  constexpr long kTuples = 1000000;
  for (long k = 0; k < kTuples; ++k) {
    const double sc = std::exp(scale_exp(rng));
    if (!theory::gap_triangle_check(sc * u(rng), sc * u(rng), sc * u(rng), sc * u(rng))) {
      ++triangle_failures;
    }
  }
  const double t = seconds_since(t0);
  Outcome o;
  o.passed = violations == 0 && triangle_failures == 0;
  o.detail = printf_string(
      "shift bound: %d violations in 1000 random model/dataset pairs (tolerance 1e-12); "
      "gap triangle inequality: %ld failures in 1e6 random tuples; %.2f s",
      violations, triangle_failures, t);
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome criterion5(const std::string& config_path) {
  const auto t0 = Clock::now();
  Outcome o;
  harness::ExperimentConfig cfg;
  try {
    cfg = harness::load_config(config_path, {"methods=MLP,REG,RFR", "lambda=1"});
  } catch (const Error& e) {
    o.detail = std::string("efficacy: cannot load ") + config_path + ": " + e.what();
    return o;
  }
  const auto out = harness::run_experiment(cfg, false);
  std::vector<double> dp[3], acc[3];
  int failed = 0;
  for (const auto& c : out.cells) {
    if (!c.ok) {
      ++failed;
      continue;
    }
    const int m = static_cast<int>(c.method);
    dp[m].push_back(c.target.delta_dp);
    acc[m].push_back(c.target.accuracy);
  }
  const double t = seconds_since(t0);
  if (failed || dp[0].empty() || dp[1].empty() || dp[2].empty()) {
    o.detail = printf_string("efficacy: %d failed cells", failed);
    return o;
  }
  const double mlp = median(dp[0]), reg = median(dp[1]), rfr = median(dp[2]);
  const double acc_mlp = median(acc[0]), acc_rfr = median(acc[2]);
  const double reduction = reg > 0.0 ? 1.0 - rfr / reg : 0.0;
  const bool order = rfr <= reg && reg <= mlp;
  const bool reduced = reduction >= 0.30;
  const bool accurate = acc_mlp - acc_rfr <= 0.05;
  o.passed = order && reduced && accurate && t < 180.0;
  o.detail = printf_string(
      "efficacy on toy shift (alpha %.1f, beta %.1f, %zu seeds, rho %g, p %g): median target "
      "dDP MLP %.4f, REG %.4f, RFR %.4f (order %s); RFR vs REG reduction %.1f%% (need 30%%); "
      "median target accuracy MLP %.4f, RFR %.4f (gap %.2f points, limit 5); %.1f s (limit "
      "180 s)",
      cfg.shift_cfg.alpha, cfg.shift_cfg.beta, cfg.seeds.size(), *cfg.rho, *cfg.p_norm, mlp, reg,
      rfr, order ? "holds" : "violated", 100.0 * reduction, acc_mlp, acc_rfr,
      100.0 * (acc_mlp - acc_rfr), t);
  return o;
}

Outcome criterion6(const std::string& config_path) {
  const auto t0 = Clock::now();
  Outcome o;
  const auto cfg = harness::load_config(config_path, {"methods=REG,RFR", "lambda=1"});
  int mismatches = 0;
  int runs = 0;
  for (std::uint64_t seed : cfg.seeds) {
    const auto split = harness::prepare_data(cfg, seed);
    // lambda 0 against a plain classification-only Adam loop.
    nn::Architecture arch;
    arch.input_dim = split.source.cols();
    arch.hidden = cfg.hidden;
    fair::TrainConfig t = cfg.train;
    t.seed = seed;
    t.lambda = 0.0;
    t.batch_size = 0;
    t.perturbation = {*cfg.rho, *cfg.p_norm};
    const auto trained = fair::train(split.source, arch, t).params.flatten();
    auto params = nn::ModelParams::glorot(arch, seed);
    auto state = nn::OptimizerState::for_params(params, t.adam);
    for (int e = 0; e < t.epochs; ++e) {
      nn::adam_step(state, params, fair::clf_gradient(params, split.source, t.variant));
    }
    const auto erm = params.flatten();
    if (trained.size() != erm.size() ||
        std::memcmp(trained.data(), erm.data(), sizeof(double) * erm.size()) != 0) {
      ++mismatches;
    }
    ++runs;
  }
  // rho 0 RFR against REG, metric by metric.
  const auto zero = harness::load_config(config_path, {"methods=REG,RFR", "lambda=1", "rho=0"});
  const auto out = harness::run_experiment(zero, false);
  const std::size_t n = zero.seeds.size();
  int metric_mismatches = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& reg = out.cells[k];
    const auto& rfr = out.cells[n + k];
    if (!reg.ok || !rfr.ok || reg.seed != rfr.seed || reg.target.accuracy != rfr.target.accuracy ||
        reg.target.delta_dp != rfr.target.delta_dp || reg.source.delta_dp != rfr.source.delta_dp ||
        reg.target.delta_eo != rfr.target.delta_eo || reg.bound.bound != rfr.bound.bound) {
      ++metric_mismatches;
    }
  }
  const double t = seconds_since(t0);
  o.passed = mismatches == 0 && metric_mismatches == 0;
  o.detail = printf_string(
      "collapse identities: lambda 0 training vs classification-only loop, %d/%d bit-equal "
      "parameter vectors; rho 0 RFR vs REG, %zu/%zu seeds with identical metrics; %.1f s",
      runs - mismatches, runs, n - metric_mismatches, n, t);
  return o;
}

void criterion7() {
  const char* csv = std::getenv("RFR_ADULT_CSV");
  const char* schema = std::getenv("RFR_ADULT_SCHEMA");
  if (!csv || !schema) {
    std::printf(
        "SKIP criterion 7 (optional): Adult-format ordering needs RFR_ADULT_CSV and "
        "RFR_ADULT_SCHEMA; not gating\n");
    return;
  }
  try {
    auto cfg = harness::parse_config(
        "data = csv\nshift.alpha = 1\nshift.beta = 2\nloss = cross-entropy\n"
        "learning_rate = 0.001\nepochs = 100\nrho = 0.05\np_norm = 2\nlambda = 1\n",
        {std::string("data.path=") + csv, std::string("data.schema=") + schema});
    const auto out = harness::run_experiment(cfg, false);
    std::vector<double> dp[3];
    for (const auto& c : out.cells) {
      if (c.ok) dp[static_cast<int>(c.method)].push_back(c.target.delta_dp);
    }
    const double mlp = median(dp[0]), reg = median(dp[1]), rfr = median(dp[2]);
    std::printf("%s criterion 7 (optional, not gating): Adult-format median target dDP MLP "
                "%.4f, REG %.4f, RFR %.4f\n",
                rfr < reg && reg < mlp ? "PASS" : "FAIL", mlp, reg, rfr);
  } catch (const Error& e) {
    std::printf("FAIL criterion 7 (optional, not gating): %s\n", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <toy config>\n");
    return 2;
  }
  const std::string config = argv[1];
  using Fn = std::function<Outcome()>;
  const std::vector<Fn> criteria{
      criterion1, criterion2, criterion3, criterion4,
      [&] { return criterion5(config); }, [&] { return criterion6(config); }};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o.detail = std::string("threw: ") + e.what();
    }
    std::printf("%s criterion %zu: %s\n", o.passed ? "PASS" : "FAIL", i + 1, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.passed;
  }
  criterion7();
  std::printf("%d of 6 primary criteria passed\n", 6 - failed);
  return failed == 0 ? 0 : 1;
}
