#include "doctest.h"

#include "rfr/error.hpp"
#include "rfr/harness.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

using namespace rfr;
using namespace rfr::harness;

namespace {

const char* kTinyConfig =
    "# small toy run\n"
    "toy.n = 300\n"
    "toy.mean0 = -1, 0\n"
    "toy.mean1 = 1, 0\n"
    "toy.w = 1, 1\n"
    "toy.group_bias = 0.5\n"
    "shift.alpha = 1\n"
    "shift.beta = 2\n"
    "hidden = 4\n"
    "epochs = 5\n"
    "learning_rate = 0.01\n"
    "rho = 0.05\n"
    "p_norm = 2\n"
    "seeds = 0, 1, 2\n";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("rfr_harness_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

double group_mean(const Eigen::VectorXd& f, const std::vector<int>& a, int g) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == g) {
      s += f(static_cast<Eigen::Index>(i));
      ++n;
    }
  }
  return s / n;
}

}  // namespace

TEST_CASE("metrics: constant positive predictor") {
  Eigen::VectorXd f = Eigen::VectorXd::Constant(6, 0.9);
  const std::vector<int> y{1, 0, 1, 1, 0, 1};
  const std::vector<int> a{0, 0, 0, 1, 1, 1};
  const auto r = evaluate_predictions(f, y, a);
  CHECK(r.delta_dp == 0.0);
  REQUIRE(r.delta_eo);
  CHECK(*r.delta_eo == 0.0);
  CHECK(r.accuracy == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  CHECK(r.n0 == 3);
  CHECK(r.n1 == 3);
}

TEST_CASE("metrics: positive rates 0.8 and 0.3 give dDP 0.5") {
  // 10 rows per group: 8 positives in group 0, 3 in group 1.
  Eigen::VectorXd f(20);
  std::vector<int> y(20, 0), a(20, 0);
  for (int i = 0; i < 10; ++i) f(i) = i < 8 ? 0.7 : 0.2;
  for (int i = 10; i < 20; ++i) {
    a[static_cast<std::size_t>(i)] = 1;
    f(i) = i < 13 ? 0.5 : 0.49;
  }
  const auto r = evaluate_predictions(f, y, a);
  CHECK(r.delta_dp == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_FALSE(r.delta_eo.has_value());
  CHECK(r.accuracy == doctest::Approx(9.0 / 20.0).epsilon(1e-15));
}

TEST_CASE("metrics: equal opportunity gap 0.5") {
  // Group 0 positives all predicted 1; half of group 1 positives predicted 1.
  Eigen::VectorXd f(8);
  f << 0.9, 0.8, 0.1, 0.6, 0.3, 0.7, 0.2, 0.1;
  const std::vector<int> y{1, 1, 0, 1, 1, 1, 1, 0};
  const std::vector<int> a{0, 0, 0, 1, 1, 1, 1, 1};
  const auto r = evaluate_predictions(f, y, a);
  REQUIRE(r.delta_eo);
  CHECK(*r.delta_eo == doctest::Approx(0.5).epsilon(1e-15));
  // Positive rates 2/3 and 2/5.
  CHECK(r.delta_dp == doctest::Approx(2.0 / 3.0 - 2.0 / 5.0).epsilon(1e-15));
}

TEST_CASE("metrics: threshold and errors") {
  Eigen::VectorXd f(4);
  f << 0.5, 0.4, 0.5, 0.6;
  const std::vector<int> y{1, 1, 1, 1};
  const std::vector<int> a{0, 0, 1, 1};
  CHECK(evaluate_predictions(f, y, a, 0.5).delta_dp == 0.5);
  CHECK(evaluate_predictions(f, y, a, 0.55).delta_dp == 0.5);
  CHECK(evaluate_predictions(f, y, a, 0.3).delta_dp == 0.0);
  const std::vector<int> one_group{0, 0, 0, 0};
  CHECK_THROWS_AS(evaluate_predictions(f, y, one_group), Error);
  try {
    evaluate_predictions(f, y, one_group);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateGroup);
  }
  CHECK_THROWS_AS(evaluate_predictions(f, {1, 1}, a), Error);
}

TEST_CASE("soft and hard DP agree on 0/1 predictions") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd f(30);
    std::vector<int> y(30), a(30);
    for (int i = 0; i < 30; ++i) {
      f(i) = coin(rng) ? 1.0 : 0.0;
      y[static_cast<std::size_t>(i)] = coin(rng);
      a[static_cast<std::size_t>(i)] = i % 2;
    }
    CHECK(soft_dp(f, a) == evaluate_predictions(f, y, a).delta_dp);
  }
}

TEST_CASE("bound: source equals target") {
  std::mt19937_64 rng(3);
  const Dataset d = testing::random_dataset(40, 3, rng);
  const auto net = testing::random_net(3, {5}, 11);
  const auto b = check_bound(net, d, d);
  CHECK(b.delta0 == 0.0);
  CHECK(b.delta1 == 0.0);
  CHECK(b.dp_source == b.dp_target);
  CHECK(b.bound == b.dp_target);
  CHECK(b.satisfied);
}

TEST_CASE("bound: constant predictor") {
  Eigen::VectorXd ps = Eigen::VectorXd::Constant(10, 0.3);
  Eigen::VectorXd pt = Eigen::VectorXd::Constant(7, 0.3);
  const std::vector<int> as{0, 1, 0, 1, 0, 1, 0, 1, 1, 1};
  const std::vector<int> at{1, 0, 0, 0, 1, 0, 0};
  const auto b = check_bound_predictions(ps, as, pt, at);
  CHECK(b.dp_source == 0.0);
  CHECK(b.dp_target == 0.0);
  CHECK(b.delta0 == 0.0);
  CHECK(b.delta1 == 0.0);
  CHECK(b.satisfied);
  CHECK_THROWS_AS(check_bound_predictions(ps, as, pt, std::vector<int>(7, 0)), Error);
}

TEST_CASE("bound: 1000 random model and data pairs") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(4, 30), dim(1, 5), width(1, 6);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = dim(rng);
    const Dataset s = testing::random_dataset(size(rng), d, rng);
    Dataset t = testing::random_dataset(size(rng), d, rng);
    t.x = t.x * 2.0 + Eigen::MatrixXd::Constant(t.rows(), d, 0.5);
    const auto net = testing::random_net(d, {width(rng)}, 1000 + trial);
    const auto b = check_bound(net, s, t);
    const Eigen::VectorXd fs = nn::forward(net, s.x);
    const Eigen::VectorXd ft = nn::forward(net, t.x);
    const double s0 = group_mean(fs, s.a, 0), s1 = group_mean(fs, s.a, 1);
    const double t0 = group_mean(ft, t.a, 0), t1 = group_mean(ft, t.a, 1);
    CHECK(b.dp_source == doctest::Approx(std::abs(s0 - s1)).epsilon(1e-12));
    CHECK(b.dp_target == doctest::Approx(std::abs(t0 - t1)).epsilon(1e-12));
    CHECK(b.delta0 == doctest::Approx(std::abs(s0 - t0)).epsilon(1e-12));
    CHECK(b.delta1 == doctest::Approx(std::abs(s1 - t1)).epsilon(1e-12));
    if (!b.satisfied) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("config: parse, overrides and defaults") {
  const auto c = parse_config(kTinyConfig, {"lambda = 0.5, 1", "p_norm=inf", "methods=rfr"});
  CHECK(c.toy_n == 300);
  CHECK(c.toy.mean0(0) == -1.0);
  CHECK(c.hidden == std::vector<Eigen::Index>{4});
  CHECK(c.lambdas == std::vector<double>{0.5, 1.0});
  CHECK(std::isinf(*c.p_norm));
  CHECK(c.methods == std::vector<Method>{Method::kRfr});
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(c.threshold == 0.5);
  const auto j = c.to_json();
  CHECK(j.at("p_norm") == "inf");
  CHECK(j.at("rho") == 0.05);
  CHECK(j.at("loss") == "linear");
}

TEST_CASE("config: usage errors name the key") {
  auto usage_message = [](const std::string& text, std::vector<std::string> ov = {}) {
    try {
      parse_config(text, ov);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kUsage);
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(usage_message("p_norm = 2\n").find("'rho'") != std::string::npos);
  CHECK(usage_message("rho = 0.1\n").find("'p_norm'") != std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\ndata=csv\n").find("'data.path'") != std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\ndata=csv\ndata.path=x.csv\n").find("'data.schema'") !=
        std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\nbogus=1\n").find("'bogus'") != std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\n", {"epochs=ten"}).find("'epochs'") !=
        std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=1\n").find("'p_norm'") != std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\nshift=split\n").find("'shift'") != std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\nmethods=SVM\n").find("'methods'") != std::string::npos);
  CHECK(usage_message("rho=0.1\np_norm=2\nno equals sign\n").find("line 3") != std::string::npos);
}

TEST_CASE("experiment: 5 seeds give 5 records per cell") {
  auto c = parse_config(kTinyConfig, {"seeds=0,1,2,3,4", "lambda=0.5,1", "epochs=2"});
  const auto out = run_experiment(c, false);
  // MLP once per seed, REG and RFR per lambda per seed.
  CHECK(out.cells.size() == 5u * (1 + 2 + 2));
  const auto rows = summarize(out.records);
  REQUIRE(rows.size() == 5u);
  for (const auto& r : rows) {
    CHECK(r.runs == 5);
    CHECK(r.failed == 0);
  }
  for (const auto& r : out.records) {
    CHECK(r.at("schema_version") == kSchemaVersion);
    CHECK(r.at("bound").at("satisfied") == true);
    CHECK(r.at("config").at("rho") == 0.05);
    CHECK(r.at("resolved").contains("p_norm"));
  }
}

TEST_CASE("experiment: lambda 0 RFR equals MLP and rho 0 RFR equals REG") {
  auto c = parse_config(kTinyConfig, {"lambda=0", "methods=MLP,RFR"});
  const auto out = run_experiment(c, false);
  REQUIRE(out.cells.size() == 6u);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& mlp = out.cells[s];
    const auto& rfr = out.cells[3 + s];
    REQUIRE(mlp.ok);
    REQUIRE(rfr.ok);
    CHECK(mlp.seed == rfr.seed);
    CHECK(mlp.target.accuracy == rfr.target.accuracy);
    CHECK(mlp.target.delta_dp == rfr.target.delta_dp);
    CHECK(mlp.bound.dp_target == rfr.bound.dp_target);
  }
  auto z = parse_config(kTinyConfig, {"rho=0", "methods=REG,RFR"});
  const auto out2 = run_experiment(z, false);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(out2.cells[s].bound.dp_target == out2.cells[3 + s].bound.dp_target);
    CHECK(out2.cells[s].final_loss.total == out2.cells[3 + s].final_loss.total);
  }
}

TEST_CASE("experiment: aggregation recomputes from records") {
  auto c = parse_config(kTinyConfig, {"seeds=0,1,2,3,4", "epochs=3"});
  const auto out = run_experiment(c, false);
  const auto rows = summarize(out.records);
  for (const auto& row : rows) {
    std::vector<double> acc, dp;
    for (const auto& r : out.records) {
      if (r.at("method") == row.method && r.at("lambda") == row.lambda) {
        acc.push_back(r.at("target").at("accuracy"));
        dp.push_back(r.at("target").at("delta_dp"));
      }
    }
    REQUIRE(acc.size() == 5u);
    // Welford recursion as the independent path.
    auto check = [](const std::vector<double>& v, double mean, double sd) {
      double m = 0.0, m2 = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        const double delta = v[k] - m;
        m += delta / static_cast<double>(k + 1);
        m2 += delta * (v[k] - m);
      }
      CHECK(std::abs(m - mean) <= 1e-12);
      CHECK(std::abs(std::sqrt(m2 / static_cast<double>(v.size() - 1)) - sd) <= 1e-12);
    };
    check(acc, row.acc_mean, row.acc_std);
    check(dp, row.dp_mean, row.dp_std);
  }
}

TEST_CASE("experiment: reruns are byte identical, threads included") {
  const auto d1 = scratch("a");
  const auto d2 = scratch("b");
  run_experiment(parse_config(kTinyConfig, {"output=" + d1.string()}));
  run_experiment(parse_config(kTinyConfig, {"output=" + d2.string(), "threads=3"}));
  for (const char* f : {"records.jsonl", "cells.csv", "tradeoff.csv"}) {
    const std::string a = slurp(d1 / f);
    CHECK(!a.empty());
    CHECK(a == slurp(d2 / f));
  }
  const auto rows = summarize(read_records((d1 / "records.jsonl").string()));
  CHECK(rows.size() == 3u);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("experiment: training failure becomes a failed cell") {
  // Lambda so large the parameters overflow.
  auto c = parse_config(kTinyConfig, {"methods=REG", "lambda=1e308", "learning_rate=1e300",
                                      "epochs=50", "seeds=0"});
  const auto out = run_experiment(c, false);
  REQUIRE(out.cells.size() == 1u);
  CHECK_FALSE(out.cells[0].ok);
  CHECK(out.records[0].at("status") == "failed");
  const auto rows = summarize(out.records);
  CHECK(rows[0].failed == 1);
  CHECK(format_table(rows).find("failed") != std::string::npos);
}

TEST_CASE("report formatting") {
  CHECK(format_pct(0.1511, 0.0042) == "15.11±0.42");
  CHECK(format_pct(0.0044, 0.0) == "0.44±0.00");
  SummaryRow r;
  r.method = "RFR";
  r.lambda = 1.0;
  r.runs = 5;
  r.acc_mean = 0.8;
  r.acc_std = 0.01;
  r.dp_mean = 0.0379;
  r.dp_std = 0.0012;
  const std::string t = format_table({r});
  CHECK(t.find("80.00±1.00") != std::string::npos);
  CHECK(t.find("3.79±0.12") != std::string::npos);
  CHECK(t.find("undefined") != std::string::npos);
  CHECK(t.find("sample std") != std::string::npos);
}

TEST_CASE("records: wrong schema version is rejected") {
  std::vector<nlohmann::json> recs{{{"schema_version", 99}, {"method", "MLP"}, {"lambda", 0}}};
  CHECK_THROWS_AS(summarize(recs), Error);
}
