#include "doctest.h"

#include "rfr/rfr.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

namespace {

const char* kToy =
    "toy.n = 300\n"
    "hidden = 4\n"
    "epochs = 5\n"
    "learning_rate = 0.01\n"
    "rho = 0.05\n"
    "p_norm = 2\n"
    "seeds = 0, 1\n";

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("rfr_capi_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

rfr_config* parse(const char* text, std::vector<const char*> overrides = {}) {
  rfr_config* cfg = nullptr;
  REQUIRE(rfr_config_parse(text, overrides.data(), overrides.size(), &cfg) == RFR_OK);
  return cfg;
}

}  // namespace

TEST_CASE("c api: status names and exit codes") {
  CHECK(std::strcmp(rfr_status_name(RFR_OK), "ok") == 0);
  CHECK(std::strcmp(rfr_status_name(RFR_ERR_USAGE), "usage") == 0);
  CHECK(rfr_exit_code(RFR_OK) == 0);
  CHECK(rfr_exit_code(RFR_ERR_USAGE) == 1);
  CHECK(rfr_exit_code(RFR_ERR_SCHEMA) == 2);
  CHECK(rfr_exit_code(RFR_ERR_IO) == 2);
  CHECK(rfr_exit_code(RFR_ERR_PARTITION) == 2);
  CHECK(rfr_exit_code(RFR_ERR_NUMERIC) == 3);
  CHECK(std::strlen(rfr_version()) > 0);
}

TEST_CASE("c api: null arguments and error messages") {
  CHECK(rfr_dataset_shape(nullptr, nullptr, nullptr) == RFR_ERR_NULL_ARGUMENT);
  CHECK(std::string(rfr_last_error()).find("data") != std::string::npos);
  rfr_config* cfg = nullptr;
  CHECK(rfr_config_parse("p_norm = 2\n", nullptr, 0, &cfg) == RFR_ERR_USAGE);
  CHECK(cfg == nullptr);
  CHECK(std::string(rfr_last_error()).find("'rho'") != std::string::npos);
  rfr_dataset* d = nullptr;
  CHECK(rfr_dataset_load_csv("/nonexistent.csv", "/nonexistent.schema", &d, nullptr) ==
        RFR_ERR_IO);
  CHECK(rfr_report(nullptr, 0, nullptr) == RFR_ERR_NULL_ARGUMENT);
  rfr_model_free(nullptr);
  rfr_dataset_free(nullptr);
  rfr_config_free(nullptr);
  rfr_string_free(nullptr);
}

TEST_CASE("c api: arrays round trip through save and load") {
  const double x[] = {0.5, -1.0, 2.0, 0.25, 1e-300, 3.0, -7.5, 0.125};
  const int y[] = {1, 0, 1, 0};
  const int a[] = {0, 1, 1, 0};
  rfr_dataset* d = nullptr;
  REQUIRE(rfr_dataset_from_arrays(x, y, a, 4, 2, &d) == RFR_OK);
  size_t rows = 0, cols = 0;
  REQUIRE(rfr_dataset_shape(d, &rows, &cols) == RFR_OK);
  CHECK(rows == 4);
  CHECK(cols == 2);
  const auto dir = scratch("roundtrip");
  const std::string path = (dir / "d.csv").string();
  REQUIRE(rfr_dataset_save(d, path.c_str()) == RFR_OK);
  rfr_dataset* back = nullptr;
  size_t dropped = 99;
  REQUIRE(rfr_dataset_load_csv(path.c_str(), (path + ".schema").c_str(), &back, &dropped) ==
          RFR_OK);
  CHECK(dropped == 0);
  double x2[8];
  int y2[4], a2[4];
  REQUIRE(rfr_dataset_copy(back, x2, y2, a2) == RFR_OK);
  CHECK(std::memcmp(x, x2, sizeof x) == 0);
  CHECK(std::memcmp(y, y2, sizeof y) == 0);
  CHECK(std::memcmp(a, a2, sizeof a) == 0);
  rfr_dataset_free(d);
  rfr_dataset_free(back);
  const int bad_y[] = {2, 0, 1, 0};
  CHECK(rfr_dataset_from_arrays(x, bad_y, a, 4, 2, &d) == RFR_ERR_VALIDATION);
  std::filesystem::remove_all(dir);
}

TEST_CASE("c api: shift, train, evaluate and bound") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  const size_t n = 240;
  std::vector<double> x(n * 2);
  std::vector<int> y(n), a(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = static_cast<int>(i % 2);
    x[2 * i] = n01(rng) + (a[i] ? 1.0 : -1.0);
    x[2 * i + 1] = n01(rng);
    y[i] = x[2 * i + 1] + 0.3 * x[2 * i] > 0 ? 1 : 0;
  }
  rfr_dataset* d = nullptr;
  REQUIRE(rfr_dataset_from_arrays(x.data(), y.data(), a.data(), n, 2, &d) == RFR_OK);
  rfr_dataset *s = nullptr, *t = nullptr;
  REQUIRE(rfr_shift_make(d, 1.0, 2.0, 7, RFR_SHIFTED_SOURCE, -1, -1, &s, &t) == RFR_OK);
  size_t ns = 0, nt = 0;
  rfr_dataset_shape(s, &ns, nullptr);
  rfr_dataset_shape(t, &nt, nullptr);
  CHECK(ns == n / 3);
  CHECK(nt == n / 3);
  CHECK(rfr_shift_make(d, 1.0, 2.0, 7, RFR_SHIFTED_SOURCE, 200, 200, &s, &t) == RFR_ERR_SIZE);

  rfr_config* cfg = parse(kToy);
  rfr_model* m = nullptr;
  REQUIRE(rfr_train(s, cfg, RFR_METHOD_RFR, 1.0, 3, &m) == RFR_OK);
  size_t count = 0;
  REQUIRE(rfr_model_parameter_count(m, &count) == RFR_OK);
  CHECK(count == 2 * 4 + 4 + 4 + 1);
  std::vector<double> pred(nt);
  REQUIRE(rfr_model_predict(m, t, pred.data()) == RFR_OK);
  for (double p : pred) CHECK((p > 0.0 && p < 1.0));

  // Threshold-count oracle over the copied target rows.
  std::vector<int> ty(nt), ta(nt);
  REQUIRE(rfr_dataset_copy(t, nullptr, ty.data(), ta.data()) == RFR_OK);
  double correct = 0, pos[2] = {0, 0}, cnt[2] = {0, 0};
  for (size_t i = 0; i < nt; ++i) {
    const int yhat = pred[i] >= 0.5;
    correct += yhat == ty[i];
    pos[ta[i]] += yhat;
    cnt[ta[i]] += 1;
  }
  rfr_fairness f{};
  REQUIRE(rfr_evaluate(m, t, 0.5, &f) == RFR_OK);
  CHECK(f.accuracy == doctest::Approx(correct / nt).epsilon(1e-15));
  CHECK(f.delta_dp == doctest::Approx(std::abs(pos[0] / cnt[0] - pos[1] / cnt[1])).epsilon(1e-15));
  CHECK(f.n0 + f.n1 == nt);

  rfr_bound b{};
  REQUIRE(rfr_check_bound(m, s, t, &b) == RFR_OK);
  CHECK(b.satisfied == 1);
  CHECK(b.bound == doctest::Approx(b.dp_source + b.delta0 + b.delta1).epsilon(1e-15));

  // lambda 0 RFR equals MLP bit for bit.
  rfr_model *m0 = nullptr, *mlp = nullptr;
  REQUIRE(rfr_train(s, cfg, RFR_METHOD_RFR, 0.0, 3, &m0) == RFR_OK);
  REQUIRE(rfr_train(s, cfg, RFR_METHOD_MLP, 5.0, 3, &mlp) == RFR_OK);
  std::vector<double> p0(nt), p1(nt);
  rfr_model_predict(m0, t, p0.data());
  rfr_model_predict(mlp, t, p1.data());
  CHECK(std::memcmp(p0.data(), p1.data(), nt * sizeof(double)) == 0);

  rfr_model_free(m);
  rfr_model_free(m0);
  rfr_model_free(mlp);
  rfr_config_free(cfg);
  rfr_dataset_free(s);
  rfr_dataset_free(t);
  rfr_dataset_free(d);
}

TEST_CASE("c api: run experiment and report") {
  const auto dir = scratch("run");
  const std::string out = "output=" + dir.string();
  rfr_config* cfg = parse(kToy, {out.c_str(), "lambda=1"});
  char* json = nullptr;
  REQUIRE(rfr_config_to_json(cfg, &json) == RFR_OK);
  CHECK(std::string(json).find("\"rho\": 0.05") != std::string::npos);
  rfr_string_free(json);
  char* summary = nullptr;
  REQUIRE(rfr_run_experiment(cfg, &summary) == RFR_OK);
  const std::string table = summary;
  rfr_string_free(summary);
  CHECK(table.find("RFR") != std::string::npos);
  const std::string records = (dir / "records.jsonl").string();
  const char* paths[] = {records.c_str()};
  char* again = nullptr;
  REQUIRE(rfr_report(paths, 1, &again) == RFR_OK);
  CHECK(table == again);
  rfr_string_free(again);
  rfr_config_free(cfg);
  std::filesystem::remove_all(dir);
}

TEST_CASE("c api: verify theory") {
  int all = 0;
  char* report = nullptr;
  REQUIRE(rfr_verify_theory(20240601, &all, &report) == RFR_OK);
  CHECK(all == 1);
  CHECK(std::string(report).find("weight_shift_quadratic_decay") != std::string::npos);
  rfr_string_free(report);
}

TEST_CASE("c api: error state is per thread") {
  CHECK(rfr_dataset_shape(nullptr, nullptr, nullptr) == RFR_ERR_NULL_ARGUMENT);
  std::string other = "unset";
  std::thread th([&] { other = rfr_last_error(); });
  th.join();
  CHECK(other.empty());
  CHECK(std::strlen(rfr_last_error()) > 0);
}
