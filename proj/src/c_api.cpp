#include "rfr/rfr.h"

#include "rfr/data_io.hpp"
#include "rfr/error.hpp"
#include "rfr/harness.hpp"
#include "rfr/shift.hpp"
#include "rfr/theory.hpp"

#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <string>
#include <vector>

struct rfr_dataset {
  rfr::Dataset data;
};

struct rfr_config {
  rfr::harness::ExperimentConfig cfg;
};

struct rfr_model {
  rfr::nn::ModelParams params;
};

namespace {

thread_local std::string g_last_error;

rfr_status status_of(rfr::ErrorKind kind) {
  using rfr::ErrorKind;
  switch (kind) {
    case ErrorKind::kShape: return RFR_ERR_SHAPE;
    case ErrorKind::kEmptyBatch: return RFR_ERR_EMPTY_BATCH;
    case ErrorKind::kDegenerateGroup: return RFR_ERR_DEGENERATE_GROUP;
    case ErrorKind::kNumeric: return RFR_ERR_NUMERIC;
    case ErrorKind::kValidation: return RFR_ERR_VALIDATION;
    case ErrorKind::kSchema: return RFR_ERR_SCHEMA;
    case ErrorKind::kEmptyData: return RFR_ERR_EMPTY_DATA;
    case ErrorKind::kPartition: return RFR_ERR_PARTITION;
    case ErrorKind::kSize: return RFR_ERR_SIZE;
    case ErrorKind::kDegenerateVariance: return RFR_ERR_DEGENERATE_VARIANCE;
    case ErrorKind::kUsage: return RFR_ERR_USAGE;
    case ErrorKind::kIo: return RFR_ERR_IO;
  }
  return RFR_ERR_INTERNAL;
}

// Runs body, translating exceptions into status codes and the thread-local
// message.
template <typename F>
rfr_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return RFR_OK;
  } catch (const rfr::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return RFR_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RFR_ERR_INTERNAL;
  }
}

rfr_status null_argument(const char* name) {
  g_last_error = std::string("argument '") + name + "' is NULL";
  return RFR_ERR_NULL_ARGUMENT;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::string> collect(const char* const* items, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!items[i]) rfr::fail(rfr::ErrorKind::kUsage, "override " + std::to_string(i) + " is NULL");
    out.emplace_back(items[i]);
  }
  return out;
}

rfr::harness::Method method_of(rfr_method m) {
  switch (m) {
    case RFR_METHOD_MLP: return rfr::harness::Method::kMlp;
    case RFR_METHOD_REG: return rfr::harness::Method::kReg;
    case RFR_METHOD_RFR: return rfr::harness::Method::kRfr;
  }
  rfr::fail(rfr::ErrorKind::kUsage, "unknown method code " + std::to_string(static_cast<int>(m)));
}

}  // namespace

extern "C" {

const char* rfr_last_error(void) { return g_last_error.c_str(); }

const char* rfr_status_name(rfr_status status) {
  switch (status) {
    case RFR_OK: return "ok";
    case RFR_ERR_SHAPE: return "shape";
    case RFR_ERR_EMPTY_BATCH: return "empty-batch";
    case RFR_ERR_DEGENERATE_GROUP: return "degenerate-group";
    case RFR_ERR_NUMERIC: return "numeric";
    case RFR_ERR_VALIDATION: return "validation";
    case RFR_ERR_SCHEMA: return "schema";
    case RFR_ERR_EMPTY_DATA: return "empty-data";
    case RFR_ERR_PARTITION: return "partition";
    case RFR_ERR_SIZE: return "size";
    case RFR_ERR_DEGENERATE_VARIANCE: return "degenerate-variance";
    case RFR_ERR_USAGE: return "usage";
    case RFR_ERR_IO: return "io";
    case RFR_ERR_NULL_ARGUMENT: return "null-argument";
    case RFR_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int rfr_exit_code(rfr_status status) {
  switch (status) {
    case RFR_OK: return 0;
    case RFR_ERR_USAGE:
    case RFR_ERR_NULL_ARGUMENT: return 1;
    case RFR_ERR_NUMERIC: return 3;
    default: return 2;
  }
}

const char* rfr_version(void) { return "1.0.0"; }

void rfr_string_free(char* text) { std::free(text); }

rfr_status rfr_dataset_load_csv(const char* csv_path, const char* schema_path,
                                rfr_dataset** out, size_t* dropped_rows) {
  if (!csv_path) return null_argument("csv_path");
  if (!schema_path) return null_argument("schema_path");
  if (!out) return null_argument("out");
  return guarded([&] {
    auto loaded = rfr::io::load_csv(csv_path, rfr::io::load_schema(schema_path));
    *out = new rfr_dataset{std::move(loaded.data)};
    if (dropped_rows) *dropped_rows = loaded.dropped_rows;
  });
}

rfr_status rfr_dataset_from_arrays(const double* x, const int* y, const int* a, size_t rows,
                                   size_t cols, rfr_dataset** out) {
  if (!x && rows * cols > 0) return null_argument("x");
  if (!y && rows > 0) return null_argument("y");
  if (!a && rows > 0) return null_argument("a");
  if (!out) return null_argument("out");
  return guarded([&] {
    rfr::Dataset d;
    d.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (size_t i = 0; i < rows; ++i) {
      for (size_t j = 0; j < cols; ++j) {
        d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[i * cols + j];
      }
    }
    d.y.assign(y, y + rows);
    d.a.assign(a, a + rows);
    for (size_t j = 0; j < cols; ++j) d.feature_names.push_back("x" + std::to_string(j));
    d.provenance = "arrays";
    d.validate();
    *out = new rfr_dataset{std::move(d)};
  });
}

rfr_status rfr_dataset_save(const rfr_dataset* data, const char* path) {
  if (!data) return null_argument("data");
  if (!path) return null_argument("path");
  return guarded([&] { rfr::io::save_dataset(data->data, path); });
}

rfr_status rfr_dataset_shape(const rfr_dataset* data, size_t* rows, size_t* cols) {
  if (!data) return null_argument("data");
  return guarded([&] {
    if (rows) *rows = static_cast<size_t>(data->data.rows());
    if (cols) *cols = static_cast<size_t>(data->data.cols());
  });
}

rfr_status rfr_dataset_copy(const rfr_dataset* data, double* x, int* y, int* a) {
  if (!data) return null_argument("data");
  return guarded([&] {
    const auto& d = data->data;
    const auto cols = static_cast<size_t>(d.cols());
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      if (x) {
        for (Eigen::Index j = 0; j < d.cols(); ++j) {
          x[static_cast<size_t>(i) * cols + static_cast<size_t>(j)] = d.x(i, j);
        }
      }
      if (y) y[i] = d.y[static_cast<size_t>(i)];
      if (a) a[i] = d.a[static_cast<size_t>(i)];
    }
  });
}

void rfr_dataset_free(rfr_dataset* data) { delete data; }

rfr_status rfr_shift_make(const rfr_dataset* data, double alpha, double beta, uint64_t seed,
                          rfr_orientation orientation, int64_t n_source, int64_t n_target,
                          rfr_dataset** source, rfr_dataset** target) {
  if (!data) return null_argument("data");
  if (!source) return null_argument("source");
  if (!target) return null_argument("target");
  return guarded([&] {
    rfr::shift::ShiftConfig sc;
    sc.alpha = alpha;
    sc.beta = beta;
    sc.seed = seed;
    sc.orientation = orientation == RFR_SHIFTED_TARGET ? rfr::shift::Orientation::kShiftedTarget
                                                       : rfr::shift::Orientation::kShiftedSource;
    if (n_source >= 0) sc.n_source = n_source;
    if (n_target >= 0) sc.n_target = n_target;
    auto split = rfr::shift::make_shift(data->data, sc);
    auto* s = new rfr_dataset{std::move(split.source)};
    *target = new rfr_dataset{std::move(split.target)};
    *source = s;
  });
}

rfr_status rfr_config_parse(const char* text, const char* const* overrides, size_t n_overrides,
                            rfr_config** out) {
  if (!text) return null_argument("text");
  if (!overrides && n_overrides > 0) return null_argument("overrides");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new rfr_config{rfr::harness::parse_config(text, collect(overrides, n_overrides))};
  });
}

rfr_status rfr_config_load(const char* path, const char* const* overrides, size_t n_overrides,
                           rfr_config** out) {
  if (!path) return null_argument("path");
  if (!overrides && n_overrides > 0) return null_argument("overrides");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new rfr_config{rfr::harness::load_config(path, collect(overrides, n_overrides))};
  });
}

rfr_status rfr_config_to_json(const rfr_config* config, char** json) {
  if (!config) return null_argument("config");
  if (!json) return null_argument("json");
  return guarded([&] { *json = copy_string(config->cfg.to_json().dump(2)); });
}

rfr_status rfr_config_output_dir(const rfr_config* config, char** path) {
  if (!config) return null_argument("config");
  if (!path) return null_argument("path");
  return guarded([&] { *path = copy_string(config->cfg.output); });
}

void rfr_config_free(rfr_config* config) { delete config; }

rfr_status rfr_prepare_data(const rfr_config* config, uint64_t seed, rfr_dataset** source,
                            rfr_dataset** target) {
  if (!config) return null_argument("config");
  if (!source) return null_argument("source");
  if (!target) return null_argument("target");
  return guarded([&] {
    auto split = rfr::harness::prepare_data(config->cfg, seed);
    auto* s = new rfr_dataset{std::move(split.source)};
    *target = new rfr_dataset{std::move(split.target)};
    *source = s;
  });
}

rfr_status rfr_train(const rfr_dataset* data, const rfr_config* config, rfr_method method,
                     double lambda, uint64_t seed, rfr_model** out) {
  if (!data) return null_argument("data");
  if (!config) return null_argument("config");
  if (!out) return null_argument("out");
  return guarded([&] {
    auto fit = rfr::harness::train_method(config->cfg, data->data, method_of(method), lambda, seed);
    *out = new rfr_model{std::move(fit.result.params)};
  });
}

rfr_status rfr_model_predict(const rfr_model* model, const rfr_dataset* data, double* out) {
  if (!model) return null_argument("model");
  if (!data) return null_argument("data");
  if (!out) return null_argument("out");
  return guarded([&] {
    const Eigen::VectorXd f = rfr::nn::forward(model->params, data->data.x);
    std::memcpy(out, f.data(), sizeof(double) * static_cast<size_t>(f.size()));
  });
}

rfr_status rfr_model_parameter_count(const rfr_model* model, size_t* count) {
  if (!model) return null_argument("model");
  if (!count) return null_argument("count");
  return guarded([&] { *count = static_cast<size_t>(model->params.parameter_count()); });
}

void rfr_model_free(rfr_model* model) { delete model; }

rfr_status rfr_evaluate(const rfr_model* model, const rfr_dataset* data, double threshold,
                        rfr_fairness* out) {
  if (!model) return null_argument("model");
  if (!data) return null_argument("data");
  if (!out) return null_argument("out");
  return guarded([&] {
    const auto r = rfr::harness::evaluate(model->params, data->data, threshold);
    out->accuracy = r.accuracy;
    out->delta_dp = r.delta_dp;
    out->eo_defined = r.delta_eo ? 1 : 0;
    out->delta_eo = r.delta_eo ? *r.delta_eo : std::numeric_limits<double>::quiet_NaN();
    out->n0 = static_cast<size_t>(r.n0);
    out->n1 = static_cast<size_t>(r.n1);
  });
}

rfr_status rfr_check_bound(const rfr_model* model, const rfr_dataset* source,
                           const rfr_dataset* target, rfr_bound* out) {
  if (!model) return null_argument("model");
  if (!source) return null_argument("source");
  if (!target) return null_argument("target");
  if (!out) return null_argument("out");
  return guarded([&] {
    const auto b = rfr::harness::check_bound(model->params, source->data, target->data);
    *out = {b.dp_source, b.dp_target, b.delta0, b.delta1, b.bound, b.satisfied ? 1 : 0};
  });
}

rfr_status rfr_run_experiment(const rfr_config* config, char** summary) {
  if (!config) return null_argument("config");
  return guarded([&] {
    const auto out = rfr::harness::run_experiment(config->cfg, true);
    if (summary) {
      *summary = copy_string(rfr::harness::format_table(rfr::harness::summarize(out.records)));
    }
  });
}

rfr_status rfr_verify_theory(uint64_t seed, int* all_passed, char** report) {
  if (!all_passed) return null_argument("all_passed");
  return guarded([&] {
    rfr::theory::SuiteOptions options;
    options.seed = seed;
    const auto checks = rfr::theory::run_theory_suite(options);
    nlohmann::json j = nlohmann::json::array();
    bool ok = true;
    for (const auto& c : checks) {
      ok = ok && c.passed;
      j.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    }
    *all_passed = ok ? 1 : 0;
    if (report) *report = copy_string(j.dump(2));
  });
}

rfr_status rfr_report(const char* const* jsonl_paths, size_t n_paths, char** table) {
  if (!jsonl_paths && n_paths > 0) return null_argument("jsonl_paths");
  if (!table) return null_argument("table");
  return guarded([&] {
    if (n_paths == 0) rfr::fail(rfr::ErrorKind::kUsage, "report needs at least one records file");
    std::vector<nlohmann::json> records;
    for (const auto& p : collect(jsonl_paths, n_paths)) {
      auto r = rfr::harness::read_records(p);
      records.insert(records.end(), r.begin(), r.end());
    }
    if (records.empty()) rfr::fail(rfr::ErrorKind::kEmptyData, "no records found");
    *table = copy_string(rfr::harness::format_table(rfr::harness::summarize(records)));
  });
}

}  // extern "C"
