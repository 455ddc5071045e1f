#include "rfr/harness.hpp"

#include "rfr/error.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace rfr::harness {
namespace {

using Json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  fail(ErrorKind::kUsage, "config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& value) {
  if (value == "inf" || value == "infinity") return std::numeric_limits<double>::infinity();
  std::string_view v = value;
  if (!v.empty() && v.front() == '+') v.remove_prefix(1);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, value, "a number");
  return out;
}

long long to_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    bad_value(key, value, "an integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> to_list(const std::string& value) {
  std::vector<std::string> out;
  for (auto& item : io::split_record(value, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& item : to_list(value)) out.push_back(to_double(key, item));
  return out;
}

Eigen::VectorXd to_vector(const std::string& key, const std::string& value) {
  const auto v = to_doubles(key, value);
  if (v.empty()) bad_value(key, value, "a list of numbers");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd to_square(const std::string& key, const std::string& value) {
  const auto v = to_doubles(key, value);
  const auto d = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
  if (v.empty() || d * d != static_cast<Eigen::Index>(v.size())) {
    bad_value(key, value, "a square matrix in row-major order");
  }
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = v[static_cast<std::size_t>(i * d + j)];
  }
  return m;
}

void apply_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  if (key == "methods" || key == "method") {
    c.methods.clear();
    for (const auto& item : to_list(value)) {
      const auto m = parse_method(item);
      if (!m) bad_value(key, item, "MLP, REG or RFR");
      c.methods.push_back(*m);
    }
  } else if (key == "data") {
    if (value == "toy") c.data = DataKind::kToy;
    else if (value == "csv") c.data = DataKind::kCsv;
    else bad_value(key, value, "toy or csv");
  } else if (key == "data.path") {
    c.data_path = value;
  } else if (key == "data.schema") {
    c.schema_path = value;
  } else if (key == "toy.n") {
    c.toy_n = to_int(key, value);
  } else if (key == "toy.mean0") {
    c.toy.mean0 = to_vector(key, value);
  } else if (key == "toy.mean1") {
    c.toy.mean1 = to_vector(key, value);
  } else if (key == "toy.cov0") {
    c.toy.cov0 = to_square(key, value);
  } else if (key == "toy.cov1") {
    c.toy.cov1 = to_square(key, value);
  } else if (key == "toy.group1_fraction") {
    c.toy.group1_fraction = to_double(key, value);
  } else if (key == "toy.w") {
    c.toy.w = to_vector(key, value);
  } else if (key == "toy.bias") {
    c.toy.bias = to_double(key, value);
  } else if (key == "toy.group_bias") {
    c.toy.group_bias = to_double(key, value);
  } else if (key == "toy.label_noise") {
    c.toy.label_noise = to_double(key, value);
  } else if (key == "shift") {
    if (value == "synthetic") c.shift = ShiftKind::kSynthetic;
    else if (value == "split") c.shift = ShiftKind::kSplit;
    else if (value == "none") c.shift = ShiftKind::kNone;
    else bad_value(key, value, "synthetic, split or none");
  } else if (key == "shift.alpha") {
    c.shift_cfg.alpha = to_double(key, value);
  } else if (key == "shift.beta") {
    c.shift_cfg.beta = to_double(key, value);
  } else if (key == "shift.orientation") {
    const auto o = shift::parse_orientation(value);
    if (!o) bad_value(key, value, "shifted-source or shifted-target");
    c.shift_cfg.orientation = *o;
  } else if (key == "shift.n_source") {
    c.shift_cfg.n_source = to_int(key, value);
  } else if (key == "shift.n_target") {
    c.shift_cfg.n_target = to_int(key, value);
  } else if (key == "hidden") {
    c.hidden.clear();
    for (const auto& item : to_list(value)) c.hidden.push_back(to_int(key, item));
  } else if (key == "epochs") {
    c.train.epochs = static_cast<int>(to_int(key, value));
  } else if (key == "batch_size") {
    c.train.batch_size = to_int(key, value);
  } else if (key == "learning_rate") {
    c.train.adam.learning_rate = to_double(key, value);
  } else if (key == "weight_decay") {
    c.train.adam.weight_decay = to_double(key, value);
  } else if (key == "loss") {
    const auto v = fair::parse_loss_variant(value);
    if (!v) bad_value(key, value, "linear or cross-entropy");
    c.train.variant = *v;
  } else if (key == "lambda") {
    c.lambdas = to_doubles(key, value);
  } else if (key == "rho") {
    c.rho = to_double(key, value);
  } else if (key == "p_norm") {
    c.p_norm = to_double(key, value);
  } else if (key == "rho_relative") {
    c.rho_relative = to_bool(key, value);
  } else if (key == "rfr_form") {
    if (value == "sharpness") c.train.rfr_form = fair::RfrGradientForm::kSharpness;
    else if (value == "perturbed-only") c.train.rfr_form = fair::RfrGradientForm::kPerturbedOnly;
    else bad_value(key, value, "sharpness or perturbed-only");
  } else if (key == "update") {
    if (value == "descend-all") c.train.update = fair::UpdateRule::kDescendAll;
    else if (value == "literal") c.train.update = fair::UpdateRule::kLiteral;
    else bad_value(key, value, "descend-all or literal");
  } else if (key == "seeds") {
    c.seeds.clear();
    for (const auto& item : to_list(value)) {
      const long long s = to_int(key, item);
      if (s < 0) bad_value(key, item, "a nonnegative integer");
      c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  } else if (key == "threshold") {
    c.threshold = to_double(key, value);
  } else if (key == "output") {
    c.output = value;
  } else if (key == "threads") {
    c.threads = static_cast<int>(to_int(key, value));
  } else {
    fail(ErrorKind::kUsage, "unknown config key '" + key + "'");
  }
}

void apply_line(ExperimentConfig& c, const std::string& line, const std::string& where) {
  const std::string t = trim(line);
  if (t.empty() || t.front() == '#') return;
  const auto eq = t.find('=');
  if (eq == std::string::npos) fail(ErrorKind::kUsage, where + ": expected key = value");
  apply_key(c, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
}

Json p_json(double p) { return std::isinf(p) ? Json("inf") : Json(p); }

Json vec_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

Json mat_json(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

Json fairness_json(const FairnessReport& r) {
  return {{"accuracy", r.accuracy},
          {"delta_dp", r.delta_dp},
          {"delta_eo", r.delta_eo ? Json(*r.delta_eo) : Json(nullptr)},
          {"threshold", r.threshold},
          {"n0", r.n0},
          {"n1", r.n1}};
}

std::vector<Eigen::Index> rows_of(const std::vector<int>& a, int group) {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == group) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

double mean_over(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  double s = 0.0;
  for (Eigen::Index r : rows) s += v(r);
  return s / static_cast<double>(rows.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

FairnessReport evaluate_predictions(const Eigen::VectorXd& pred, const std::vector<int>& y,
                                    const std::vector<int>& a, double threshold) {
  if (static_cast<std::size_t>(pred.size()) != y.size() || y.size() != a.size()) {
    fail(ErrorKind::kShape, "prediction, label and group lengths differ");
  }
  FairnessReport r;
  r.threshold = threshold;
  double pos[2] = {0, 0}, cnt[2] = {0, 0}, tp[2] = {0, 0}, p_cnt[2] = {0, 0};
  double correct = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int yhat = pred(static_cast<Eigen::Index>(i)) >= threshold ? 1 : 0;
    const int g = a[i];
    if (g != 0 && g != 1) fail(ErrorKind::kValidation, "group values must be 0 or 1");
    cnt[g] += 1;
    pos[g] += yhat;
    if (y[i] == 1) {
      p_cnt[g] += 1;
      tp[g] += yhat;
    }
    correct += (yhat == y[i]);
  }
  if (cnt[0] == 0 || cnt[1] == 0) {
    fail(ErrorKind::kDegenerateGroup, "evaluation needs rows from both groups");
  }
  r.n0 = static_cast<Eigen::Index>(cnt[0]);
  r.n1 = static_cast<Eigen::Index>(cnt[1]);
  r.accuracy = correct / static_cast<double>(y.size());
  r.delta_dp = std::abs(pos[0] / cnt[0] - pos[1] / cnt[1]);
  if (p_cnt[0] > 0 && p_cnt[1] > 0) r.delta_eo = std::abs(tp[0] / p_cnt[0] - tp[1] / p_cnt[1]);
  return r;
}

FairnessReport evaluate(const nn::ModelParams& params, const Dataset& data, double threshold) {
  return evaluate_predictions(nn::forward(params, data.x), data.y, data.a, threshold);
}

double soft_dp(const Eigen::VectorXd& pred, const std::vector<int>& a) {
  const auto g0 = rows_of(a, 0);
  const auto g1 = rows_of(a, 1);
  if (g0.empty() || g1.empty()) fail(ErrorKind::kDegenerateGroup, "soft DP needs both groups");
  return std::abs(mean_over(pred, g0) - mean_over(pred, g1));
}

BoundReport check_bound_predictions(const Eigen::VectorXd& ps, const std::vector<int>& as,
                                    const Eigen::VectorXd& pt, const std::vector<int>& at) {
  const auto s0 = rows_of(as, 0), s1 = rows_of(as, 1);
  const auto t0 = rows_of(at, 0), t1 = rows_of(at, 1);
  if (s0.empty() || s1.empty() || t0.empty() || t1.empty()) {
    fail(ErrorKind::kDegenerateGroup, "bound check needs both groups on both sides");
  }
  const double ms0 = mean_over(ps, s0), ms1 = mean_over(ps, s1);
  const double mt0 = mean_over(pt, t0), mt1 = mean_over(pt, t1);
  BoundReport b;
  b.dp_source = std::abs(ms0 - ms1);
  b.dp_target = std::abs(mt0 - mt1);
  b.delta0 = std::abs(ms0 - mt0);
  b.delta1 = std::abs(ms1 - mt1);
  b.bound = b.dp_source + b.delta0 + b.delta1;
  b.satisfied = b.dp_target <= b.bound + 1e-12;
  return b;
}

BoundReport check_bound(const nn::ModelParams& params, const Dataset& source,
                        const Dataset& target) {
  return check_bound_predictions(nn::forward(params, source.x), source.a,
                                 nn::forward(params, target.x), target.a);
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kMlp: return "MLP";
    case Method::kReg: return "REG";
    case Method::kRfr: return "RFR";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view text) {
  std::string up(text);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "MLP") return Method::kMlp;
  if (up == "REG") return Method::kReg;
  if (up == "RFR") return Method::kRfr;
  return std::nullopt;
}

void ExperimentConfig::validate() const {
  auto usage = [](const std::string& msg) { fail(ErrorKind::kUsage, msg); };
  if (methods.empty()) usage("config key 'methods' lists no method");
  if (!rho) usage("config key 'rho' is required");
  if (!p_norm) usage("config key 'p_norm' is required");
  if (!(*rho >= 0.0) || std::isinf(*rho)) usage("config key 'rho' must be finite and >= 0");
  if (!(*p_norm > 1.0)) usage("config key 'p_norm' must exceed 1");
  if (data == DataKind::kCsv) {
    if (data_path.empty()) usage("config key 'data.path' is required when data = csv");
    if (schema_path.empty()) usage("config key 'data.schema' is required when data = csv");
  }
  if (data == DataKind::kToy && toy_n <= 0) usage("config key 'toy.n' must be positive");
  if (shift == ShiftKind::kSplit && data != DataKind::kCsv) {
    usage("config key 'shift' = split needs data = csv");
  }
  if (hidden.empty()) usage("config key 'hidden' lists no layer");
  for (Eigen::Index h : hidden) {
    if (h <= 0) usage("config key 'hidden' needs positive widths");
  }
  if (lambdas.empty()) usage("config key 'lambda' lists no value");
  for (double l : lambdas) {
    if (!(l >= 0.0) || std::isinf(l)) usage("config key 'lambda' needs finite values >= 0");
  }
  if (seeds.empty()) usage("config key 'seeds' lists no seed");
  if (!(threshold > 0.0 && threshold <= 1.0)) usage("config key 'threshold' must lie in (0, 1]");
  if (threads < 1) usage("config key 'threads' must be at least 1");
  if (output.empty()) usage("config key 'output' is empty");
  try {
    shift_cfg.validate();
    if (data == DataKind::kToy) toy.validate();
    fair::TrainConfig t = train;
    t.perturbation.rho = *rho;
    t.perturbation.p = *p_norm;
    t.validate();
  } catch (const Error& e) {
    usage(std::string("invalid config: ") + e.what());
  }
}

Json ExperimentConfig::to_json() const {
  Json m = Json::array();
  for (Method x : methods) m.push_back(to_string(x));
  Json j;
  j["methods"] = m;
  j["data"] = data == DataKind::kToy ? "toy" : "csv";
  if (data == DataKind::kCsv) {
    j["data.path"] = data_path;
    j["data.schema"] = schema_path;
  } else {
    j["toy"] = {{"n", toy_n},
                {"mean0", vec_json(toy.mean0)},
                {"mean1", vec_json(toy.mean1)},
                {"cov0", mat_json(toy.cov0)},
                {"cov1", mat_json(toy.cov1)},
                {"group1_fraction", toy.group1_fraction},
                {"w", vec_json(toy.w)},
                {"bias", toy.bias},
                {"group_bias", toy.group_bias},
                {"label_noise", toy.label_noise}};
  }
  j["shift"] = shift == ShiftKind::kSynthetic ? "synthetic"
               : shift == ShiftKind::kSplit   ? "split"
                                              : "none";
  if (shift == ShiftKind::kSynthetic) {
    j["shift.alpha"] = shift_cfg.alpha;
    j["shift.beta"] = shift_cfg.beta;
    j["shift.orientation"] = shift::to_string(shift_cfg.orientation);
    j["shift.n_source"] = shift_cfg.n_source ? Json(*shift_cfg.n_source) : Json("floor(N/3)");
    j["shift.n_target"] = shift_cfg.n_target ? Json(*shift_cfg.n_target) : Json("floor(N/3)");
  }
  j["hidden"] = hidden;
  j["epochs"] = train.epochs;
  j["batch_size"] = train.batch_size;
  j["learning_rate"] = train.adam.learning_rate;
  j["weight_decay"] = train.adam.weight_decay;
  j["adam_beta1"] = train.adam.beta1;
  j["adam_beta2"] = train.adam.beta2;
  j["adam_epsilon"] = train.adam.epsilon;
  j["loss"] = fair::to_string(train.variant);
  j["rfr_form"] = fair::to_string(train.rfr_form);
  j["update"] = fair::to_string(train.update);
  j["lambda"] = lambdas;
  j["rho"] = rho ? Json(*rho) : Json(nullptr);
  j["p_norm"] = p_norm ? p_json(*p_norm) : Json(nullptr);
  j["rho_relative"] = rho_relative;
  j["seeds"] = seeds;
  j["threshold"] = threshold;
  return j;
}

ExperimentConfig parse_config(std::string_view text, const std::vector<std::string>& overrides) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    apply_line(c, line, "config line " + std::to_string(lineno));
  }
  for (const auto& o : overrides) apply_line(c, o, "override '" + o + "'");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), overrides);
}

DataSplit prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  DataSplit out;
  Dataset full;
  if (cfg.data == DataKind::kToy) {
    full = io::make_toy(cfg.toy, cfg.toy_n, seed);
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(full.cols()));
    for (Eigen::Index c = 0; c < full.cols(); ++c) cols[static_cast<std::size_t>(c)] = c;
    io::Standardizer::fit(full.x, cols).apply(full.x);
  } else {
    io::SchemaConfig schema;
    try {
      schema = io::load_schema(cfg.schema_path);
    } catch (const Error& e) {
      fail(e.kind(), "config key 'data.schema': " + std::string(e.what()));
    }
    try {
      if (cfg.shift == ShiftKind::kSplit) {
        auto split = io::split_by_column(cfg.data_path, schema);
        out.source = std::move(split.source);
        out.target = std::move(split.target);
        out.dropped_rows = split.dropped_rows;
        return out;
      }
      auto loaded = io::load_csv(cfg.data_path, schema);
      full = std::move(loaded.data);
      out.dropped_rows = loaded.dropped_rows;
    } catch (const Error& e) {
      fail(e.kind(), "config key 'data.path': " + std::string(e.what()));
    }
  }
  if (cfg.shift == ShiftKind::kSynthetic) {
    shift::ShiftConfig sc = cfg.shift_cfg;
    sc.seed = seed;
    auto split = shift::make_shift(full, sc);
    out.source = std::move(split.source);
    out.target = std::move(split.target);
  } else {
    // Uniform disjoint halves.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(full.rows()));
    for (Eigen::Index i = 0; i < full.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto half = idx.begin() + static_cast<std::ptrdiff_t>(idx.size() / 2);
    out.source = full.subset({idx.begin(), half});
    out.target = full.subset({half, idx.end()});
  }
  return out;
}

Json record_json(const CellResult& cell, const ExperimentConfig& cfg) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["method"] = to_string(cell.method);
  j["lambda"] = cell.lambda;
  j["seed"] = cell.seed;
  j["status"] = cell.ok ? "ok" : "failed";
  j["config"] = cfg.to_json();
  j["resolved"] = {{"lambda", cell.lambda},
                   {"rho", cell.rho_effective},
                   {"p_norm", p_json(*cfg.p_norm)},
                   {"loss", fair::to_string(cfg.train.variant)},
                   {"seed", cell.seed},
                   {"std_label", "sample std over seeds (n-1)"}};
  if (!cell.ok) {
    j["error"] = cell.error;
    return j;
  }
  j["source"] = fairness_json(cell.source);
  j["target"] = fairness_json(cell.target);
  j["bound"] = {{"dp_source", cell.bound.dp_source}, {"dp_target", cell.bound.dp_target},
                {"delta0", cell.bound.delta0},       {"delta1", cell.bound.delta1},
                {"bound", cell.bound.bound},         {"satisfied", cell.bound.satisfied}};
  j["final_loss"] = {{"clf", cell.final_loss.clf},       {"dp", cell.final_loss.dp},
                     {"rfr_s0", cell.final_loss.rfr_s0}, {"rfr_s1", cell.final_loss.rfr_s1},
                     {"total", cell.final_loss.total}};
  return j;
}

MethodFit train_method(const ExperimentConfig& cfg, const Dataset& source, Method method,
                       double lambda, std::uint64_t seed) {
  if (!cfg.rho || !cfg.p_norm) {
    fail(ErrorKind::kUsage, "config keys 'rho' and 'p_norm' are required");
  }
  nn::Architecture arch;
  arch.input_dim = source.cols();
  arch.hidden = cfg.hidden;
  fair::TrainConfig t = cfg.train;
  t.seed = seed;
  t.lambda = method == Method::kMlp ? 0.0 : lambda;
  t.perturbation.p = *cfg.p_norm;
  t.perturbation.rho = method == Method::kReg ? 0.0 : *cfg.rho;
  if (cfg.rho_relative && t.perturbation.rho > 0.0) {
    t.perturbation.rho *= fair::lp_norm(nn::ModelParams::glorot(arch, seed).flatten(), *cfg.p_norm);
  }
  MethodFit fit;
  fit.rho_effective = t.perturbation.rho;
  fit.result = fair::train(source, arch, t);
  return fit;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg, bool write_files) {
  cfg.validate();
  struct Job {
    Method method;
    double lambda;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (Method m : cfg.methods) {
    const std::vector<double> grid = m == Method::kMlp ? std::vector<double>{0.0} : cfg.lambdas;
    for (double l : grid) {
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) jobs.push_back({m, l, s});
    }
  }
  std::vector<DataSplit> data;
  for (std::uint64_t seed : cfg.seeds) data.push_back(prepare_data(cfg, seed));

  std::vector<CellResult> cells(jobs.size());
  auto run_job = [&](std::size_t k) {
    const Job& job = jobs[k];
    const std::uint64_t seed = cfg.seeds[job.seed_index];
    const DataSplit& split = data[job.seed_index];
    CellResult& cell = cells[k];
    cell.method = job.method;
    cell.lambda = job.lambda;
    cell.seed = seed;
    try {
      const MethodFit fit = train_method(cfg, split.source, job.method, job.lambda, seed);
      cell.rho_effective = fit.rho_effective;
      const fair::TrainResult& r = fit.result;
      cell.source = evaluate(r.params, split.source, cfg.threshold);
      cell.target = evaluate(r.params, split.target, cfg.threshold);
      cell.bound = check_bound(r.params, split.source, split.target);
      cell.final_loss = r.trace.back();
      cell.ok = true;
    } catch (const Error& e) {
      cell.ok = false;
      cell.error = std::string(rfr::to_string(e.kind())) + ": " + e.what();
    }
  };

  const int workers = std::min<int>(cfg.threads, static_cast<int>(jobs.size()));
  if (workers <= 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) run_job(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) run_job(k);
      });
    }
    for (auto& t : pool) t.join();
  }

  ExperimentOutput out;
  out.cells = std::move(cells);
  for (const auto& c : out.cells) out.records.push_back(record_json(c, cfg));
  if (!write_files) return out;

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.output, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create output directory " + cfg.output);
  const fs::path dir(cfg.output);
  std::ofstream jsonl(dir / "records.jsonl", std::ios::binary);
  std::ofstream csv(dir / "cells.csv", std::ios::binary);
  if (!jsonl || !csv) fail(ErrorKind::kIo, "cannot write into " + cfg.output);
  for (const auto& r : out.records) jsonl << r.dump() << '\n';
  csv << "method,lambda,seed,status,source_accuracy,source_delta_dp,source_delta_eo,"
         "target_accuracy,target_delta_dp,target_delta_eo,bound_satisfied\n";
  for (const auto& c : out.cells) {
    csv << to_string(c.method) << ',' << fmt(c.lambda) << ',' << c.seed << ','
        << (c.ok ? "ok" : "failed");
    if (c.ok) {
      csv << ',' << fmt(c.source.accuracy) << ',' << fmt(c.source.delta_dp) << ','
          << (c.source.delta_eo ? fmt(*c.source.delta_eo) : "") << ',' << fmt(c.target.accuracy)
          << ',' << fmt(c.target.delta_dp) << ','
          << (c.target.delta_eo ? fmt(*c.target.delta_eo) : "") << ','
          << (c.bound.satisfied ? "true" : "false");
    } else {
      csv << ",,,,,,,";
    }
    csv << '\n';
  }
  std::ofstream trade(dir / "tradeoff.csv", std::ios::binary);
  if (!trade) fail(ErrorKind::kIo, "cannot write into " + cfg.output);
  trade << "method,lambda,runs,failed,target_accuracy_mean,target_accuracy_std,"
           "target_delta_dp_mean,target_delta_dp_std\n";
  for (const auto& row : summarize(out.records)) {
    trade << row.method << ',' << fmt(row.lambda) << ',' << row.runs << ',' << row.failed << ','
          << fmt(row.acc_mean) << ',' << fmt(row.acc_std) << ',' << fmt(row.dp_mean) << ','
          << fmt(row.dp_std) << '\n';
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<Json>& records) {
  struct Acc {
    SummaryRow row;
    std::vector<double> acc, dp, eo, src_acc, src_dp;
  };
  std::vector<Acc> groups;
  for (const auto& r : records) {
    if (r.value("schema_version", 0) != kSchemaVersion) {
      fail(ErrorKind::kSchema, "record has an unsupported schema_version");
    }
    const std::string method = r.at("method").get<std::string>();
    const double lambda = r.at("lambda").get<double>();
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Acc& g) {
      return g.row.method == method && g.row.lambda == lambda;
    });
    if (it == groups.end()) {
      groups.push_back({});
      it = std::prev(groups.end());
      it->row.method = method;
      it->row.lambda = lambda;
    }
    it->row.runs += 1;
    if (r.at("status") != "ok") {
      it->row.failed += 1;
      continue;
    }
    const Json& t = r.at("target");
    it->acc.push_back(t.at("accuracy").get<double>());
    it->dp.push_back(t.at("delta_dp").get<double>());
    if (!t.at("delta_eo").is_null()) it->eo.push_back(t.at("delta_eo").get<double>());
    it->src_acc.push_back(r.at("source").at("accuracy").get<double>());
    it->src_dp.push_back(r.at("source").at("delta_dp").get<double>());
  }
  std::vector<SummaryRow> out;
  for (auto& g : groups) {
    double unused = 0.0;
    mean_std(g.acc, g.row.acc_mean, g.row.acc_std);
    mean_std(g.dp, g.row.dp_mean, g.row.dp_std);
    mean_std(g.eo, g.row.eo_mean, g.row.eo_std);
    mean_std(g.src_acc, g.row.src_acc_mean, unused);
    mean_std(g.src_dp, g.row.src_dp_mean, unused);
    g.row.eo_runs = static_cast<int>(g.eo.size());
    out.push_back(g.row);
  }
  return out;
}

std::vector<Json> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  std::vector<Json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      fail(ErrorKind::kSchema, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string format_pct(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * mean, 100.0 * sd);
  return buf;
}

std::string format_table(const std::vector<SummaryRow>& rows) {
  // Pads by code points so the multibyte plus-minus sign keeps columns aligned.
  auto pad = [](const std::string& s, std::size_t width) {
    std::size_t points = 0;
    for (unsigned char c : s) points += (c & 0xC0) != 0x80;
    return s + std::string(points < width ? width - points : 1, ' ');
  };
  std::ostringstream out;
  char num[64];
  out << pad("method", 7) << pad("lambda", 9) << pad("runs", 6) << pad("acc (%)", 15)
      << pad("dDP (%)", 15) << "dEO (%)\n";
  for (const auto& r : rows) {
    const int ok = r.runs - r.failed;
    std::snprintf(num, sizeof num, "%g", r.lambda);
    out << pad(r.method, 7) << pad(num, 9) << pad(std::to_string(r.runs), 6)
        << pad(ok ? format_pct(r.acc_mean, r.acc_std) : "n/a", 15)
        << pad(ok ? format_pct(r.dp_mean, r.dp_std) : "n/a", 15)
        << (r.eo_runs ? format_pct(r.eo_mean, r.eo_std) : "undefined") << '\n';
    if (r.failed) out << "       " << r.failed << " failed run(s) excluded\n";
  }
  out << "target metrics; mean±std over seeds, std is the sample std (n-1)\n";
  return out.str();
}

}  // namespace rfr::harness
