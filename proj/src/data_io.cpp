#include "rfr/data_io.hpp"

#include "rfr/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace rfr::io {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

bool is_missing(const std::string& field) { return field.empty() || field == "?"; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  fail(ErrorKind::kSchema, "schema key '" + key + "' expects true or false, got '" + value + "'");
}

std::string quote_if_needed(const std::string& field, char delimiter) {
  const bool needs = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) !=
                         std::string::npos ||
                     (!field.empty() && (field.front() == ' ' || field.back() == ' '));
  if (!needs) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += quote_if_needed(items[i], ',');
  }
  return out;
}

double parse_number(const std::string& text, const std::string& column, std::size_t line) {
  std::string_view view = text;
  if (!view.empty() && view.front() == '+') view.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(view.data(), view.data() + view.size(), value);
  if (ec != std::errc() || ptr != view.data() + view.size() || !std::isfinite(value)) {
    fail(ErrorKind::kSchema, "line " + std::to_string(line) + ": column '" + column +
                                 "' holds '" + text + "', not a finite number");
  }
  return value;
}

struct Encoded {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<int> a;
  std::vector<std::string> names;
  std::vector<std::string> split_value;
  std::vector<Eigen::Index> numeric_columns;
  std::size_t dropped = 0;
};

Encoded encode(const RawTable& table, const SchemaConfig& schema) {
  schema.validate();
  const std::size_t label_col = table.column(schema.label);
  const std::size_t sens_col = table.column(schema.sensitive);
  std::vector<std::size_t> num_cols, cat_cols;
  for (const auto& c : schema.numeric) num_cols.push_back(table.column(c));
  for (const auto& c : schema.categorical) cat_cols.push_back(table.column(c));
  std::optional<std::size_t> split_col;
  if (schema.split_column) split_col = table.column(*schema.split_column);

  std::vector<std::size_t> used{label_col, sens_col};
  used.insert(used.end(), num_cols.begin(), num_cols.end());
  used.insert(used.end(), cat_cols.begin(), cat_cols.end());
  if (split_col) used.push_back(*split_col);

  Encoded enc;
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const bool missing = std::any_of(used.begin(), used.end(),
                                     [&](std::size_t c) { return is_missing(row[c]); });
    if (!missing) {
      kept.push_back(r);
    } else if (schema.missing == MissingPolicy::kDrop) {
      ++enc.dropped;
    } else {
      fail(ErrorKind::kSchema, "line " + std::to_string(r + 2) + " has a missing value");
    }
  }
  if (kept.empty()) fail(ErrorKind::kEmptyData, "no rows left after dropping missing values");

  std::set<std::string> groups;
  for (std::size_t r : kept) groups.insert(table.rows[r][sens_col]);
  if (groups.size() != 2 || !groups.count(schema.sensitive_group0)) {
    std::ostringstream msg;
    msg << "sensitive column '" << schema.sensitive << "' must take exactly two values "
        << "including '" << schema.sensitive_group0 << "'; found " << groups.size() << ":";
    for (const auto& g : groups) msg << " '" << g << "'";
    fail(ErrorKind::kSchema, msg.str());
  }

  std::vector<std::vector<std::string>> levels;
  for (std::size_t c : cat_cols) {
    std::set<std::string> seen;
    for (std::size_t r : kept) seen.insert(table.rows[r][c]);
    levels.emplace_back(seen.begin(), seen.end());
  }

  for (std::size_t k = 0; k < num_cols.size(); ++k) {
    enc.numeric_columns.push_back(static_cast<Eigen::Index>(enc.names.size()));
    enc.names.push_back(schema.numeric[k]);
  }
  for (std::size_t k = 0; k < cat_cols.size(); ++k) {
    for (const auto& level : levels[k]) enc.names.push_back(schema.categorical[k] + "=" + level);
  }

  const std::set<std::string> positive(schema.label_positive.begin(), schema.label_positive.end());
  enc.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kept.size()),
                                static_cast<Eigen::Index>(enc.names.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& row = table.rows[kept[i]];
    const auto ri = static_cast<Eigen::Index>(i);
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < num_cols.size(); ++k) {
      enc.x(ri, col++) = parse_number(row[num_cols[k]], schema.numeric[k], kept[i] + 2);
    }
    for (std::size_t k = 0; k < cat_cols.size(); ++k) {
      const auto& lv = levels[k];
      const auto pos = std::lower_bound(lv.begin(), lv.end(), row[cat_cols[k]]) - lv.begin();
      enc.x(ri, col + pos) = 1.0;
      col += static_cast<Eigen::Index>(lv.size());
    }
    enc.y.push_back(positive.count(row[label_col]) ? 1 : 0);
    enc.a.push_back(row[sens_col] == schema.sensitive_group0 ? 0 : 1);
    if (split_col) enc.split_value.push_back(row[*split_col]);
  }
  return enc;
}

Dataset to_dataset(const Encoded& enc, const std::vector<Eigen::Index>& rows) {
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(rows.size()), enc.x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    d.x.row(static_cast<Eigen::Index>(k)) = enc.x.row(rows[k]);
    d.y.push_back(enc.y[static_cast<std::size_t>(rows[k])]);
    d.a.push_back(enc.a[static_cast<std::size_t>(rows[k])]);
  }
  d.feature_names = enc.names;
  return d;
}

std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
  return rows;
}

std::string unique_name(std::string base, const std::vector<std::string>& taken) {
  while (std::find(taken.begin(), taken.end(), base) != taken.end()) base += "_";
  return base;
}

}  // namespace

void SchemaConfig::validate() const {
  if (label.empty()) fail(ErrorKind::kSchema, "schema needs a 'label' column");
  if (label_positive.empty()) fail(ErrorKind::kSchema, "schema needs 'label_positive'");
  if (sensitive.empty()) fail(ErrorKind::kSchema, "schema needs a 'sensitive' column");
  if (sensitive_group0.empty()) fail(ErrorKind::kSchema, "schema needs 'sensitive_group0'");
  if (label == sensitive) fail(ErrorKind::kSchema, "label and sensitive columns must differ");
  if (numeric.empty() && categorical.empty()) {
    fail(ErrorKind::kSchema, "schema lists no feature columns");
  }
  if (split_column && (split_source.empty() || split_target.empty())) {
    fail(ErrorKind::kSchema, "split_column needs split_source and split_target values");
  }
}

SchemaConfig parse_schema(std::string_view text) {
  SchemaConfig s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kSchema, "schema line " + std::to_string(lineno) + " lacks '='");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    auto list = [&] {
      std::vector<std::string> out;
      for (auto& item : split_record(value, ',')) {
        if (!item.empty()) out.push_back(item);
      }
      return out;
    };
    if (key == "label") s.label = value;
    else if (key == "label_positive") s.label_positive = list();
    else if (key == "sensitive") s.sensitive = value;
    else if (key == "sensitive_group0") s.sensitive_group0 = value;
    else if (key == "categorical") s.categorical = list();
    else if (key == "numeric") s.numeric = list();
    else if (key == "split_column") s.split_column = value;
    else if (key == "split_source") s.split_source = list();
    else if (key == "split_target") s.split_target = list();
    else if (key == "standardize") s.standardize = parse_bool(key, value);
    else if (key == "missing") {
      if (value == "drop") s.missing = MissingPolicy::kDrop;
      else if (value == "error") s.missing = MissingPolicy::kError;
      else fail(ErrorKind::kSchema, "schema key 'missing' expects drop or error");
    } else if (key == "delimiter") {
      if (value == "tab" || value == "\\t") s.delimiter = '\t';
      else if (value.size() == 1) s.delimiter = value[0];
      else fail(ErrorKind::kSchema, "delimiter must be one character");
    } else {
      fail(ErrorKind::kSchema, "unknown schema key '" + key + "' on line " + std::to_string(lineno));
    }
  }
  s.validate();
  return s;
}

SchemaConfig load_schema(const std::string& path) { return parse_schema(read_file(path)); }

std::string format_schema(const SchemaConfig& s) {
  std::ostringstream out;
  out << "label = " << s.label << "\n"
      << "label_positive = " << join_list(s.label_positive) << "\n"
      << "sensitive = " << s.sensitive << "\n"
      << "sensitive_group0 = " << s.sensitive_group0 << "\n";
  if (!s.categorical.empty()) out << "categorical = " << join_list(s.categorical) << "\n";
  if (!s.numeric.empty()) out << "numeric = " << join_list(s.numeric) << "\n";
  if (s.split_column) {
    out << "split_column = " << *s.split_column << "\n"
        << "split_source = " << join_list(s.split_source) << "\n"
        << "split_target = " << join_list(s.split_target) << "\n";
  }
  out << "missing = " << (s.missing == MissingPolicy::kDrop ? "drop" : "error") << "\n"
      << "standardize = " << (s.standardize ? "true" : "false") << "\n";
  if (s.delimiter == '\t') out << "delimiter = tab\n";
  else out << "delimiter = " << s.delimiter << "\n";
  return out.str();
}

std::size_t RawTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) fail(ErrorKind::kSchema, "column '" + name + "' not found in header");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::string> split_record(std::string_view line, char delimiter) {
  const RawTable t = parse_csv(line, delimiter);
  return t.header;
}

RawTable parse_csv(std::string_view text, char delimiter) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;      // inside quotes
  bool was_quoted = false;  // current field had quotes; keep blanks
  bool any = false;         // record has content
  auto end_field = [&] {
    record.push_back(was_quoted ? field : trim(field));
    field.clear();
    was_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    if (any || record.size() > 1 || !record.front().empty()) records.push_back(record);
    record.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && trim(field).empty()) {
      field.clear();
      quoted = true;
      was_quoted = true;
      any = true;
    } else if (c == delimiter) {
      end_field();
      any = true;
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      continue;
    } else if (!was_quoted) {
      field += c;
      if (c != ' ' && c != '\t') any = true;
    }
  }
  if (quoted) fail(ErrorKind::kSchema, "unterminated quoted field");
  if (!field.empty() || !record.empty() || was_quoted) end_record();

  RawTable table;
  if (records.empty()) return table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      fail(ErrorKind::kSchema, "record " + std::to_string(r + 1) + " has " +
                                   std::to_string(records[r].size()) + " fields, header has " +
                                   std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

RawTable read_csv(const std::string& path, char delimiter) {
  RawTable t = parse_csv(read_file(path), delimiter);
  if (t.header.empty()) fail(ErrorKind::kEmptyData, path + " has no header row");
  return t;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& columns) {
  Standardizer s;
  s.mean = Eigen::RowVectorXd::Zero(x.cols());
  s.scale = Eigen::RowVectorXd::Ones(x.cols());
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c : columns) {
    const double m = x.col(c).mean();
    const double var = (x.col(c).array() - m).square().sum() / n;
    s.mean(c) = m;
    s.scale(c) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void Standardizer::apply(Eigen::MatrixXd& x) const {
  x = ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

LoadResult load_table(const RawTable& table, const SchemaConfig& schema) {
  Encoded enc = encode(table, schema);
  if (schema.standardize) Standardizer::fit(enc.x, enc.numeric_columns).apply(enc.x);
  LoadResult out;
  out.data = to_dataset(enc, all_rows(enc.x.rows()));
  out.dropped_rows = enc.dropped;
  out.data.validate();
  return out;
}

LoadResult load_csv(const std::string& path, const SchemaConfig& schema) {
  LoadResult out = load_table(read_csv(path, schema.delimiter), schema);
  out.data.provenance = path + " (" + std::to_string(out.data.rows()) + " rows, " +
                        std::to_string(out.dropped_rows) + " dropped)";
  return out;
}

SplitResult split_by_column(const RawTable& table, const SchemaConfig& schema) {
  if (!schema.split_column) fail(ErrorKind::kSchema, "schema has no split_column");
  Encoded enc = encode(table, schema);
  const std::set<std::string> src(schema.split_source.begin(), schema.split_source.end());
  const std::set<std::string> tgt(schema.split_target.begin(), schema.split_target.end());
  std::vector<Eigen::Index> src_rows, tgt_rows;
  for (std::size_t i = 0; i < enc.split_value.size(); ++i) {
    if (src.count(enc.split_value[i])) src_rows.push_back(static_cast<Eigen::Index>(i));
    else if (tgt.count(enc.split_value[i])) tgt_rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (src_rows.empty() || tgt_rows.empty()) {
    fail(ErrorKind::kPartition, "split on '" + *schema.split_column + "' leaves the " +
                                    (src_rows.empty() ? "source" : "target") + " side empty");
  }
  SplitResult out;
  out.source = to_dataset(enc, src_rows);
  out.target = to_dataset(enc, tgt_rows);
  if (schema.standardize) {
    const Standardizer st = Standardizer::fit(out.source.x, enc.numeric_columns);
    st.apply(out.source.x);
    st.apply(out.target.x);
  }
  out.dropped_rows = enc.dropped;
  out.source.provenance = "split " + *schema.split_column + " source";
  out.target.provenance = "split " + *schema.split_column + " target";
  out.source.validate();
  out.target.validate();
  return out;
}

SplitResult split_by_column(const std::string& path, const SchemaConfig& schema) {
  SplitResult out = split_by_column(read_csv(path, schema.delimiter), schema);
  out.source.provenance = path + ": " + out.source.provenance;
  out.target.provenance = path + ": " + out.target.provenance;
  return out;
}

void save_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  std::vector<std::string> names = data.feature_names;
  if (names.empty()) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) names.push_back("x" + std::to_string(c));
  }
  const std::string label = unique_name("label", names);
  const std::string group = unique_name("group", names);

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  for (const auto& n : names) out << quote_if_needed(n, ',') << ',';
  out << label << ',' << group << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", data.x(i, c));
      out << buf << ',';
    }
    out << data.y[static_cast<std::size_t>(i)] << ',' << data.a[static_cast<std::size_t>(i)]
        << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "failed writing " + path);

  SchemaConfig s;
  s.label = label;
  s.label_positive = {"1"};
  s.sensitive = group;
  s.sensitive_group0 = "0";
  s.numeric = names;
  s.standardize = false;
  std::ofstream side(path + ".schema", std::ios::binary);
  if (!side) fail(ErrorKind::kIo, "cannot write " + path + ".schema");
  if (!data.provenance.empty()) side << "# " << data.provenance << "\n";
  side << format_schema(s);
}

void ToySpec::validate() const {
  const Eigen::Index d = mean0.size();
  if (d == 0 || mean1.size() != d || w.size() != d || cov0.rows() != d || cov0.cols() != d ||
      cov1.rows() != d || cov1.cols() != d) {
    fail(ErrorKind::kValidation, "toy spec dimensions disagree");
  }
  if (!(group1_fraction > 0.0 && group1_fraction < 1.0)) {
    fail(ErrorKind::kValidation, "group1_fraction must lie in (0, 1)");
  }
  if (!(label_noise >= 0.0)) fail(ErrorKind::kValidation, "label_noise must be nonnegative");
  for (const auto* c : {&cov0, &cov1}) {
    if (Eigen::LLT<Eigen::MatrixXd>(*c).info() != Eigen::Success) {
      fail(ErrorKind::kValidation, "toy covariance must be positive definite");
    }
  }
}

Dataset make_toy(const ToySpec& spec, Eigen::Index n, std::uint64_t seed) {
  spec.validate();
  if (n <= 0) fail(ErrorKind::kValidation, "toy dataset needs n > 0");
  const Eigen::Index d = spec.mean0.size();
  const Eigen::MatrixXd l0 = Eigen::LLT<Eigen::MatrixXd>(spec.cov0).matrixL();
  const Eigen::MatrixXd l1 = Eigen::LLT<Eigen::MatrixXd>(spec.cov1).matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution group(spec.group1_fraction);

  Dataset out;
  out.x.resize(n, d);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = group(rng) ? 1 : 0;
    for (Eigen::Index c = 0; c < d; ++c) z(c) = normal(rng);
    const Eigen::VectorXd x = a ? Eigen::VectorXd(spec.mean1 + l1 * z)
                                : Eigen::VectorXd(spec.mean0 + l0 * z);
    const double noise = spec.label_noise > 0.0 ? spec.label_noise * normal(rng) : 0.0;
    out.x.row(i) = x.transpose();
    out.a.push_back(a);
    out.y.push_back(spec.w.dot(x) + spec.bias + spec.group_bias * a + noise > 0.0 ? 1 : 0);
  }
  for (Eigen::Index c = 0; c < d; ++c) out.feature_names.push_back("x" + std::to_string(c));
  out.provenance = "toy n=" + std::to_string(n) + " seed=" + std::to_string(seed);
  return out;
}

}  // namespace rfr::io
