#include "rfr/dataset.hpp"

#include "rfr/error.hpp"

#include <cmath>
#include <string>

namespace rfr {

std::vector<Eigen::Index> Dataset::group_indices(int group) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == group) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

Eigen::Index Dataset::group_size(int group) const {
  Eigen::Index n = 0;
  for (int v : a) n += (v == group);
  return n;
}

void Dataset::validate() const {
  const auto n = static_cast<std::size_t>(x.rows());
  if (y.size() != n || a.size() != n) {
    fail(ErrorKind::kValidation,
         "dataset rows disagree: x has " + std::to_string(n) + ", y has " +
             std::to_string(y.size()) + ", a has " + std::to_string(a.size()));
  }
  if (!feature_names.empty() &&
      feature_names.size() != static_cast<std::size_t>(x.cols())) {
    fail(ErrorKind::kValidation, "feature name count does not match columns");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if ((y[i] != 0 && y[i] != 1) || (a[i] != 0 && a[i] != 1)) {
      fail(ErrorKind::kValidation,
           "row " + std::to_string(i) + ": label and group must be 0 or 1");
    }
  }
  if (!x.allFinite()) fail(ErrorKind::kValidation, "non-finite feature value");
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.reserve(rows.size());
  out.a.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.x.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
    out.y.push_back(y[static_cast<std::size_t>(rows[k])]);
    out.a.push_back(a[static_cast<std::size_t>(rows[k])]);
  }
  out.feature_names = feature_names;
  out.provenance = provenance;
  return out;
}

}  // namespace rfr
