#ifndef RFR_DATASET_HPP_
#define RFR_DATASET_HPP_

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace rfr {

// Tabular binary-classification data with a binary sensitive attribute.
// Row i is (x.row(i), y[i], a[i]).
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<int> a;
  std::vector<std::string> feature_names;
  std::string provenance;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }

  // Row indices with a == group.
  std::vector<Eigen::Index> group_indices(int group) const;
  Eigen::Index group_size(int group) const;

  // Throws kValidation when rows are inconsistent, labels or groups are not
  // in {0,1}, or any feature is non-finite.
  void validate() const;

  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

}  // namespace rfr

#endif  // RFR_DATASET_HPP_
