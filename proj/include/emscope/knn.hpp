#pragma once

#include "emscope/trace.hpp"

namespace emscope {

/// k-nearest-neighbour classifier on z-scored features. Mean and population
/// std come from the training set; a zero std column is left unscaled.
class KnnClassifier {
 public:
  KnnClassifier(const LabeledDataset& train, int k);

  /// Euclidean neighbours ordered by (distance, training index). Majority
  /// vote, ties to the lowest class.
  int predict(const Eigen::Ref<const VectorXd>& x) const;

  int k() const { return k_; }
  int num_classes() const { return num_classes_; }

 private:
  MatrixXd train_;
  std::vector<int> labels_;
  RowVectorXd mean_;
  RowVectorXd scale_;
  int k_;
  int num_classes_;
};

int knn_predict(const LabeledDataset& train, const Eigen::Ref<const VectorXd>& x, int k);

}  // namespace emscope
