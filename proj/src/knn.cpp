#include "emscope/knn.hpp"

#include <algorithm>

namespace emscope {

KnnClassifier::KnnClassifier(const LabeledDataset& train, int k) : k_(k), num_classes_(train.num_classes()) {
  if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
  train.validate();
  if (train.size() == 0) throw Error(Errc::empty_class, "training set is empty");
  if (train.dims() == 0) throw Error(Errc::no_features, "training set has no features");
  mean_ = train.features.colwise().mean();
  const MatrixXd centred = train.features.rowwise() - mean_;
  scale_ = (centred.array().square().colwise().sum() / static_cast<double>(train.size())).sqrt().matrix();
  for (Index j = 0; j < scale_.size(); ++j) {
    if (scale_(j) == 0.0) scale_(j) = 1.0;
  }
  train_ = centred.array().rowwise() / scale_.array();
  labels_ = train.labels;
}

int KnnClassifier::predict(const Eigen::Ref<const VectorXd>& x) const {
  if (x.size() != train_.cols()) {
    throw Error(Errc::dimension_mismatch, "expected " + std::to_string(train_.cols()) + " features, got " +
                                              std::to_string(x.size()));
  }
  const RowVectorXd z = (x.transpose() - mean_).array() / scale_.array();
  const VectorXd dist = (train_.rowwise() - z).rowwise().squaredNorm();
  std::vector<std::pair<double, Index>> order(static_cast<std::size_t>(dist.size()));
  for (Index i = 0; i < dist.size(); ++i) order[i] = {dist(i), i};
  const auto k = static_cast<std::ptrdiff_t>(std::min<Index>(k_, dist.size()));
  std::partial_sort(order.begin(), order.begin() + k, order.end());
  std::vector<int> votes(static_cast<std::size_t>(num_classes_), 0);
  for (std::ptrdiff_t i = 0; i < k; ++i) ++votes[labels_[order[i].second]];
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

int knn_predict(const LabeledDataset& train, const Eigen::Ref<const VectorXd>& x, int k) {
  return KnnClassifier(train, k).predict(x);
}

}  // namespace emscope
