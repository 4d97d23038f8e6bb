#pragma once

#include "emscope/common.hpp"
#include "emscope/spectral.hpp"
#include "emscope/trace.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emscope {

enum class MaxFeaturesKind { sqrt, all, count };

struct MaxFeatures {
  MaxFeaturesKind kind = MaxFeaturesKind::sqrt;
  int count = 0;

  /// Number of candidate features per node for a dataset of `dims` columns.
  int resolve(int dims) const;
  std::string str() const;
  /// "sqrt", "all" or a positive integer.
  static MaxFeatures parse(std::string_view text);

  friend bool operator==(const MaxFeatures&, const MaxFeatures&) = default;
};

struct ForestParams {
  int n_estimators = 1000;
  MaxFeatures max_features;
  int min_samples_leaf = 1;
  std::optional<int> max_depth;
  /// Time-series forest only.
  int min_interval = 2;
  /// Time-series forest only; 0 picks floor(sqrt(window length)).
  int n_intervals = 0;

  void validate() const;
  friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

/// Internal nodes route x[feature] <= threshold to `left`. Leaves keep the
/// class counts of the training rows that reached them.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<int> class_counts;

  bool is_leaf() const { return feature < 0; }
  /// Majority class of a leaf, lowest index on ties.
  int vote() const;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Nodes are stored in pre-order; nodes[0] is the root.
struct DecisionTree {
  std::vector<TreeNode> nodes;
  int num_classes = 0;
  int num_features = 0;

  const TreeNode& leaf_for(const Eigen::Ref<const VectorXd>& x) const;
  int predict(const Eigen::Ref<const VectorXd>& x) const { return leaf_for(x).vote(); }
  int depth() const;

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

/// Greedy CART growth on `rows` of `features` (duplicates allowed, as in a
/// bootstrap). Each node draws max_features candidate columns, picks the
/// (feature, midpoint threshold) with the lowest weighted Gini impurity and
/// breaks ties by lower feature then lower threshold.
DecisionTree train_tree(const MatrixXd& features, std::span<const int> labels, int num_classes,
                        std::span<const Index> rows, const ForestParams& params, Rng& rng);

DecisionTree train_tree(const LabeledDataset& ds, const ForestParams& params, Rng& rng);

/// n draws with replacement from [0, n).
std::vector<Index> bootstrap_sample(Index n, Rng& rng);

enum class FeatureKind { band, interval };

struct ForestModel {
  std::vector<DecisionTree> trees;
  /// Interval forests only: the intervals each tree reads.
  std::vector<std::vector<Interval>> intervals;
  ForestParams params;
  std::vector<std::string> class_names;
  std::uint64_t master_seed = 0;
  FeatureKind feature_kind = FeatureKind::band;
  /// Band count, or raw window length for interval forests.
  int input_dims = 0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  friend bool operator==(const ForestModel&, const ForestModel&) = default;
};

struct Prediction {
  int label = 0;
  VectorXd probabilities;
};

/// Tree i grows on a bootstrap drawn from derive_seed(seed, i), so results do
/// not depend on how trees are scheduled across threads.
ForestModel train_forest(const LabeledDataset& ds, const ForestParams& params, std::uint64_t seed);

/// Time-series forest over raw windows (one window per row, equal lengths).
/// Every tree draws n_intervals random intervals of length >= min_interval
/// and splits on their (mean, std, slope).
ForestModel train_tsf(const LabeledDataset& windows, const ForestParams& params, std::uint64_t seed);

/// Draws one interval uniformly over all (start, length) pairs with
/// min_length <= length <= window_length.
Interval random_interval(Index window_length, Index min_length, Rng& rng);

/// Vote shares per class; winner is the argmax with ties to the lowest class.
Prediction predict(const ForestModel& model, const Eigen::Ref<const VectorXd>& x);

// Binary model format: magic "EMRF", version byte, params, class names and
// every tree in pre-order with little-endian float64 thresholds.
void save_model(std::ostream& out, const ForestModel& model);
ForestModel load_model(std::istream& in);
void save_model_file(const std::filesystem::path& path, const ForestModel& model);
ForestModel load_model_file(const std::filesystem::path& path);

}  // namespace emscope
