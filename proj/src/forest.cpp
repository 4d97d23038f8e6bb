#include "emscope/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace emscope {

int MaxFeatures::resolve(int dims) const {
  switch (kind) {
    case MaxFeaturesKind::sqrt:
      return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(dims)))));
    case MaxFeaturesKind::all:
      return dims;
    case MaxFeaturesKind::count:
      return std::clamp(count, 1, dims);
  }
  return dims;
}

std::string MaxFeatures::str() const {
  switch (kind) {
    case MaxFeaturesKind::sqrt:
      return "sqrt";
    case MaxFeaturesKind::all:
      return "all";
    case MaxFeaturesKind::count:
      return std::to_string(count);
  }
  return "sqrt";
}

MaxFeatures MaxFeatures::parse(std::string_view text) {
  text = trim(text);
  if (text == "sqrt") return {MaxFeaturesKind::sqrt, 0};
  if (text == "all") return {MaxFeaturesKind::all, 0};
  double v = 0.0;
  if (!parse_double(text, v) || v < 1 || v != std::floor(v)) {
    throw Error(Errc::invalid_argument, "max_features must be sqrt, all or a positive integer, got '" + std::string(text) + "'");
  }
  return {MaxFeaturesKind::count, static_cast<int>(v)};
}

void ForestParams::validate() const {
  if (n_estimators < 1) throw Error(Errc::invalid_argument, "n_estimators must be >= 1");
  if (min_samples_leaf < 1) throw Error(Errc::invalid_argument, "min_samples_leaf must be >= 1");
  if (max_depth && *max_depth < 0) throw Error(Errc::invalid_argument, "max_depth must be >= 0");
  if (max_features.kind == MaxFeaturesKind::count && max_features.count < 1) {
    throw Error(Errc::invalid_argument, "max_features must be >= 1");
  }
  if (min_interval < 1) throw Error(Errc::invalid_argument, "min_interval must be >= 1");
  if (n_intervals < 0) throw Error(Errc::invalid_argument, "n_intervals must be >= 0");
}

int TreeNode::vote() const {
  return static_cast<int>(std::max_element(class_counts.begin(), class_counts.end()) - class_counts.begin());
}

const TreeNode& DecisionTree::leaf_for(const Eigen::Ref<const VectorXd>& x) const {
  if (x.size() != num_features) {
    throw Error(Errc::dimension_mismatch, "tree expects " + std::to_string(num_features) + " features, got " +
                                              std::to_string(x.size()));
  }
  const TreeNode* node = &nodes.front();
  while (!node->is_leaf()) node = &nodes[x(node->feature) <= node->threshold ? node->left : node->right];
  return *node;
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (!nodes[i].is_leaf()) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
  }
  return deepest;
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXd& x, std::span<const int> y, int num_classes, const ForestParams& params, Rng& rng)
      : x_(x), y_(y), num_classes_(num_classes), params_(params), rng_(rng),
        max_features_(params.max_features.resolve(static_cast<int>(x.cols()))) {
    features_.resize(static_cast<std::size_t>(x.cols()));
  }

  DecisionTree build(std::vector<Index> rows) {
    DecisionTree tree;
    tree.num_classes = num_classes_;
    tree.num_features = static_cast<int>(x_.cols());
    nodes_ = &tree.nodes;
    grow(rows, 0, rows.size(), 0);
    return tree;
  }

 private:
  int grow(std::vector<Index>& rows, std::size_t begin, std::size_t end, int depth) {
    const int id = static_cast<int>(nodes_->size());
    nodes_->emplace_back();
    std::vector<int> counts(num_classes_, 0);
    for (std::size_t i = begin; i < end; ++i) ++counts[y_[rows[i]]];

    const auto n = static_cast<Index>(end - begin);
    const bool pure = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) <= 1;
    const bool depth_capped = params_.max_depth && depth >= *params_.max_depth;
    std::optional<Split> split;
    if (!pure && !depth_capped && n >= 2 * params_.min_samples_leaf) split = best_split(rows, begin, end, counts);
    if (!split) {
      (*nodes_)[id].class_counts = std::move(counts);
      return id;
    }
    const auto mid_it = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                       rows.begin() + static_cast<std::ptrdiff_t>(end),
                                       [&](Index r) { return x_(r, split->feature) <= split->threshold; });
    const auto mid = static_cast<std::size_t>(mid_it - rows.begin());
    (*nodes_)[id].feature = split->feature;
    (*nodes_)[id].threshold = split->threshold;
    const int left = grow(rows, begin, mid, depth + 1);
    const int right = grow(rows, mid, end, depth + 1);
    (*nodes_)[id].left = left;
    (*nodes_)[id].right = right;
    return id;
  }

  std::vector<int> draw_features() {
    const int d = static_cast<int>(x_.cols());
    std::iota(features_.begin(), features_.end(), 0);
    for (int i = 0; i < max_features_; ++i) {
      std::uniform_int_distribution<int> pick(i, d - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }
    std::vector<int> chosen(features_.begin(), features_.begin() + max_features_);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

  // Maximizes sum_c(nL_c^2)/nL + sum_c(nR_c^2)/nR, which is n * (1 - weighted Gini).
  std::optional<Split> best_split(const std::vector<Index>& rows, std::size_t begin, std::size_t end,
                                  const std::vector<int>& counts) {
    const auto n = static_cast<Index>(end - begin);
    const Index min_leaf = params_.min_samples_leaf;
    const double eps = 1e-12 * static_cast<double>(n);
    std::optional<Split> best;
    double best_score = -1.0;

    for (int f : draw_features()) {
      sorted_.clear();
      for (std::size_t i = begin; i < end; ++i) sorted_.emplace_back(x_(rows[i], f), y_[rows[i]]);
      std::sort(sorted_.begin(), sorted_.end());
      if (sorted_.front().first == sorted_.back().first) continue;

      left_.assign(num_classes_, 0);
      right_ = counts;
      std::int64_t sq_left = 0;
      std::int64_t sq_right = 0;
      for (int c : counts) sq_right += static_cast<std::int64_t>(c) * c;
      for (Index i = 0; i + 1 < n; ++i) {
        const int c = sorted_[i].second;
        sq_left += 2 * left_[c] + 1;
        sq_right -= 2 * right_[c] - 1;
        ++left_[c];
        --right_[c];
        const Index n_left = i + 1;
        const Index n_right = n - n_left;
        if (n_left < min_leaf) continue;
        if (n_right < min_leaf) break;
        const double a = sorted_[i].first;
        const double b = sorted_[i + 1].first;
        if (!(a < b)) continue;
        const double score = static_cast<double>(sq_left) / n_left + static_cast<double>(sq_right) / n_right;
        if (score > best_score + eps) {
          double threshold = (a + b) / 2.0;
          if (threshold >= b) threshold = a;
          best_score = score;
          best = Split{f, threshold};
        }
      }
    }
    return best;
  }

  const MatrixXd& x_;
  std::span<const int> y_;
  int num_classes_;
  const ForestParams& params_;
  Rng& rng_;
  int max_features_;
  std::vector<TreeNode>* nodes_ = nullptr;
  std::vector<int> features_;
  std::vector<std::pair<double, int>> sorted_;
  std::vector<int> left_;
  std::vector<int> right_;
};

void check_training_set(const MatrixXd& x, std::span<const int> y, int num_classes) {
  if (x.rows() == 0) throw Error(Errc::empty_class, "training set is empty");
  if (x.cols() == 0) throw Error(Errc::no_features, "training set has no features");
  if (static_cast<Index>(y.size()) != x.rows()) throw Error(Errc::dimension_mismatch, "label count differs from row count");
  if (num_classes < 1) throw Error(Errc::invalid_argument, "num_classes must be >= 1");
  for (int label : y) {
    if (label < 0 || label >= num_classes) throw Error(Errc::invalid_argument, "label out of range");
  }
}

void require_every_class(const LabeledDataset& ds) {
  const auto counts = ds.class_counts();
  for (int c = 0; c < ds.num_classes(); ++c) {
    if (counts[c] == 0) throw Error(Errc::empty_class, "class '" + ds.class_names[c] + "' has no training examples");
  }
}

}  // namespace

DecisionTree train_tree(const MatrixXd& features, std::span<const int> labels, int num_classes,
                        std::span<const Index> rows, const ForestParams& params, Rng& rng) {
  params.validate();
  check_training_set(features, labels, num_classes);
  if (rows.empty()) throw Error(Errc::empty_class, "no rows to train on");
  for (Index r : rows) {
    if (r < 0 || r >= features.rows()) throw Error(Errc::invalid_argument, "row index out of range");
  }
  TreeBuilder builder(features, labels, num_classes, params, rng);
  return builder.build(std::vector<Index>(rows.begin(), rows.end()));
}

DecisionTree train_tree(const LabeledDataset& ds, const ForestParams& params, Rng& rng) {
  std::vector<Index> rows(static_cast<std::size_t>(ds.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  return train_tree(ds.features, ds.labels, ds.num_classes(), rows, params, rng);
}

std::vector<Index> bootstrap_sample(Index n, Rng& rng) {
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (auto& r : rows) r = pick(rng);
  return rows;
}

ForestModel train_forest(const LabeledDataset& ds, const ForestParams& params, std::uint64_t seed) {
  params.validate();
  ds.validate();
  check_training_set(ds.features, ds.labels, ds.num_classes());
  require_every_class(ds);

  ForestModel model;
  model.params = params;
  model.class_names = ds.class_names;
  model.master_seed = seed;
  model.feature_kind = FeatureKind::band;
  model.input_dims = static_cast<int>(ds.dims());
  model.trees.resize(static_cast<std::size_t>(params.n_estimators));
  parallel_for(model.trees.size(), [&](std::size_t i) {
    Rng rng = make_rng(derive_seed(seed, i));
    const auto rows = bootstrap_sample(ds.size(), rng);
    TreeBuilder builder(ds.features, ds.labels, ds.num_classes(), params, rng);
    model.trees[i] = builder.build(rows);
  });
  return model;
}

Interval random_interval(Index window_length, Index min_length, Rng& rng) {
  if (min_length > window_length) {
    throw Error(Errc::window_too_short, "window of " + std::to_string(window_length) +
                                            " samples is shorter than min_interval " + std::to_string(min_length));
  }
  const Index span = window_length - min_length + 1;
  const Index total = span * (span + 1) / 2;
  Index u = std::uniform_int_distribution<Index>(0, total - 1)(rng);
  for (Index len = min_length; len <= window_length; ++len) {
    const Index starts = window_length - len + 1;
    if (u < starts) return {u, len};
    u -= starts;
  }
  return {0, window_length};
}

namespace {

MatrixXd interval_matrix(const MatrixXd& windows, std::span<const Interval> intervals) {
  MatrixXd out(windows.rows(), static_cast<Index>(3 * intervals.size()));
  for (Index r = 0; r < windows.rows(); ++r) out.row(r) = interval_features(windows.row(r).transpose(), intervals).transpose();
  return out;
}

}  // namespace

ForestModel train_tsf(const LabeledDataset& windows, const ForestParams& params, std::uint64_t seed) {
  params.validate();
  windows.validate();
  check_training_set(windows.features, windows.labels, windows.num_classes());
  require_every_class(windows);
  const Index length = windows.dims();
  if (length < params.min_interval) {
    throw Error(Errc::window_too_short, "window of " + std::to_string(length) + " samples is shorter than min_interval " +
                                            std::to_string(params.min_interval));
  }
  const int n_intervals = params.n_intervals > 0
                              ? params.n_intervals
                              : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(length)))));

  ForestModel model;
  model.params = params;
  model.class_names = windows.class_names;
  model.master_seed = seed;
  model.feature_kind = FeatureKind::interval;
  model.input_dims = static_cast<int>(length);
  model.trees.resize(static_cast<std::size_t>(params.n_estimators));
  model.intervals.resize(model.trees.size());

  ForestParams tree_params = params;
  tree_params.max_features = {MaxFeaturesKind::sqrt, 0};
  std::vector<Index> all_rows(static_cast<std::size_t>(windows.size()));
  std::iota(all_rows.begin(), all_rows.end(), Index{0});
  parallel_for(model.trees.size(), [&](std::size_t i) {
    Rng rng = make_rng(derive_seed(seed, i));
    auto& iv = model.intervals[i];
    iv.reserve(static_cast<std::size_t>(n_intervals));
    for (int j = 0; j < n_intervals; ++j) iv.push_back(random_interval(length, params.min_interval, rng));
    const MatrixXd x = interval_matrix(windows.features, iv);
    TreeBuilder builder(x, windows.labels, windows.num_classes(), tree_params, rng);
    model.trees[i] = builder.build(all_rows);
  });
  return model;
}

Prediction predict(const ForestModel& model, const Eigen::Ref<const VectorXd>& x) {
  if (model.trees.empty()) throw Error(Errc::invalid_argument, "model has no trees");
  if (x.size() != model.input_dims) {
    throw Error(Errc::dimension_mismatch, "model expects " + std::to_string(model.input_dims) + " inputs, got " +
                                              std::to_string(x.size()));
  }
  Prediction p;
  p.probabilities = VectorXd::Zero(model.num_classes());
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    int vote = 0;
    if (model.feature_kind == FeatureKind::interval) {
      vote = model.trees[t].predict(interval_features(x, model.intervals[t]));
    } else {
      vote = model.trees[t].predict(x);
    }
    p.probabilities(vote) += 1.0;
  }
  p.probabilities /= static_cast<double>(model.trees.size());
  p.probabilities.maxCoeff(&p.label);
  return p;
}

}  // namespace emscope
