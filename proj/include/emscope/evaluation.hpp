#pragma once

#include "emscope/forest.hpp"
#include "emscope/simulator.hpp"
#include "emscope/spectral.hpp"
#include "emscope/trace.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace emscope {

/// counts(true, predicted).
struct ConfusionMatrix {
  Matrix<std::int64_t> counts;
  std::vector<std::string> class_names;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names);

  void add(int truth, int predicted, std::int64_t n = 1);
  void merge(const ConfusionMatrix& other);
  std::int64_t total() const { return counts.sum(); }
  /// trace / total; 0 for an empty matrix.
  double accuracy() const;
  std::vector<std::int64_t> support() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Header row `true\predicted,<class names>`, then one row per true class.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);
/// Aligned text table with per-class recall and overall accuracy.
std::string format_confusion_table(const ConfusionMatrix& cm);

/// A trained classifier. Must be safe to call concurrently.
using Classifier = std::function<int(const Eigen::Ref<const VectorXd>&)>;
using Trainer = std::function<Classifier(const LabeledDataset& train, std::uint64_t seed)>;

Trainer forest_trainer(const ForestParams& params);
Trainer tsf_trainer(const ForestParams& params);
Trainer knn_trainer(int k);

/// Fold index per example. Within each class, examples are ordered by a hash
/// of (seed, feature bytes) and dealt round-robin, so the assignment does not
/// depend on the order of rows in `ds`.
std::vector<int> stratified_folds(const LabeledDataset& ds, int k, std::uint64_t seed);

/// Fold f trains with seed derive_seed(seed, f) on rows taken in fold
/// assignment order, so the result does not depend on the order of rows in
/// `ds`. Throws Errc::class_too_small when a class has fewer than k examples.
ConfusionMatrix kfold_cv(const LabeledDataset& ds, int k, const Trainer& trainer, std::uint64_t seed);

/// Predicts every row of `test` with `classifier`.
ConfusionMatrix evaluate(const Classifier& classifier, const LabeledDataset& test);

enum class TrainerFamily { forest, knn, tsf };

TrainerFamily parse_trainer_family(std::string_view name);
std::string_view family_name(TrainerFamily family);

/// Either an inclusive integer range or a list of literal choices.
struct SearchDimension {
  std::string name;
  int low = 0;
  int high = 0;
  std::vector<std::string> choices;

  bool is_range() const { return choices.empty(); }
};

struct SearchSpace {
  std::vector<SearchDimension> dimensions;
  int n_iterations = 10;
  std::uint64_t seed = 0;

  void validate(TrainerFamily family) const;
};

/// Hyperparameter name/value pairs in the order of SearchSpace::dimensions.
using ParamPoint = std::vector<std::pair<std::string, std::string>>;

/// Keys per family: forest {n_estimators, max_features, min_samples_leaf,
/// max_depth}; tsf {n_estimators, min_interval, n_intervals,
/// min_samples_leaf, max_depth}; knn {k}. max_depth accepts "none".
Trainer make_trainer(TrainerFamily family, const ParamPoint& point);
ForestParams forest_params_from(const ParamPoint& point, ForestParams base = {});

/// Default spaces, narrow enough for desk-scale runs.
SearchSpace default_search_space(TrainerFamily family);

struct Trial {
  ParamPoint params;
  double accuracy = 0.0;
};

struct SearchResult {
  ParamPoint best_params;
  double best_accuracy = 0.0;
  std::vector<Trial> trials;
};

/// Trial t samples its point from derive_seed(space.seed, t); every trial is
/// scored by kfold_cv with the same `seed`. Ties go to the earlier trial.
SearchResult random_search(const SearchSpace& space, const LabeledDataset& ds, TrainerFamily family, int cv_k,
                           std::uint64_t seed);

/// `trial,<param names>,accuracy`.
void write_trials_csv(const std::filesystem::path& path, const SearchResult& result);

struct LeakageMap {
  int rows = 0;
  int cols = 0;
  MatrixXd accuracy;

  /// Highest-accuracy cell, first in row-major order on ties.
  std::pair<int, int> argmax() const;
};

/// Cell (r, c) reads cells[r * cols + c]: raw equal-length windows, one per
/// row. Each cell is scored by time-series forest k-fold CV with seed
/// derive_seed(seed, cell index).
LeakageMap grid_leakage_scan(const std::vector<LabeledDataset>& cells, int rows, int cols, const ForestParams& tsf_params,
                             std::uint64_t seed, int k = 4);

/// One comma-separated line per grid row.
void write_leakage_csv(const std::filesystem::path& path, const LeakageMap& map);
/// Binary grayscale PGM-style PPM (P5), 0 maps to black and 1 to white, each
/// cell drawn as a square of `cell_pixels`.
void write_leakage_ppm(const std::filesystem::path& path, const LeakageMap& map, int cell_pixels = 16);
std::string format_leakage_table(const LeakageMap& map);

struct CodeRecognitionConfig {
  ProgramSpec program;
  double train_fraction = 0.75;
  BandSpec bands;
  SpectralConfig spectral;
  ForestParams forest;
  /// Folds for the single-instruction CV reference on the template set.
  int cv_folds = 4;
};

struct CodeRecognitionResult {
  ConfusionMatrix confusion;
  /// kfold_cv accuracy of the same forest configuration on the templates.
  double template_cv_accuracy = 0.0;
  std::vector<std::size_t> train_runs;
  std::vector<std::size_t> test_runs;
};

/// Segments every program trace with the program's slot lengths, trains a
/// forest on the templates plus the training runs' slots and classifies every
/// slot of the remaining runs. A trace that fails to segment raises
/// Errc::segmentation_failure naming its index.
CodeRecognitionResult code_recognition(const std::vector<Trace>& program_traces, const LabeledDataset& templates,
                                       const SimConfig& sim, const CodeRecognitionConfig& config, std::uint64_t seed);

}  // namespace emscope
