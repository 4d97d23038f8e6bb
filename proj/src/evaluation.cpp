#include "emscope/evaluation.hpp"

#include "emscope/knn.hpp"
#include "emscope/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace emscope {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names) : class_names(std::move(names)) {
  const auto n = static_cast<Index>(class_names.size());
  counts = Matrix<std::int64_t>::Zero(n, n);
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t n) {
  if (truth < 0 || truth >= counts.rows() || predicted < 0 || predicted >= counts.cols()) {
    throw Error(Errc::invalid_argument, "class index outside confusion matrix");
  }
  counts(truth, predicted) += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.class_names != class_names) throw Error(Errc::dimension_mismatch, "confusion matrices have different classes");
  counts += other.counts;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(counts.trace()) / static_cast<double>(n);
}

std::vector<std::int64_t> ConfusionMatrix::support() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(counts.rows()));
  for (Index r = 0; r < counts.rows(); ++r) out[r] = counts.row(r).sum();
  return out;
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "true\\predicted";
  for (const auto& name : cm.class_names) out << ',' << name;
  out << '\n';
  for (Index r = 0; r < cm.counts.rows(); ++r) {
    out << cm.class_names[r];
    for (Index c = 0; c < cm.counts.cols(); ++c) out << ',' << cm.counts(r, c);
    out << '\n';
  }
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  write_confusion_csv(out, cm);
}

std::string format_confusion_table(const ConfusionMatrix& cm) {
  std::size_t width = 6;
  for (const auto& name : cm.class_names) width = std::max(width, name.size() + 1);
  if (cm.counts.size() > 0) width = std::max(width, std::to_string(cm.counts.maxCoeff()).size() + 1);
  std::ostringstream out;
  out << std::setw(static_cast<int>(width)) << "";
  for (const auto& name : cm.class_names) out << std::setw(static_cast<int>(width)) << name;
  out << std::setw(8) << "recall" << '\n';
  const auto support = cm.support();
  for (Index r = 0; r < cm.counts.rows(); ++r) {
    out << std::setw(static_cast<int>(width)) << cm.class_names[r];
    for (Index c = 0; c < cm.counts.cols(); ++c) out << std::setw(static_cast<int>(width)) << cm.counts(r, c);
    const double recall = support[r] ? static_cast<double>(cm.counts(r, r)) / static_cast<double>(support[r]) : 0.0;
    out << std::setw(8) << std::fixed << std::setprecision(3) << recall << '\n';
  }
  out << "accuracy " << std::fixed << std::setprecision(4) << cm.accuracy() << " over " << cm.total() << " examples\n";
  return out.str();
}

Trainer forest_trainer(const ForestParams& params) {
  params.validate();
  return [params](const LabeledDataset& train, std::uint64_t seed) -> Classifier {
    auto model = std::make_shared<const ForestModel>(train_forest(train, params, seed));
    return [model](const Eigen::Ref<const VectorXd>& x) { return predict(*model, x).label; };
  };
}

Trainer tsf_trainer(const ForestParams& params) {
  params.validate();
  return [params](const LabeledDataset& train, std::uint64_t seed) -> Classifier {
    auto model = std::make_shared<const ForestModel>(train_tsf(train, params, seed));
    return [model](const Eigen::Ref<const VectorXd>& x) { return predict(*model, x).label; };
  };
}

Trainer knn_trainer(int k) {
  if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
  return [k](const LabeledDataset& train, std::uint64_t) -> Classifier {
    auto model = std::make_shared<const KnnClassifier>(train, k);
    return [model](const Eigen::Ref<const VectorXd>& x) { return model->predict(x); };
  };
}

namespace {

std::uint64_t row_hash(const MatrixXd& x, Index row, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (Index j = 0; j < x.cols(); ++j) {
    double v = x(row, j);
    if (v == 0.0) v = 0.0;  // fold -0.0 into +0.0
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ull;
    }
  }
  return mix64(h ^ mix64(seed));
}

}  // namespace

namespace {

struct FoldPlan {
  std::vector<int> fold;  // per row
  std::vector<Index> canonical;  // rows sorted by (label, hash, values)
};

FoldPlan plan_folds(const LabeledDataset& ds, int k, std::uint64_t seed) {
  if (k < 2) throw Error(Errc::invalid_argument, "k must be >= 2");
  ds.validate();
  const auto counts = ds.class_counts();
  for (int c = 0; c < ds.num_classes(); ++c) {
    if (counts[c] < k) {
      throw Error(Errc::class_too_small, "class '" + ds.class_names[c] + "' has " + std::to_string(counts[c]) +
                                             " examples, fewer than k=" + std::to_string(k));
    }
  }
  struct Key {
    int label;
    std::uint64_t hash;
    Index row;
  };
  std::vector<Key> keys(static_cast<std::size_t>(ds.size()));
  for (Index i = 0; i < ds.size(); ++i) keys[i] = {ds.labels[i], row_hash(ds.features, i, seed), i};
  const auto less = [&](const Key& a, const Key& b) {
    if (a.label != b.label) return a.label < b.label;
    if (a.hash != b.hash) return a.hash < b.hash;
    const auto ra = ds.features.row(a.row);
    const auto rb = ds.features.row(b.row);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(keys.begin(), keys.end(), less);
  FoldPlan plan;
  plan.fold.resize(keys.size());
  plan.canonical.reserve(keys.size());
  int position = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i > 0 && keys[i].label != keys[i - 1].label) position = 0;
    plan.fold[keys[i].row] = position++ % k;
    plan.canonical.push_back(keys[i].row);
  }
  return plan;
}

}  // namespace

std::vector<int> stratified_folds(const LabeledDataset& ds, int k, std::uint64_t seed) {
  return plan_folds(ds, k, seed).fold;
}

ConfusionMatrix evaluate(const Classifier& classifier, const LabeledDataset& test) {
  std::vector<int> predicted(static_cast<std::size_t>(test.size()));
  parallel_for(predicted.size(), [&](std::size_t i) { predicted[i] = classifier(test.features.row(static_cast<Index>(i)).transpose()); });
  ConfusionMatrix cm(test.class_names);
  for (std::size_t i = 0; i < predicted.size(); ++i) cm.add(test.labels[i], predicted[i]);
  return cm;
}

ConfusionMatrix kfold_cv(const LabeledDataset& ds, int k, const Trainer& trainer, std::uint64_t seed) {
  // Rows enter each fold in canonical order, so training (bootstraps, k-NN
  // tie-breaks) does not depend on the order of rows in ds.
  const FoldPlan plan = plan_folds(ds, k, seed);
  ConfusionMatrix total(ds.class_names);
  for (int f = 0; f < k; ++f) {
    std::vector<Index> train_rows;
    std::vector<Index> test_rows;
    for (Index i : plan.canonical) (plan.fold[i] == f ? test_rows : train_rows).push_back(i);
    const Classifier classifier = trainer(ds.subset(train_rows), derive_seed(seed, static_cast<std::uint64_t>(f)));
    total.merge(evaluate(classifier, ds.subset(test_rows)));
  }
  return total;
}

TrainerFamily parse_trainer_family(std::string_view name) {
  if (name == "forest" || name == "rf") return TrainerFamily::forest;
  if (name == "knn") return TrainerFamily::knn;
  if (name == "tsf") return TrainerFamily::tsf;
  throw Error(Errc::invalid_argument, "unknown classifier '" + std::string(name) + "' (forest, knn, tsf)");
}

std::string_view family_name(TrainerFamily family) {
  switch (family) {
    case TrainerFamily::forest:
      return "forest";
    case TrainerFamily::knn:
      return "knn";
    case TrainerFamily::tsf:
      return "tsf";
  }
  return "forest";
}

namespace {

const std::set<std::string>& keys_for(TrainerFamily family) {
  static const std::set<std::string> forest{"n_estimators", "max_features", "min_samples_leaf", "max_depth"};
  static const std::set<std::string> tsf{"n_estimators", "min_interval", "n_intervals", "min_samples_leaf", "max_depth"};
  static const std::set<std::string> knn{"k"};
  switch (family) {
    case TrainerFamily::forest:
      return forest;
    case TrainerFamily::tsf:
      return tsf;
    case TrainerFamily::knn:
      return knn;
  }
  return forest;
}

int int_value(const std::string& key, const std::string& text) {
  double v = 0.0;
  if (!parse_double(text, v) || v != std::floor(v) || std::abs(v) > 1e9) {
    throw Error(Errc::invalid_argument, key + " must be an integer, got '" + text + "'");
  }
  return static_cast<int>(v);
}

}  // namespace

void SearchSpace::validate(TrainerFamily family) const {
  if (n_iterations < 1) throw Error(Errc::invalid_argument, "n_iterations must be >= 1");
  if (dimensions.empty()) throw Error(Errc::invalid_argument, "search space has no dimensions");
  std::set<std::string> seen;
  for (const auto& d : dimensions) {
    if (!keys_for(family).count(d.name)) {
      throw Error(Errc::invalid_argument, "'" + d.name + "' is not a " + std::string(family_name(family)) + " hyperparameter");
    }
    if (!seen.insert(d.name).second) throw Error(Errc::invalid_argument, "duplicate dimension '" + d.name + "'");
    if (d.is_range() && d.low > d.high) throw Error(Errc::invalid_argument, "empty range for '" + d.name + "'");
  }
}

ForestParams forest_params_from(const ParamPoint& point, ForestParams base) {
  for (const auto& [key, value] : point) {
    if (key == "n_estimators") {
      base.n_estimators = int_value(key, value);
    } else if (key == "max_features") {
      base.max_features = MaxFeatures::parse(value);
    } else if (key == "min_samples_leaf") {
      base.min_samples_leaf = int_value(key, value);
    } else if (key == "max_depth") {
      if (value == "none") {
        base.max_depth.reset();
      } else {
        base.max_depth = int_value(key, value);
      }
    } else if (key == "min_interval") {
      base.min_interval = int_value(key, value);
    } else if (key == "n_intervals") {
      base.n_intervals = int_value(key, value);
    } else {
      throw Error(Errc::invalid_argument, "unknown forest hyperparameter '" + key + "'");
    }
  }
  base.validate();
  return base;
}

Trainer make_trainer(TrainerFamily family, const ParamPoint& point) {
  for (const auto& entry : point) {
    if (!keys_for(family).count(entry.first)) {
      throw Error(Errc::invalid_argument, "'" + entry.first + "' is not a " + std::string(family_name(family)) + " hyperparameter");
    }
  }
  switch (family) {
    case TrainerFamily::forest:
      return forest_trainer(forest_params_from(point));
    case TrainerFamily::tsf:
      return tsf_trainer(forest_params_from(point));
    case TrainerFamily::knn: {
      int k = 5;
      for (const auto& [key, value] : point) k = int_value(key, value);
      return knn_trainer(k);
    }
  }
  throw Error(Errc::invalid_argument, "unknown classifier family");
}

SearchSpace default_search_space(TrainerFamily family) {
  SearchSpace space;
  space.n_iterations = 8;
  switch (family) {
    case TrainerFamily::forest:
      space.dimensions = {{"n_estimators", 50, 150, {}},
                          {"max_features", 0, 0, {"sqrt", "all", "2", "4"}},
                          {"min_samples_leaf", 1, 5, {}},
                          {"max_depth", 0, 0, {"none", "8", "16"}}};
      break;
    case TrainerFamily::tsf:
      space.dimensions = {{"n_estimators", 25, 100, {}}, {"min_interval", 2, 8, {}}, {"n_intervals", 3, 12, {}}};
      break;
    case TrainerFamily::knn:
      space.dimensions = {{"k", 1, 100, {}}};
      break;
  }
  return space;
}

SearchResult random_search(const SearchSpace& space, const LabeledDataset& ds, TrainerFamily family, int cv_k,
                           std::uint64_t seed) {
  space.validate(family);
  SearchResult result;
  result.trials.resize(static_cast<std::size_t>(space.n_iterations));
  for (std::size_t t = 0; t < result.trials.size(); ++t) {
    Rng rng = make_rng(derive_seed(space.seed, t));
    ParamPoint& point = result.trials[t].params;
    for (const auto& d : space.dimensions) {
      if (d.is_range()) {
        point.emplace_back(d.name, std::to_string(std::uniform_int_distribution<int>(d.low, d.high)(rng)));
      } else {
        const auto pick = std::uniform_int_distribution<std::size_t>(0, d.choices.size() - 1)(rng);
        point.emplace_back(d.name, d.choices[pick]);
      }
    }
  }
  parallel_for(result.trials.size(), [&](std::size_t t) {
    result.trials[t].accuracy = kfold_cv(ds, cv_k, make_trainer(family, result.trials[t].params), seed).accuracy();
  });
  std::size_t best = 0;
  for (std::size_t t = 1; t < result.trials.size(); ++t) {
    if (result.trials[t].accuracy > result.trials[best].accuracy) best = t;
  }
  result.best_params = result.trials[best].params;
  result.best_accuracy = result.trials[best].accuracy;
  return result;
}

void write_trials_csv(const std::filesystem::path& path, const SearchResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  out << "trial";
  if (!result.trials.empty()) {
    for (const auto& entry : result.trials.front().params) out << ',' << entry.first;
  }
  out << ",accuracy\n";
  for (std::size_t t = 0; t < result.trials.size(); ++t) {
    out << t;
    for (const auto& entry : result.trials[t].params) out << ',' << entry.second;
    out << ',' << format_double(result.trials[t].accuracy) << '\n';
  }
}

std::pair<int, int> LeakageMap::argmax() const {
  Index r = 0;
  Index c = 0;
  double best = -1.0;
  for (Index i = 0; i < accuracy.rows(); ++i) {
    for (Index j = 0; j < accuracy.cols(); ++j) {
      if (accuracy(i, j) > best) {
        best = accuracy(i, j);
        r = i;
        c = j;
      }
    }
  }
  return {static_cast<int>(r), static_cast<int>(c)};
}

LeakageMap grid_leakage_scan(const std::vector<LabeledDataset>& cells, int rows, int cols, const ForestParams& tsf_params,
                             std::uint64_t seed, int k) {
  if (rows < 1 || cols < 1) throw Error(Errc::invalid_argument, "grid must have at least one cell");
  if (static_cast<int>(cells.size()) != rows * cols) {
    throw Error(Errc::missing_cell, "grid of " + std::to_string(rows * cols) + " cells has data for " +
                                        std::to_string(cells.size()));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].size() == 0) throw Error(Errc::missing_cell, "cell " + std::to_string(i) + " has no windows");
    if (cells[i].class_names != cells.front().class_names) {
      throw Error(Errc::invalid_argument, "cell " + std::to_string(i) + " has a different class set");
    }
  }
  const Trainer trainer = tsf_trainer(tsf_params);
  LeakageMap map{rows, cols, MatrixXd::Zero(rows, cols)};
  parallel_for(cells.size(), [&](std::size_t i) {
    map.accuracy(static_cast<Index>(i) / cols, static_cast<Index>(i) % cols) = kfold_cv(cells[i], k, trainer, derive_seed(seed, i)).accuracy();
  });
  return map;
}

void write_leakage_csv(const std::filesystem::path& path, const LeakageMap& map) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  for (Index r = 0; r < map.accuracy.rows(); ++r) {
    for (Index c = 0; c < map.accuracy.cols(); ++c) out << (c ? "," : "") << format_double(map.accuracy(r, c));
    out << '\n';
  }
}

void write_leakage_ppm(const std::filesystem::path& path, const LeakageMap& map, int cell_pixels) {
  if (cell_pixels < 1) throw Error(Errc::invalid_argument, "cell_pixels must be positive");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  const Index width = map.accuracy.cols() * cell_pixels;
  const Index height = map.accuracy.rows() * cell_pixels;
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::string line(static_cast<std::size_t>(width), '\0');
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double v = std::clamp(map.accuracy(y / cell_pixels, x / cell_pixels), 0.0, 1.0);
      line[static_cast<std::size_t>(x)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
}

std::string format_leakage_table(const LeakageMap& map) {
  std::ostringstream out;
  const auto hot = map.argmax();
  out << std::fixed << std::setprecision(2);
  for (Index r = 0; r < map.accuracy.rows(); ++r) {
    for (Index c = 0; c < map.accuracy.cols(); ++c) {
      const bool mark = r == hot.first && c == hot.second;
      out << (mark ? " [" : "  ") << map.accuracy(r, c) << (mark ? "]" : " ");
    }
    out << '\n';
  }
  return out.str();
}

CodeRecognitionResult code_recognition(const std::vector<Trace>& program_traces, const LabeledDataset& templates,
                                       const SimConfig& sim, const CodeRecognitionConfig& config, std::uint64_t seed) {
  const ProgramSpec& program = config.program;
  if (program.instructions.empty()) throw Error(Errc::empty_program, "program has no instructions");
  if (std::set<std::string>(program.instructions.begin(), program.instructions.end()).size() < 2) {
    throw Error(Errc::invalid_argument, "program must use at least two distinct mnemonics");
  }
  if (program_traces.size() < 2) throw Error(Errc::invalid_argument, "code recognition needs at least two traces");
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "train_fraction must lie in (0, 1)");
  }
  templates.validate();

  std::vector<std::vector<InstructionWindow>> windows(program_traces.size());
  parallel_for(program_traces.size(), [&](std::size_t i) {
    try {
      windows[i] = segment_program(program_traces[i], program, sim);
    } catch (const Error& e) {
      throw Error(Errc::segmentation_failure, "trace " + std::to_string(i) + ": " + e.what());
    }
  });

  CodeRecognitionResult result;
  const std::size_t n = program_traces.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(derive_seed(seed, 0));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(config.train_fraction * static_cast<double>(n))), 1, n - 1);
  result.train_runs.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  result.test_runs.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(result.train_runs.begin(), result.train_runs.end());
  std::sort(result.test_runs.begin(), result.test_runs.end());

  const double rate = program_traces.front().sample_rate_hz;
  auto collect = [&](const std::vector<std::size_t>& runs) {
    std::vector<InstructionWindow> out;
    for (std::size_t r : runs) out.insert(out.end(), windows[r].begin(), windows[r].end());
    return band_dataset(out, rate, config.bands, config.spectral, templates.class_names);
  };
  const LabeledDataset run_train = collect(result.train_runs);
  const LabeledDataset test = collect(result.test_runs);
  if (run_train.dims() != templates.dims()) {
    throw Error(Errc::dimension_mismatch, "template features do not match the configured bands");
  }

  LabeledDataset train = templates;
  train.features.conservativeResize(templates.size() + run_train.size(), Eigen::NoChange);
  train.features.bottomRows(run_train.size()) = run_train.features;
  train.labels.insert(train.labels.end(), run_train.labels.begin(), run_train.labels.end());

  const Trainer trainer = forest_trainer(config.forest);
  result.confusion = evaluate(trainer(train, derive_seed(seed, 1)), test);
  result.template_cv_accuracy = kfold_cv(templates, config.cv_folds, trainer, derive_seed(seed, 2)).accuracy();
  return result;
}

}  // namespace emscope
