#include "emscope/cli.hpp"

#include "emscope/evaluation.hpp"
#include "emscope/forest.hpp"
#include "emscope/pipeline.hpp"
#include "emscope/segmentation.hpp"
#include "emscope/simulator.hpp"
#include "emscope/spectral.hpp"
#include "emscope/trace.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace emscope {

RunConfig RunConfig::parse(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = trim(line);
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = trim(text.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::usage, origin + " line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(trim(text.substr(0, eq)));
    for (char& c : key) {
      if (c == '-') c = '_';
    }
    if (key.empty()) throw Error(Errc::usage, origin + " line " + std::to_string(line_no) + ": empty key");
    cfg.values[key] = std::string(trim(text.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::usage, "cannot open config " + path.string());
  return parse(in, path.string());
}

namespace {

namespace fs = std::filesystem;

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

/// Option values resolved from the command line first, then the run config.
class Flags {
 public:
  void add(CLI::App* app, const std::string& key, const std::string& help) {
    auto& slot = storage_[key];
    options_[key].push_back(app->add_option("--" + dashed(key), slot, help));
  }

  void add_flag(CLI::App* app, const std::string& key, const std::string& help) {
    auto& slot = storage_[key];
    options_[key].push_back(app->add_option("--" + dashed(key), slot, help)->expected(0, 1));
  }

  void set_config(RunConfig cfg) { config_ = std::move(cfg); }

  std::set<std::string> keys() const {
    std::set<std::string> out;
    for (const auto& entry : options_) out.insert(entry.first);
    return out;
  }

  std::optional<std::string> raw(const std::string& key) const {
    const auto opt = options_.find(key);
    const bool given = opt != options_.end() &&
                       std::any_of(opt->second.begin(), opt->second.end(), [](const CLI::Option* o) { return o->count() > 0; });
    if (given) {
      const std::string& v = storage_.at(key);
      return v.empty() ? std::string("true") : v;
    }
    const auto it = config_.values.find(key);
    if (it != config_.values.end()) return it->second;
    return std::nullopt;
  }

  std::string text(const std::string& key, const std::string& fallback) const { return raw(key).value_or(fallback); }

  std::string required(const std::string& key, const std::string& command) const {
    auto v = raw(key);
    if (!v || v->empty()) throw Error(Errc::usage, command + " needs --" + dashed(key));
    return *v;
  }

  double real(const std::string& key, double fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    double out = 0.0;
    if (!parse_double(*v, out)) throw Error(Errc::usage, "--" + dashed(key) + " expects a number, got '" + *v + "'");
    return out;
  }

  int integer(const std::string& key, int fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    double out = 0.0;
    if (!parse_double(*v, out) || out != std::floor(out) || std::abs(out) > 2e9) {
      throw Error(Errc::usage, "--" + dashed(key) + " expects an integer, got '" + *v + "'");
    }
    return static_cast<int>(out);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const char* end = v->data() + v->size();
    const auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || ptr != end || v->empty()) {
      throw Error(Errc::usage, "--" + dashed(key) + " expects an unsigned 64-bit integer, got '" + *v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw Error(Errc::usage, "--" + dashed(key) + " expects true or false, got '" + *v + "'");
  }

  std::optional<std::pair<double, double>> pair(const std::string& key) const {
    const auto v = raw(key);
    if (!v) return std::nullopt;
    const auto comma = v->find(',');
    double a = 0.0;
    double b = 0.0;
    if (comma == std::string::npos || !parse_double(trim(std::string_view(*v).substr(0, comma)), a) ||
        !parse_double(trim(std::string_view(*v).substr(comma + 1)), b)) {
      throw Error(Errc::usage, "--" + dashed(key) + " expects two comma-separated numbers, got '" + *v + "'");
    }
    return std::pair{a, b};
  }

 private:
  std::map<std::string, std::string> storage_;
  // A key may be registered on several subcommands; they share one slot.
  std::map<std::string, std::vector<CLI::Option*>> options_;
  RunConfig config_;
};

// A malformed flag value is the caller's mistake, not bad data.
template <typename F>
auto as_usage(F&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    if (e.code() == Errc::invalid_argument) throw Error(Errc::usage, e.what());
    throw;
  }
}

struct Context {
  Flags& flags;
  std::ostream& out;
  std::ostream& err;

  std::uint64_t seed() const { return flags.u64("seed", 1); }

  fs::path out_dir() const {
    fs::path dir = flags.text("out", ".");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::io, "cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
  }

  TraceFormat format() const {
    return as_usage([&] { return parse_trace_format(flags.text("format", "binary")); });
  }

  TrainerFamily family() const {
    return as_usage([&] { return parse_trainer_family(flags.text("classifier", "forest")); });
  }

  SimConfig sim() const {
    SimConfig cfg = default_sim_config();
    if (const auto path = flags.raw("sim_config")) cfg = read_sim_config(*path);
    if (flags.raw("noise_sigma")) {
      cfg.noise_sigma_volts = flags.real("noise_sigma", cfg.noise_sigma_volts);
      cfg.validate();
    }
    return cfg;
  }

  std::pair<int, int> cell(const SimConfig& cfg) const {
    const auto p = flags.pair("cell");
    if (!p) return cfg.grid.hot_cell();
    return {static_cast<int>(p->first), static_cast<int>(p->second)};
  }

  ForestParams forest(int default_estimators) const {
    return as_usage([&] { return forest_unchecked(default_estimators); });
  }

  ForestParams forest_unchecked(int default_estimators) const {
    ForestParams p;
    p.n_estimators = flags.integer("n_estimators", default_estimators);
    if (const auto mf = flags.raw("max_features")) p.max_features = MaxFeatures::parse(*mf);
    p.min_samples_leaf = flags.integer("min_samples_leaf", p.min_samples_leaf);
    if (const auto depth = flags.raw("max_depth"); depth && *depth != "none") p.max_depth = flags.integer("max_depth", 0);
    p.min_interval = flags.integer("min_interval", p.min_interval);
    p.n_intervals = flags.integer("n_intervals", p.n_intervals);
    p.validate();
    return p;
  }

  BandSpec bands() const {
    if (const auto path = flags.raw("bands")) return read_band_spec(*path);
    return default_bands();
  }

  ProgramSpec program(const std::string& fallback) const {
    ProgramSpec prog;
    std::istringstream words(flags.text("program", fallback));
    for (std::string w; words >> w;) prog.instructions.push_back(w);
    prog.pad_with_nop = flags.boolean("pad_with_nop", true);
    return prog;
  }

  Trainer trainer(TrainerFamily family, int default_estimators) const {
    switch (family) {
      case TrainerFamily::forest:
        return forest_trainer(forest(default_estimators));
      case TrainerFamily::tsf:
        return tsf_trainer(forest(default_estimators));
      case TrainerFamily::knn:
        return as_usage([&] { return knn_trainer(flags.integer("neighbors", 100)); });
    }
    throw Error(Errc::usage, "unknown classifier");
  }
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string numbered(const std::string& prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

fs::path sidecar_for(const fs::path& trace_path) {
  fs::path p = trace_path;
  p.replace_extension(".boundaries.csv");
  return p;
}

struct WindowSet {
  std::vector<InstructionWindow> windows;
  double sample_rate_hz = 0.0;
};

WindowSet load_windows(const fs::path& manifest) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw Error(Errc::invalid_argument, manifest.string() + " lists no windows");
  WindowSet set;
  for (const auto& e : entries) {
    const Trace t = read_trace_file(e.path, format_from_path(e.path));
    if (set.sample_rate_hz == 0.0) set.sample_rate_hz = t.sample_rate_hz;
    if (t.sample_rate_hz != set.sample_rate_hz) {
      throw Error(Errc::invalid_argument, e.path.string() + ": sample rate differs from the first window");
    }
    InstructionWindow w = trace_to_window(t);
    w.label = e.label;
    set.windows.push_back(std::move(w));
  }
  return set;
}

std::vector<std::string> labels_in_order(const std::vector<InstructionWindow>& windows) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& w : windows) {
    if (w.label && seen.insert(*w.label).second) names.push_back(*w.label);
  }
  return names;
}

std::vector<std::string> band_column_names(const BandSpec& bands) {
  std::vector<std::string> names;
  for (const Band& b : bands.bands) names.push_back(format_double(b.low_hz) + "-" + format_double(b.high_hz));
  return names;
}

LabeledDataset load_features(const Context& ctx, const std::string& command) {
  return read_dataset_csv(ctx.flags.required("features", command));
}

int cmd_simulate(const Context& ctx) {
  const SimConfig sim = ctx.sim();
  const std::uint64_t seed = ctx.seed();
  const fs::path dir = ctx.out_dir();
  const TraceFormat format = ctx.format();
  const auto cell = ctx.cell(sim);
  const ProgramSpec prog = ctx.program("");
  fs::create_directories(dir / "traces");

  struct Job {
    std::string name;
    std::string label;
    ProgramSpec program;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  if (prog.instructions.empty()) {
    const int per_class = ctx.flags.integer("templates", 100);
    if (per_class < 1) throw Error(Errc::usage, "--templates must be positive");
    constexpr int kSlotsPerTrace = 20;
    for (std::size_t c = 0; c < sim.profiles.size(); ++c) {
      const std::string& m = sim.profiles[c].mnemonic;
      int remaining = per_class;
      for (std::uint64_t j = 0; remaining > 0; ++j) {
        const int slots = std::min(kSlotsPerTrace, remaining);
        remaining -= slots;
        jobs.push_back({numbered(m + "_", j, 4), m, {std::vector<std::string>(static_cast<std::size_t>(slots), m), prog.pad_with_nop},
                        derive_seed(derive_seed(seed, c), j)});
      }
    }
  } else {
    const int runs = ctx.flags.integer("runs", 1);
    if (runs < 1) throw Error(Errc::usage, "--runs must be positive");
    for (int i = 0; i < runs; ++i) {
      jobs.push_back({numbered("run_", static_cast<std::size_t>(i), 4), "program", prog, derive_seed(seed, static_cast<std::uint64_t>(i))});
    }
  }

  std::vector<ProgramTrace> traces(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) { traces[i] = synth_program_trace(jobs[i].program, sim, cell, jobs[i].seed); });
  std::vector<ManifestEntry> manifest;
  Index samples = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const fs::path path = dir / "traces" / (jobs[i].name + std::string(extension_for(format)));
    write_trace_file(path, traces[i].trace, format);
    write_boundaries(sidecar_for(path), traces[i].boundaries);
    manifest.push_back({jobs[i].label, path});
    samples += traces[i].trace.samples.size();
  }
  write_manifest(dir / "manifest.csv", manifest);
  std::ofstream cfg_out(dir / "sim.cfg", std::ios::trunc);
  write_sim_config(cfg_out, sim);
  ctx.out << "traces=" << jobs.size() << " samples=" << samples << " cell=" << cell.first << ',' << cell.second << '\n';
  return 0;
}

int cmd_segment(const Context& ctx) {
  const SimConfig sim = ctx.sim();
  const fs::path manifest_path = ctx.flags.required("manifest", "segment");
  const fs::path dir = ctx.out_dir();
  const TraceFormat format = ctx.format();
  const auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw Error(Errc::invalid_argument, manifest_path.string() + " lists no traces");

  struct Result {
    Trace trace;
    std::vector<InstructionWindow> windows;
    int mismatches = 0;
  };
  std::vector<Result> results(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const fs::path& path = entries[i].path;
    Result& r = results[i];
    r.trace = read_trace_file(path, format_from_path(path));
    ProgramSpec prog;
    if (ctx.flags.raw("program")) {
      prog = ctx.program("");
    } else {
      const auto meta = r.trace.meta_value("program");
      if (!meta) throw Error(Errc::invalid_argument, path.string() + ": no program metadata; pass --program");
      std::istringstream words(*meta);
      for (std::string w; words >> w;) prog.instructions.push_back(w);
      prog.pad_with_nop = r.trace.meta_value("pad_with_nop").value_or("0") == "1";
      if (ctx.flags.raw("pad_with_nop")) prog.pad_with_nop = ctx.flags.boolean("pad_with_nop", true);
    }
    try {
      r.windows = segment_program(r.trace, prog, sim);
    } catch (const Error& e) {
      throw Error(Errc::segmentation_failure, "trace " + std::to_string(i) + " (" + path.string() + "): " + e.what());
    }
    const fs::path sidecar = sidecar_for(path);
    if (fs::exists(sidecar)) {
      const auto truth = read_boundaries(sidecar);
      for (std::size_t s = 0; s < r.windows.size(); ++s) {
        if (s >= truth.size() || std::abs(r.windows[s].start_index - truth[s].start) > 1) ++r.mismatches;
      }
    }
  });

  fs::create_directories(dir / "windows");
  std::vector<ManifestEntry> manifest;
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  if (!index) throw Error(Errc::io, "cannot create " + (dir / "index.csv").string());
  index << "window_id,start,len,label\n";
  int mismatches = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    mismatches += results[i].mismatches;
    for (std::size_t s = 0; s < results[i].windows.size(); ++s) {
      const auto& w = results[i].windows[s];
      const std::string id = numbered("", i, 6) + numbered("_", s, 3);
      const fs::path path = dir / "windows" / (id + std::string(extension_for(format)));
      write_trace_file(path, window_to_trace(w, results[i].trace.sample_rate_hz, results[i].trace.clock_hz), format);
      manifest.push_back({*w.label, path});
      index << id << ',' << w.start_index << ',' << w.samples.size() << ',' << *w.label << '\n';
    }
  }
  write_manifest(dir / "windows.csv", manifest);
  ctx.out << "windows=" << manifest.size() << " traces=" << entries.size() << " boundary_mismatches=" << mismatches << '\n';
  return 0;
}

int cmd_select_bands(const Context& ctx) {
  const WindowSet set = load_windows(ctx.flags.required("manifest", "select-bands"));
  const fs::path dir = ctx.out_dir();
  const auto range = ctx.flags.pair("range").value_or(std::pair{31.0e6, 31.9e6});
  const double width = ctx.flags.real("band_width", 5e4);
  const int k = ctx.flags.integer("num_bands", 6);
  const auto scores = score_bands(set.windows, set.sample_rate_hz, range, width);
  const BandSpec spec = select_bands(set.windows, set.sample_rate_hz, range, width, k);
  write_band_spec(dir / "bands.csv", spec);
  std::ofstream out(dir / "band_scores.csv", std::ios::trunc);
  out << "low_hz,high_hz,fisher_ratio\n";
  for (const auto& s : scores) out << format_double(s.band.low_hz) << ',' << format_double(s.band.high_hz) << ',' << format_double(s.score) << '\n';
  ctx.out << "bands=" << spec.size() << " candidates=" << scores.size() << " range=" << format_double(range.first) << ','
          << format_double(range.second) << '\n';
  return 0;
}

int cmd_features(const Context& ctx) {
  const WindowSet set = load_windows(ctx.flags.required("manifest", "features"));
  const fs::path dir = ctx.out_dir();
  const auto names = labels_in_order(set.windows);
  const std::string kind = ctx.flags.text("kind", "band");
  LabeledDataset ds;
  if (kind == "band") {
    const BandSpec bands = ctx.bands();
    ds = band_dataset(set.windows, set.sample_rate_hz, bands, SpectralConfig{}, names);
    write_dataset_csv(dir / "features.csv", ds, DatasetKind::band, band_column_names(bands));
  } else if (kind == "raw") {
    Index shortest = set.windows.front().samples.size();
    for (const auto& w : set.windows) shortest = std::min(shortest, w.samples.size());
    ds = raw_dataset(set.windows, ctx.flags.integer("length", static_cast<int>(shortest)), names);
    write_dataset_csv(dir / "features.csv", ds, DatasetKind::raw);
  } else {
    throw Error(Errc::usage, "--kind must be band or raw");
  }
  ctx.out << "examples=" << ds.size() << " dims=" << ds.dims() << " classes=" << ds.num_classes() << '\n';
  return 0;
}

int cmd_train(const Context& ctx) {
  const TrainerFamily family = ctx.family();
  if (family == TrainerFamily::knn) throw Error(Errc::usage, "knn keeps no model file; use cv or hyperopt");
  const ForestParams params = ctx.forest(1000);
  const LabeledDataset ds = load_features(ctx, "train");
  const fs::path dir = ctx.out_dir();
  const ForestModel model =
      family == TrainerFamily::tsf ? train_tsf(ds, params, ctx.seed()) : train_forest(ds, params, ctx.seed());
  save_model_file(dir / "model.emrf", model);
  ConfusionMatrix cm(ds.class_names);
  for (Index i = 0; i < ds.size(); ++i) cm.add(ds.labels[i], predict(model, ds.features.row(i).transpose()).label);
  ctx.out << "trees=" << model.trees.size() << " classes=" << model.num_classes() << " train_accuracy=" << fixed(cm.accuracy())
          << '\n';
  return 0;
}

int cmd_classify(const Context& ctx) {
  const ForestModel model = load_model_file(ctx.flags.required("model", "classify"));
  const LabeledDataset ds = load_features(ctx, "classify");
  const fs::path dir = ctx.out_dir();
  std::vector<int> predicted(static_cast<std::size_t>(ds.size()));
  parallel_for(predicted.size(), [&](std::size_t i) { predicted[i] = predict(model, ds.features.row(static_cast<Index>(i)).transpose()).label; });
  std::ofstream out(dir / "predictions.csv", std::ios::trunc);
  out << "index,label,predicted\n";
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const std::string& truth = ds.class_names[ds.labels[i]];
    const std::string& guess = model.class_names[predicted[i]];
    correct += truth == guess;
    out << i << ',' << truth << ',' << guess << '\n';
  }
  const double accuracy = predicted.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(predicted.size());
  ctx.out << "accuracy=" << fixed(accuracy) << " examples=" << predicted.size() << " classes=" << model.num_classes() << '\n';
  return 0;
}

int cmd_cv(const Context& ctx) {
  const Trainer trainer = ctx.trainer(ctx.family(), 1000);
  const int folds = ctx.flags.integer("folds", 4);
  const LabeledDataset ds = load_features(ctx, "cv");
  const fs::path dir = ctx.out_dir();
  const ConfusionMatrix cm = kfold_cv(ds, folds, trainer, ctx.seed());
  write_confusion_csv(dir / "confusion.csv", cm);
  std::ofstream(dir / "confusion.txt", std::ios::trunc) << format_confusion_table(cm);
  ctx.out << "accuracy=" << fixed(cm.accuracy(), 3) << " classes=" << ds.num_classes() << " folds=" << folds << '\n';
  return 0;
}

int cmd_hyperopt(const Context& ctx) {
  const TrainerFamily family = ctx.family();
  const LabeledDataset ds = load_features(ctx, "hyperopt");
  const fs::path dir = ctx.out_dir();
  SearchSpace space = default_search_space(family);
  space.n_iterations = ctx.flags.integer("iterations", space.n_iterations);
  space.seed = ctx.seed();
  const int folds = ctx.flags.integer("folds", 4);
  const SearchResult result = random_search(space, ds, family, folds, ctx.seed());
  write_trials_csv(dir / "trials.csv", result);
  std::ofstream best(dir / "best_params.cfg", std::ios::trunc);
  best << "classifier = " << family_name(family) << '\n';
  for (const auto& [key, value] : result.best_params) best << (key == "k" ? "neighbors" : key) << " = " << value << '\n';
  ctx.out << "best_accuracy=" << fixed(result.best_accuracy) << " trials=" << result.trials.size()
          << " classifier=" << family_name(family) << '\n';
  return 0;
}

int cmd_gridscan(const Context& ctx) {
  const SimConfig sim = ctx.sim();
  const fs::path dir = ctx.out_dir();
  const int per_class = ctx.flags.integer("windows_per_class", 20);
  const int length = ctx.flags.integer("length", static_cast<int>(3 * sim.samples_per_cycle()));
  const int folds = ctx.flags.integer("folds", 4);
  const auto cells = grid_datasets(sim, per_class, length, derive_seed(ctx.seed(), 0));
  const LeakageMap map = grid_leakage_scan(cells, sim.grid.rows(), sim.grid.cols(), ctx.forest(25), derive_seed(ctx.seed(), 1), folds);
  write_leakage_csv(dir / "leakage_map.csv", map);
  write_leakage_ppm(dir / "leakage_map.ppm", map);
  std::ofstream(dir / "leakage_map.txt", std::ios::trunc) << format_leakage_table(map);
  const auto hot = map.argmax();
  const auto truth = sim.grid.hot_cell();
  ctx.out << "hot_cell=" << hot.first << ',' << hot.second << " accuracy=" << fixed(map.accuracy(hot.first, hot.second))
          << " max_coupling_cell=" << truth.first << ',' << truth.second << '\n';
  return 0;
}

int cmd_coderec(const Context& ctx) {
  const SimConfig sim = ctx.sim();
  const fs::path dir = ctx.out_dir();
  const std::uint64_t seed = ctx.seed();
  CodeRecognitionConfig config;
  config.program = ctx.program("LD ST ADD MOV RJMP");
  config.train_fraction = ctx.flags.real("split", 0.75);
  config.bands = ctx.bands();
  config.forest = ctx.forest(1000);
  config.cv_folds = ctx.flags.integer("folds", 4);
  const int runs = ctx.flags.integer("runs", 500);

  TemplateOptions templ;
  templ.windows_per_class = ctx.flags.integer("templates", 100);
  templ.pad_with_nop = config.program.pad_with_nop;
  templ.cell = ctx.cell(sim);
  const auto windows = capture_templates(sim, templ, derive_seed(seed, 0));
  const LabeledDataset templates = band_dataset(windows, sim.sample_rate_hz, config.bands, config.spectral, sim.mnemonics());
  const auto runs_out = simulate_runs(sim, config.program, runs, *templ.cell, derive_seed(seed, 1));
  std::vector<Trace> traces;
  traces.reserve(runs_out.size());
  for (const auto& r : runs_out) traces.push_back(r.trace);
  const CodeRecognitionResult result = code_recognition(traces, templates, sim, config, derive_seed(seed, 2));
  write_confusion_csv(dir / "confusion.csv", result.confusion);
  std::ofstream(dir / "confusion.txt", std::ios::trunc) << format_confusion_table(result.confusion);
  ctx.out << "accuracy=" << fixed(result.confusion.accuracy(), 3) << " template_cv_accuracy=" << fixed(result.template_cv_accuracy, 3)
          << " runs=" << runs << " test_slots=" << result.confusion.total() << '\n';
  return 0;
}

int cmd_reproduce(const Context& ctx) {
  const std::string profile = ctx.flags.required("profile", "reproduce");
  if (profile != "paper-like") throw Error(Errc::usage, "unknown profile '" + profile + "' (available: paper-like)");
  const fs::path dir = ctx.out_dir();
  const std::uint64_t seed = ctx.seed();
  SimConfig sim = ctx.sim();

  CalibrationOptions cal;
  cal.target_accuracy = ctx.flags.real("target_accuracy", 0.89);
  cal.trials = ctx.flags.integer("trials", 1000);
  cal.bands = default_bands();
  const CalibrationResult calibrated = calibrate_noise(sim, cal, derive_seed(seed, 0));
  sim.noise_sigma_volts = calibrated.noise_sigma_volts;
  {
    std::ofstream out(dir / "sim.cfg", std::ios::trunc);
    write_sim_config(out, sim);
  }

  TemplateOptions templ;
  templ.windows_per_class = ctx.flags.integer("templates", 100);
  const auto windows = capture_templates(sim, templ, derive_seed(seed, 1));
  const BandSpec bands = select_bands(windows, sim.sample_rate_hz, {31.3e6, 31.6e6}, 5e4, 6);
  write_band_spec(dir / "bands.csv", bands);
  const LabeledDataset ds = band_dataset(windows, sim.sample_rate_hz, bands, SpectralConfig{}, sim.mnemonics());
  write_dataset_csv(dir / "features.csv", ds, DatasetKind::band, band_column_names(bands));

  const int folds = ctx.flags.integer("folds", 4);
  const ForestParams forest = ctx.forest(100);
  const ConfusionMatrix cv = kfold_cv(ds, folds, forest_trainer(forest), derive_seed(seed, 2));
  write_confusion_csv(dir / "confusion.csv", cv);

  CodeRecognitionConfig config;
  config.program = ctx.program("LD ST ADD MOV RJMP");
  config.bands = bands;
  config.forest = forest;
  config.cv_folds = folds;
  const int runs = ctx.flags.integer("runs", 500);
  const auto runs_out = simulate_runs(sim, config.program, runs, sim.grid.hot_cell(), derive_seed(seed, 3));
  std::vector<Trace> traces;
  for (const auto& r : runs_out) traces.push_back(r.trace);
  const CodeRecognitionResult rec = code_recognition(traces, ds, sim, config, derive_seed(seed, 4));
  write_confusion_csv(dir / "coderec_confusion.csv", rec.confusion);

  std::ostringstream summary;
  summary << "accuracy=" << fixed(cv.accuracy(), 3) << " classes=" << ds.num_classes() << " folds=" << folds
          << " noise_sigma=" << fixed(calibrated.noise_sigma_volts, 5) << " oracle_accuracy=" << fixed(calibrated.oracle_accuracy, 3)
          << " coderec_accuracy=" << fixed(rec.confusion.accuracy(), 3);
  std::ofstream(dir / "summary.txt", std::ios::trunc)
      << summary.str() << "\n\nsingle-instruction cross-validation\n"
      << format_confusion_table(cv) << "\ncode recognition\n"
      << format_confusion_table(rec.confusion);
  ctx.out << summary.str() << '\n';
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EM side-channel instruction recognition pipeline", "emscope"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  std::string config_path;
  app.add_option("--config", config_path, "run config file (key = value)");
  flags.add(&app, "seed", "master seed (unsigned 64-bit)");
  flags.add(&app, "out", "output directory");
  flags.add(&app, "format", "trace format: csv or binary");
  flags.add(&app, "sim_config", "simulator config file");
  flags.add(&app, "noise_sigma", "override simulator noise sigma (volts)");

  using Handler = int (*)(const Context&);
  std::vector<std::pair<CLI::App*, Handler>> commands;
  auto command = [&](const char* name, const char* help, Handler handler) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    commands.emplace_back(sub, handler);
    return sub;
  };
  auto forest_flags = [&](CLI::App* sub) {
    flags.add(sub, "n_estimators", "trees per forest");
    flags.add(sub, "max_features", "sqrt, all or an integer");
    flags.add(sub, "min_samples_leaf", "minimum examples per leaf");
    flags.add(sub, "max_depth", "depth cap or none");
    flags.add(sub, "min_interval", "shortest interval (tsf)");
    flags.add(sub, "n_intervals", "intervals per tree (tsf, 0 = sqrt of length)");
  };

  CLI::App* sim = command("simulate", "synthesize trigger-framed traces and boundary sidecars", cmd_simulate);
  flags.add(sim, "program", "space-separated mnemonics (omit for per-class templates)");
  flags.add(sim, "runs", "program runs");
  flags.add(sim, "templates", "windows per class in template mode");
  flags.add(sim, "cell", "grid cell row,col (default: max-coupling cell)");
  flags.add_flag(sim, "pad_with_nop", "surround each instruction with NOPs");

  CLI::App* seg = command("segment", "cut traces into instruction windows at trigger pulses", cmd_segment);
  flags.add(seg, "manifest", "trace manifest (label,trace_path)");
  flags.add(seg, "program", "override the program stored in trace metadata");
  flags.add_flag(seg, "pad_with_nop", "override NOP padding");

  CLI::App* sel = command("select-bands", "rank candidate bands by Fisher ratio", cmd_select_bands);
  flags.add(sel, "manifest", "window manifest");
  flags.add(sel, "range", "search range low_hz,high_hz");
  flags.add(sel, "band_width", "candidate band width (Hz)");
  flags.add(sel, "num_bands", "bands to keep");

  CLI::App* feat = command("features", "extract a feature table from windows", cmd_features);
  flags.add(feat, "manifest", "window manifest");
  flags.add(feat, "kind", "band or raw");
  flags.add(feat, "bands", "band spec file (default: six 50 kHz bands over 31.3-31.6 MHz)");
  flags.add(feat, "length", "raw window length");

  CLI::App* train = command("train", "train a forest and write model.emrf", cmd_train);
  flags.add(train, "features", "feature table");
  flags.add(train, "classifier", "forest or tsf");
  forest_flags(train);

  CLI::App* cls = command("classify", "predict a feature table with a saved model", cmd_classify);
  flags.add(cls, "model", "model file");
  flags.add(cls, "features", "feature table");

  CLI::App* cv = command("cv", "stratified k-fold cross-validation", cmd_cv);
  flags.add(cv, "features", "feature table");
  flags.add(cv, "classifier", "forest, knn or tsf");
  flags.add(cv, "folds", "number of folds");
  flags.add(cv, "neighbors", "k for knn");
  forest_flags(cv);

  CLI::App* hyper = command("hyperopt", "random hyperparameter search", cmd_hyperopt);
  flags.add(hyper, "features", "feature table");
  flags.add(hyper, "classifier", "forest, knn or tsf");
  flags.add(hyper, "iterations", "sampled parameter points");
  flags.add(hyper, "folds", "number of folds");

  CLI::App* grid = command("gridscan", "leakage map over the simulated probe grid", cmd_gridscan);
  flags.add(grid, "windows_per_class", "windows per class per cell");
  flags.add(grid, "length", "raw window length");
  flags.add(grid, "folds", "number of folds");
  forest_flags(grid);

  CLI::App* rec = command("coderec", "recognize instructions in simulated program runs", cmd_coderec);
  flags.add(rec, "program", "space-separated mnemonics");
  flags.add_flag(rec, "pad_with_nop", "surround each instruction with NOPs");
  flags.add(rec, "runs", "program runs");
  flags.add(rec, "templates", "template windows per class");
  flags.add(rec, "split", "fraction of runs used for training");
  flags.add(rec, "bands", "band spec file (default: six 50 kHz bands over 31.3-31.6 MHz)");
  flags.add(rec, "folds", "folds for the template cross-validation");
  flags.add(rec, "cell", "grid cell row,col");
  forest_flags(rec);

  CLI::App* rep = command("reproduce", "calibrate, simulate, segment, select bands, cross-validate, recognize code", cmd_reproduce);
  flags.add(rep, "profile", "workflow profile (paper-like)");
  flags.add(rep, "target_accuracy", "calibration target");
  flags.add(rep, "trials", "Monte-Carlo trials per class");
  flags.add(rep, "templates", "template windows per class");
  flags.add(rep, "runs", "program runs");
  flags.add(rep, "folds", "number of folds");
  flags.add(rep, "program", "space-separated mnemonics");
  flags.add_flag(rep, "pad_with_nop", "surround each instruction with NOPs");
  forest_flags(rep);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "emscope: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (!config_path.empty()) {
      RunConfig cfg = RunConfig::load(config_path);
      const auto known = flags.keys();
      for (const auto& entry : cfg.values) {
        if (!known.count(entry.first)) throw Error(Errc::usage, config_path + ": unknown key '" + entry.first + "'");
      }
      flags.set_config(std::move(cfg));
    }
    Context ctx{flags, out, err};
    for (const auto& [sub, handler] : commands) {
      if (sub->parsed()) return handler(ctx);
    }
    err << app.help();
    return 1;
  } catch (const Error& e) {
    err << "emscope: " << e.what() << '\n';
    return e.code() == Errc::usage ? 1 : 2;
  } catch (const std::exception& e) {
    err << "emscope: " << e.what() << '\n';
    return 2;
  }
}

int run_command(const std::vector<std::string>& args) { return run_command(args, std::cout, std::cerr); }

}  // namespace emscope
