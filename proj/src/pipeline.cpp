#include "emscope/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

namespace emscope {

std::vector<InstructionWindow> segment_program(const Trace& trace, const ProgramSpec& program, const SimConfig& sim) {
  std::vector<int> cycles;
  cycles.reserve(program.instructions.size());
  for (const auto& m : program.instructions) cycles.push_back(slot_cycles(sim, m, program.pad_with_nop));
  const TriggerSpec spec = default_trigger_spec(trace);
  const auto triggers = detect_triggers(trace, spec);
  if (triggers.size() != cycles.size() + 1) {
    throw Error(Errc::insufficient_triggers, "found " + std::to_string(triggers.size()) + " triggers, program needs " +
                                                 std::to_string(cycles.size() + 1));
  }
  auto windows = extract_windows(trace, triggers, cycles, spec);
  for (std::size_t i = 0; i < windows.size(); ++i) windows[i].label = program.instructions[i];
  return windows;
}

namespace {

std::vector<int> label_indices(std::span<const InstructionWindow> windows, const std::vector<std::string>& class_names) {
  std::map<std::string, int> index;
  for (std::size_t c = 0; c < class_names.size(); ++c) index[class_names[c]] = static_cast<int>(c);
  std::vector<int> labels;
  labels.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].label) throw Error(Errc::invalid_argument, "window " + std::to_string(i) + " has no label");
    const auto it = index.find(*windows[i].label);
    if (it == index.end()) throw Error(Errc::invalid_argument, "window " + std::to_string(i) + " has unknown label '" + *windows[i].label + "'");
    labels.push_back(it->second);
  }
  return labels;
}

}  // namespace

LabeledDataset band_dataset(std::span<const InstructionWindow> windows, double sample_rate_hz, const BandSpec& bands,
                            const SpectralConfig& spectral, const std::vector<std::string>& class_names) {
  if (bands.bands.empty()) throw Error(Errc::no_features, "band spec is empty");
  LabeledDataset ds;
  ds.class_names = class_names;
  ds.labels = label_indices(windows, class_names);
  ds.features.resize(static_cast<Index>(windows.size()), static_cast<Index>(bands.size()));
  std::map<Index, BandProjector> projectors;
  for (const auto& w : windows) {
    if (!projectors.count(w.samples.size())) {
      projectors.emplace(w.samples.size(), BandProjector(w.samples.size(), sample_rate_hz, bands, spectral));
    }
  }
  parallel_for(windows.size(), [&](std::size_t i) {
    ds.features.row(static_cast<Index>(i)) = projectors.at(windows[i].samples.size()).features(windows[i].samples).transpose();
  });
  return ds;
}

LabeledDataset raw_dataset(std::span<const InstructionWindow> windows, Index length,
                           const std::vector<std::string>& class_names) {
  if (length < 1) throw Error(Errc::invalid_argument, "window length must be positive");
  LabeledDataset ds;
  ds.class_names = class_names;
  ds.labels = label_indices(windows, class_names);
  ds.features.resize(static_cast<Index>(windows.size()), length);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].samples.size() < length) {
      throw Error(Errc::window_too_short, "window " + std::to_string(i) + " has " + std::to_string(windows[i].samples.size()) +
                                              " samples, need " + std::to_string(length));
    }
    ds.features.row(static_cast<Index>(i)) = windows[i].samples.head(length).transpose();
  }
  return ds;
}

namespace {

std::vector<InstructionWindow> capture_class(const SimConfig& sim, const std::string& mnemonic, int count, int per_trace,
                                             bool pad, std::pair<int, int> cell, std::uint64_t seed) {
  std::vector<InstructionWindow> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t j = 0; static_cast<int>(out.size()) < count; ++j) {
    const int slots = std::min(per_trace, count - static_cast<int>(out.size()));
    ProgramSpec program{std::vector<std::string>(static_cast<std::size_t>(slots), mnemonic), pad};
    const ProgramTrace run = synth_program_trace(program, sim, cell, derive_seed(seed, j));
    auto windows = segment_program(run.trace, program, sim);
    for (std::size_t s = 0; s < windows.size(); ++s) {
      if (std::abs(windows[s].start_index - run.boundaries[s].start) > 1) {
        throw Error(Errc::segmentation_failure, "template capture for " + mnemonic + ": slot " + std::to_string(s) +
                                                    " starts at " + std::to_string(windows[s].start_index) + ", expected " +
                                                    std::to_string(run.boundaries[s].start));
      }
      out.push_back(std::move(windows[s]));
    }
  }
  return out;
}

}  // namespace

std::vector<InstructionWindow> capture_templates(const SimConfig& sim, const TemplateOptions& options,
                                                 std::uint64_t seed) {
  if (options.windows_per_class < 1 || options.slots_per_trace < 1) {
    throw Error(Errc::invalid_argument, "windows_per_class and slots_per_trace must be positive");
  }
  sim.validate();
  const auto cell = options.cell.value_or(sim.grid.hot_cell());
  std::vector<std::vector<InstructionWindow>> per_class(sim.profiles.size());
  parallel_for(per_class.size(), [&](std::size_t c) {
    per_class[c] = capture_class(sim, sim.profiles[c].mnemonic, options.windows_per_class, options.slots_per_trace,
                                 options.pad_with_nop, cell, derive_seed(seed, c));
  });
  std::vector<InstructionWindow> out;
  for (auto& windows : per_class) std::move(windows.begin(), windows.end(), std::back_inserter(out));
  return out;
}

std::vector<ProgramTrace> simulate_runs(const SimConfig& sim, const ProgramSpec& program, int runs,
                                        std::pair<int, int> cell, std::uint64_t seed) {
  if (runs < 1) throw Error(Errc::invalid_argument, "runs must be positive");
  std::vector<ProgramTrace> out(static_cast<std::size_t>(runs));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = synth_program_trace(program, sim, cell, derive_seed(seed, i)); });
  return out;
}

std::vector<LabeledDataset> grid_datasets(const SimConfig& sim, int windows_per_class, Index window_length,
                                          std::uint64_t seed) {
  sim.validate();
  const auto names = sim.mnemonics();
  const int cells = sim.grid.rows() * sim.grid.cols();
  std::vector<LabeledDataset> out(static_cast<std::size_t>(cells));
  parallel_for(out.size(), [&](std::size_t i) {
    TemplateOptions options;
    options.windows_per_class = windows_per_class;
    options.cell = std::pair<int, int>{static_cast<int>(i) / sim.grid.cols(), static_cast<int>(i) % sim.grid.cols()};
    const auto windows = capture_templates(sim, options, derive_seed(seed, i));
    out[i] = raw_dataset(windows, window_length, names);
  });
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& ds, DatasetKind kind,
                       const std::vector<std::string>& column_names) {
  ds.validate();
  if (!column_names.empty() && static_cast<Index>(column_names.size()) != ds.dims()) {
    throw Error(Errc::dimension_mismatch, "column name count differs from feature count");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  out << "# classes=";
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) out << (c ? "," : "") << ds.class_names[c];
  out << "\n# kind=" << (kind == DatasetKind::band ? "band" : "raw") << "\nlabel";
  for (Index j = 0; j < ds.dims(); ++j) out << ',' << (column_names.empty() ? "f" + std::to_string(j) : column_names[j]);
  out << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    out << ds.class_names[ds.labels[i]];
    for (Index j = 0; j < ds.dims(); ++j) out << ',' << format_double(ds.features(i, j));
    out << '\n';
  }
  if (!out) throw Error(Errc::io, "failed writing " + path.string());
}

namespace {

std::vector<std::string> split_commas(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = text.find(',', pos);
    out.emplace_back(trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) return out;
    pos = comma + 1;
  }
}

}  // namespace

LabeledDataset read_dataset_csv(const std::filesystem::path& path, DatasetKind* kind) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  const auto fail = [&](std::size_t line_no, const std::string& what) -> Error {
    return Error(Errc::malformed_sample, path.string() + " line " + std::to_string(line_no) + ": " + what);
  };
  LabeledDataset ds;
  std::map<std::string, int> index;
  bool have_classes = false;
  DatasetKind found_kind = DatasetKind::band;
  std::size_t columns = 0;
  bool header_seen = false;
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    if (text.front() == '#') {
      const std::string_view body = trim(text.substr(1));
      if (body.substr(0, 8) == "classes=") {
        ds.class_names = split_commas(body.substr(8));
        for (std::size_t c = 0; c < ds.class_names.size(); ++c) index[ds.class_names[c]] = static_cast<int>(c);
        have_classes = true;
      } else if (body == "kind=band") {
        found_kind = DatasetKind::band;
      } else if (body == "kind=raw") {
        found_kind = DatasetKind::raw;
      }
      continue;
    }
    const auto fields = split_commas(text);
    if (!header_seen) {
      if (fields.empty() || fields.front() != "label") throw fail(line_no, "expected a 'label,...' header");
      columns = fields.size() - 1;
      if (columns == 0) throw Error(Errc::no_features, path.string() + ": no feature columns");
      header_seen = true;
      continue;
    }
    if (fields.size() != columns + 1) throw fail(line_no, "expected " + std::to_string(columns + 1) + " fields");
    auto it = index.find(fields.front());
    if (it == index.end()) {
      if (have_classes) throw fail(line_no, "label '" + fields.front() + "' not in the class list");
      it = index.emplace(fields.front(), static_cast<int>(ds.class_names.size())).first;
      ds.class_names.push_back(fields.front());
    }
    ds.labels.push_back(it->second);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v)) throw fail(line_no, "bad number '" + fields[j] + "'");
      if (!std::isfinite(v)) throw Error(Errc::non_finite_sample, path.string() + " line " + std::to_string(line_no) + ": non-finite value");
      values.push_back(v);
    }
  }
  if (!header_seen) throw Error(Errc::malformed_header, path.string() + ": missing header");
  ds.features = Eigen::Map<const MatrixXd>(values.data(), static_cast<Index>(ds.labels.size()), static_cast<Index>(columns));
  if (kind) *kind = found_kind;
  ds.validate();
  return ds;
}

ProgramSpec default_coderec_program() { return {{"LD", "ST", "ADD", "MOV", "RJMP"}, true}; }

}  // namespace emscope
