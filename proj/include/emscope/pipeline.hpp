#pragma once

#include "emscope/segmentation.hpp"
#include "emscope/simulator.hpp"
#include "emscope/spectral.hpp"
#include "emscope/trace.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace emscope {

/// Cuts a simulated program trace into one labelled window per slot. Expects
/// exactly one trigger more than the program has instructions.
std::vector<InstructionWindow> segment_program(const Trace& trace, const ProgramSpec& program, const SimConfig& sim);

/// Band features of every window. Labels index into `class_names`; a window
/// without a label or with an unknown one throws Errc::invalid_argument.
LabeledDataset band_dataset(std::span<const InstructionWindow> windows, double sample_rate_hz, const BandSpec& bands,
                            const SpectralConfig& spectral, const std::vector<std::string>& class_names);

/// First `length` samples of every window, one window per row.
LabeledDataset raw_dataset(std::span<const InstructionWindow> windows, Index length,
                           const std::vector<std::string>& class_names);

struct TemplateOptions {
  int windows_per_class = 100;
  bool pad_with_nop = true;
  /// Slots per simulated capture trace.
  int slots_per_trace = 20;
  /// Defaults to the grid's hot cell.
  std::optional<std::pair<int, int>> cell;
};

/// Single-instruction templates for every profile, obtained the way a bench
/// capture would be: simulate trigger-framed repetitions, segment them, and
/// check each window against the simulator's boundaries. Class c draws from
/// derive_seed(seed, c).
std::vector<InstructionWindow> capture_templates(const SimConfig& sim, const TemplateOptions& options,
                                                 std::uint64_t seed);

/// Run i is synthesized with seed derive_seed(seed, i).
std::vector<ProgramTrace> simulate_runs(const SimConfig& sim, const ProgramSpec& program, int runs,
                                        std::pair<int, int> cell, std::uint64_t seed);

/// Raw template windows for every grid cell in row-major order, truncated to
/// `window_length` samples. Cell i draws from derive_seed(seed, i).
std::vector<LabeledDataset> grid_datasets(const SimConfig& sim, int windows_per_class, Index window_length,
                                          std::uint64_t seed);

enum class DatasetKind { band, raw };

// Feature table: `# classes=A,B,...` and `# kind=band|raw` comment lines, a
// `label,<column names>` header, then one labelled row per example. Values
// are written in shortest round-trip form.
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& ds, DatasetKind kind,
                       const std::vector<std::string>& column_names = {});
LabeledDataset read_dataset_csv(const std::filesystem::path& path, DatasetKind* kind = nullptr);

/// Five-instruction loop used for code recognition.
ProgramSpec default_coderec_program();

}  // namespace emscope
