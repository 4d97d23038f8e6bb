#pragma once

#include "emscope/common.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace emscope {

/// Ordered key/value metadata. Order is preserved through every format.
using Meta = std::vector<std::pair<std::string, std::string>>;

inline constexpr double kDefaultClockHz = 16e6;
inline constexpr double kDefaultSampleRateHz = 2.5e8;

/// Raw voltage time series plus the sampling metadata needed to interpret it.
struct Trace {
  VectorXd samples;
  double sample_rate_hz = kDefaultSampleRateHz;
  double clock_hz = kDefaultClockHz;
  Meta meta;

  /// round(sample_rate_hz / clock_hz)
  Index samples_per_cycle() const;
  std::optional<std::string> meta_value(std::string_view key) const;
  void set_meta(std::string key, std::string value);

  /// Throws Errc::invalid_argument when an invariant is broken.
  void validate() const;

  friend bool operator==(const Trace& a, const Trace& b);
};

Index samples_per_cycle(double sample_rate_hz, double clock_hz);

/// One instruction's samples cut out between two triggers.
struct InstructionWindow {
  VectorXd samples;
  Index start_index = 0;
  std::optional<std::string> label;
  int cycles = 1;
};

enum class TraceFormat { csv, binary };

TraceFormat parse_trace_format(std::string_view name);
std::string_view extension_for(TraceFormat format);

/// Parses a trace. Failures throw Error with malformed_header,
/// malformed_sample, non_finite_sample, truncated_payload, unknown_version or
/// trailing_data; the message names the byte offset (binary) or line (CSV).
Trace read_trace(std::istream& in, TraceFormat format);
void write_trace(std::ostream& out, const Trace& trace, TraceFormat format);

Trace read_trace_file(const std::filesystem::path& path, TraceFormat format);
void write_trace_file(const std::filesystem::path& path, const Trace& trace, TraceFormat format);

/// Guesses the format from the file extension (.csv, anything else binary).
TraceFormat format_from_path(const std::filesystem::path& path);

// A window travels on disk as a Trace whose meta carries start_index, cycles
// and (optionally) label.
Trace window_to_trace(const InstructionWindow& window, double sample_rate_hz, double clock_hz);
InstructionWindow trace_to_window(const Trace& trace);

struct ManifestEntry {
  std::string label;
  std::filesystem::path path;
};

/// `label,trace_path` per line; blank lines and `#` comments are skipped.
/// Relative paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Supervised dataset: one example per row.
struct LabeledDataset {
  MatrixXd features;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  Index size() const { return features.rows(); }
  Index dims() const { return features.cols(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<Index> class_counts() const;
  LabeledDataset subset(const std::vector<Index>& rows) const;

  void validate() const;
};

/// Stratified partition of example indices: within every class a seeded
/// shuffle, then the first round(fraction * n_class) go to the first part
/// (clamped so both parts keep at least one example of every class).
std::pair<std::vector<Index>, std::vector<Index>> stratified_split_indices(
    const std::vector<int>& labels, int num_classes, double fraction, std::uint64_t seed);

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double fraction,
                                                         std::uint64_t seed);

}  // namespace emscope
