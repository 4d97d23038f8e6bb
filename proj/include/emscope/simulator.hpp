#pragma once

#include "emscope/common.hpp"
#include "emscope/spectral.hpp"
#include "emscope/trace.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace emscope {

/// One sinusoidal component of an instruction's emission. Each execution
/// draws its phase uniformly from [-phase_jitter_rad, +phase_jitter_rad].
struct Tone {
  double frequency_hz = 0.0;
  double amplitude_volts = 0.0;
  double phase_jitter_rad = 0.0;
};

struct InstructionProfile {
  std::string mnemonic;
  int cycles = 1;
  std::vector<Tone> tones;

  /// Sum of tone amplitudes: the largest excursion the signature can reach.
  double peak_amplitude() const;
};

/// Per-cell coupling gain over the scanned board, row-major.
struct CouplingGrid {
  MatrixXd gain = MatrixXd::Ones(1, 1);

  int rows() const { return static_cast<int>(gain.rows()); }
  int cols() const { return static_cast<int>(gain.cols()); }
  std::pair<int, int> hot_cell() const;
};

/// Smooth 2-D Gaussian bump peaking at exactly 1.0 on the hot cell and
/// decaying towards `floor_gain` elsewhere.
CouplingGrid bump_grid(int rows, int cols, int hot_row, int hot_col, double width_cells, double floor_gain);

struct SimConfig {
  std::vector<InstructionProfile> profiles;
  double clock_hz = kDefaultClockHz;
  double sample_rate_hz = kDefaultSampleRateHz;
  double noise_sigma_volts = 0.0;
  double trigger_amplitude_volts = 10.0;
  int trigger_cycles = 2;
  CouplingGrid grid;
  std::uint64_t seed = 1;

  Index samples_per_cycle() const { return emscope::samples_per_cycle(sample_rate_hz, clock_hz); }
  const InstructionProfile& profile(std::string_view mnemonic) const;
  bool has_profile(std::string_view mnemonic) const;
  std::vector<std::string> mnemonics() const;
  double max_peak_amplitude() const;

  /// Checks every invariant, including the unique hot cell and the trigger
  /// margin over signature amplitude plus four noise sigmas.
  void validate() const;
};

/// Twelve AVR stand-in profiles with signatures between 31.0 and 31.9 MHz.
std::vector<InstructionProfile> default_profiles();

/// default_profiles() on an 8x10 grid whose hot spot sits at (3, 6).
SimConfig default_sim_config();

struct ProgramSpec {
  std::vector<std::string> instructions;
  bool pad_with_nop = false;
};

/// Ground truth for one instruction slot of a synthesized trace. [start, end)
/// covers the samples between the end of one trigger pulse and the start of
/// the next.
struct SlotBoundary {
  Index start = 0;
  Index end = 0;
  std::string label;
  int cycles = 0;
};

struct ProgramTrace {
  Trace trace;
  std::vector<SlotBoundary> boundaries;
};

/// cycles * samples_per_cycle samples of gain * sum(tones) + N(0, sigma).
VectorXd synth_instruction(const InstructionProfile& profile, const SimConfig& cfg, double gain, Rng& rng);

/// Cycles occupied by one slot, counting the NOP pads when requested.
int slot_cycles(const SimConfig& cfg, std::string_view mnemonic, bool pad_with_nop);

/// Samples of one slot (instruction alone or NOP, instruction, NOP).
VectorXd synth_slot(const SimConfig& cfg, std::string_view mnemonic, bool pad_with_nop, double gain, Rng& rng);

/// Trigger, slot, trigger, slot, ..., trigger. Slot i draws from
/// derive_seed(seed, 2i + 1) and trigger i from derive_seed(seed, 2i), so the
/// output does not depend on generation order.
ProgramTrace synth_program_trace(const ProgramSpec& program, const SimConfig& cfg, std::pair<int, int> grid_cell,
                                 std::uint64_t seed);

void write_boundaries(const std::filesystem::path& path, const std::vector<SlotBoundary>& boundaries);
std::vector<SlotBoundary> read_boundaries(const std::filesystem::path& path);

struct CalibrationResult {
  double noise_sigma_volts = 0.0;
  /// Nearest-mean oracle accuracy measured at the returned sigma.
  double oracle_accuracy = 0.0;
};

struct CalibrationOptions {
  double target_accuracy = 0.89;
  int trials = 1000;
  double tolerance = 0.02;
  BandSpec bands;
  SpectralConfig spectral;
  bool pad_with_nop = true;
};

/// Monte-Carlo nearest-mean accuracy on band features at a given sigma.
/// Class means come from `trials` windows per class, accuracy from `trials`
/// fresh windows per class.
double nearest_mean_accuracy(const SimConfig& cfg, double noise_sigma, const CalibrationOptions& options,
                             std::uint64_t seed);

/// Bisects sigma in [0, 10 * max amplitude] for the largest noise level whose
/// nearest-mean accuracy still reaches the target. Random draws are shared
/// across probes so accuracy is a deterministic function of sigma.
CalibrationResult calibrate_noise(const SimConfig& cfg, const CalibrationOptions& options, std::uint64_t seed);

// Text config: `key = value` lines, then one `[instruction NAME]` section per
// profile with `cycles = N` and `tone = freq_hz, amplitude_v, jitter_rad` lines.
SimConfig parse_sim_config(std::istream& in);
SimConfig read_sim_config(const std::filesystem::path& path);
void write_sim_config(std::ostream& out, const SimConfig& cfg);

}  // namespace emscope
