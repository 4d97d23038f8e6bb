#include "emscope/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace emscope {

namespace {

constexpr double kJitter = 0.5;

InstructionProfile make_profile(std::string mnemonic, int cycles, std::initializer_list<std::pair<double, double>> tones) {
  InstructionProfile p{std::move(mnemonic), cycles, {}};
  for (const auto& [mhz, volts] : tones) p.tones.push_back({mhz * 1e6, volts, kJitter});
  return p;
}

}  // namespace

double InstructionProfile::peak_amplitude() const {
  double sum = 0.0;
  for (const Tone& t : tones) sum += t.amplitude_volts;
  return sum;
}

std::pair<int, int> CouplingGrid::hot_cell() const {
  Index r = 0;
  Index c = 0;
  gain.maxCoeff(&r, &c);
  return {static_cast<int>(r), static_cast<int>(c)};
}

CouplingGrid bump_grid(int rows, int cols, int hot_row, int hot_col, double width_cells, double floor_gain) {
  if (rows <= 0 || cols <= 0 || hot_row < 0 || hot_row >= rows || hot_col < 0 || hot_col >= cols) {
    throw Error(Errc::invalid_argument, "hot cell outside grid");
  }
  if (!(width_cells > 0.0) || !(floor_gain > 0.0 && floor_gain < 1.0)) {
    throw Error(Errc::invalid_argument, "bump width must be positive and floor gain in (0,1)");
  }
  CouplingGrid grid;
  grid.gain.resize(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double d2 = static_cast<double>((r - hot_row) * (r - hot_row) + (c - hot_col) * (c - hot_col));
      grid.gain(r, c) = floor_gain + (1.0 - floor_gain) * std::exp(-d2 / (2.0 * width_cells * width_cells));
    }
  }
  return grid;
}

const InstructionProfile& SimConfig::profile(std::string_view mnemonic) const {
  for (const auto& p : profiles) {
    if (p.mnemonic == mnemonic) return p;
  }
  throw Error(Errc::invalid_argument, "unknown instruction '" + std::string(mnemonic) + "'");
}

bool SimConfig::has_profile(std::string_view mnemonic) const {
  return std::any_of(profiles.begin(), profiles.end(), [&](const auto& p) { return p.mnemonic == mnemonic; });
}

std::vector<std::string> SimConfig::mnemonics() const {
  std::vector<std::string> out;
  for (const auto& p : profiles) out.push_back(p.mnemonic);
  return out;
}

double SimConfig::max_peak_amplitude() const {
  double best = 0.0;
  for (const auto& p : profiles) best = std::max(best, p.peak_amplitude());
  return best;
}

void SimConfig::validate() const {
  const auto bad = [](const std::string& what) { throw Error(Errc::invalid_argument, "sim config: " + what); };
  if (profiles.empty()) bad("no instruction profiles");
  if (!(clock_hz > 0.0) || !(sample_rate_hz > 0.0)) bad("clock_hz and sample_rate_hz must be positive");
  if (samples_per_cycle() < 1) bad("sample rate below clock rate");
  if (!(noise_sigma_volts >= 0.0)) bad("noise_sigma_volts must be >= 0");
  if (trigger_cycles < 1) bad("trigger_cycles must be positive");
  for (const auto& p : profiles) {
    if (p.cycles < 1 || p.cycles > 3) bad(p.mnemonic + ": cycles must be 1, 2 or 3");
    for (const Tone& t : p.tones) {
      if (t.amplitude_volts < 0.0 || t.phase_jitter_rad < 0.0) bad(p.mnemonic + ": negative amplitude or jitter");
      if (!(t.frequency_hz > 0.0) || t.frequency_hz >= 0.5 * sample_rate_hz) {
        throw Error(Errc::above_nyquist, p.mnemonic + ": tone " + format_double(t.frequency_hz) + " Hz");
      }
    }
  }
  if (grid.gain.size() == 0) bad("empty grid");
  if ((grid.gain.array() <= 0.0).any() || (grid.gain.array() > 1.0).any()) bad("grid gains must lie in (0,1]");
  const double top = grid.gain.maxCoeff();
  if ((grid.gain.array() == top).count() != 1) bad("grid must have exactly one maximal cell");
  if (trigger_amplitude_volts < 5.0 * (max_peak_amplitude() + 4.0 * noise_sigma_volts)) {
    bad("trigger amplitude must be >= 5 x (max signature amplitude + 4 sigma)");
  }
}

std::vector<InstructionProfile> default_profiles() {
  // Amplitudes place every class at a distinct band magnitude; ADD/MOV and
  // LD/ST sit close together as single-cycle ALU and two-cycle memory pairs.
  return {
      make_profile("NOP", 1, {{31.45, 0.020}, {31.20, 0.010}}),
      make_profile("MUL", 2, {{31.40, 0.582}, {31.55, 0.391}, {31.70, 0.191}}),
      make_profile("ADD", 1, {{31.35, 0.374}, {31.50, 0.247}}),
      make_profile("SUB", 1, {{31.35, 0.245}, {31.60, 0.245}}),
      make_profile("AND", 1, {{31.30, 0.546}, {31.50, 0.303}}),
      make_profile("OR", 1, {{31.25, 0.714}, {31.45, 0.392}, {31.65, 0.131}}),
      make_profile("EOR", 1, {{31.40, 0.935}, {31.55, 0.468}}),
      make_profile("LDI", 1, {{31.50, 0.119}, {31.35, 0.060}}),
      make_profile("MOV", 1, {{31.45, 0.404}, {31.60, 0.287}}),
      make_profile("LD", 2, {{31.30, 0.332}, {31.45, 0.204}, {31.80, 0.137}}),
      make_profile("ST", 2, {{31.35, 0.389}, {31.50, 0.205}, {31.75, 0.133}}),
      make_profile("RJMP", 2, {{31.40, 0.136}, {31.60, 0.105}}),
  };
}

SimConfig default_sim_config() {
  SimConfig cfg;
  cfg.profiles = default_profiles();
  cfg.noise_sigma_volts = 0.06;
  cfg.grid = bump_grid(8, 10, 3, 6, 0.6, 0.02);
  return cfg;
}

VectorXd synth_instruction(const InstructionProfile& profile, const SimConfig& cfg, double gain, Rng& rng) {
  const double nyquist = 0.5 * cfg.sample_rate_hz;
  for (const Tone& t : profile.tones) {
    if (t.frequency_hz >= nyquist) {
      throw Error(Errc::above_nyquist, profile.mnemonic + ": tone " + format_double(t.frequency_hz) + " Hz");
    }
  }
  const Index n = profile.cycles * cfg.samples_per_cycle();
  VectorXd out = VectorXd::Zero(n);
  for (const Tone& t : profile.tones) {
    double phase = 0.0;
    if (t.phase_jitter_rad > 0.0) {
      phase = std::uniform_real_distribution<double>(-t.phase_jitter_rad, t.phase_jitter_rad)(rng);
    }
    const double omega = 2.0 * std::numbers::pi * t.frequency_hz / cfg.sample_rate_hz;
    for (Index i = 0; i < n; ++i) out(i) += t.amplitude_volts * std::cos(omega * static_cast<double>(i) + phase);
  }
  out *= gain;
  if (cfg.noise_sigma_volts > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma_volts);
    for (Index i = 0; i < n; ++i) out(i) += noise(rng);
  }
  return out;
}

int slot_cycles(const SimConfig& cfg, std::string_view mnemonic, bool pad_with_nop) {
  const int own = cfg.profile(mnemonic).cycles;
  return pad_with_nop ? own + 2 * cfg.profile("NOP").cycles : own;
}

VectorXd synth_slot(const SimConfig& cfg, std::string_view mnemonic, bool pad_with_nop, double gain, Rng& rng) {
  if (!pad_with_nop) return synth_instruction(cfg.profile(mnemonic), cfg, gain, rng);
  const InstructionProfile& nop = cfg.profile("NOP");
  const VectorXd before = synth_instruction(nop, cfg, gain, rng);
  const VectorXd body = synth_instruction(cfg.profile(mnemonic), cfg, gain, rng);
  const VectorXd after = synth_instruction(nop, cfg, gain, rng);
  VectorXd out(before.size() + body.size() + after.size());
  out << before, body, after;
  return out;
}

ProgramTrace synth_program_trace(const ProgramSpec& program, const SimConfig& cfg, std::pair<int, int> grid_cell,
                                 std::uint64_t seed) {
  if (program.instructions.empty()) throw Error(Errc::empty_program, "program has no instructions");
  cfg.validate();
  const auto [row, col] = grid_cell;
  if (row < 0 || row >= cfg.grid.rows() || col < 0 || col >= cfg.grid.cols()) {
    throw Error(Errc::invalid_argument, "grid cell outside grid");
  }
  for (const auto& m : program.instructions) (void)cfg.profile(m);
  const double gain = cfg.grid.gain(row, col);
  const Index spc = cfg.samples_per_cycle();
  const Index trigger_len = cfg.trigger_cycles * spc;

  auto trigger = [&](std::size_t index) {
    Rng rng = make_rng(derive_seed(seed, 2 * index));
    VectorXd pulse = VectorXd::Constant(trigger_len, cfg.trigger_amplitude_volts);
    if (cfg.noise_sigma_volts > 0.0) {
      std::normal_distribution<double> noise(0.0, cfg.noise_sigma_volts);
      for (Index i = 0; i < trigger_len; ++i) pulse(i) += noise(rng);
    }
    return pulse;
  };

  std::vector<VectorXd> pieces;
  ProgramTrace out;
  Index cursor = 0;
  for (std::size_t i = 0; i < program.instructions.size(); ++i) {
    pieces.push_back(trigger(i));
    cursor += trigger_len;
    Rng rng = make_rng(derive_seed(seed, 2 * i + 1));
    pieces.push_back(synth_slot(cfg, program.instructions[i], program.pad_with_nop, gain, rng));
    const Index len = pieces.back().size();
    out.boundaries.push_back({cursor, cursor + len, program.instructions[i],
                              slot_cycles(cfg, program.instructions[i], program.pad_with_nop)});
    cursor += len;
  }
  pieces.push_back(trigger(program.instructions.size()));
  cursor += trigger_len;

  Trace& trace = out.trace;
  trace.samples.resize(cursor);
  Index at = 0;
  for (const auto& piece : pieces) {
    trace.samples.segment(at, piece.size()) = piece;
    at += piece.size();
  }
  trace.sample_rate_hz = cfg.sample_rate_hz;
  trace.clock_hz = cfg.clock_hz;
  std::string joined;
  for (const auto& m : program.instructions) joined += (joined.empty() ? "" : " ") + m;
  trace.meta = {{"program", joined},
                {"pad_with_nop", program.pad_with_nop ? "1" : "0"},
                {"grid_row", std::to_string(row)},
                {"grid_col", std::to_string(col)},
                {"coupling_gain", format_double(gain)},
                {"seed", std::to_string(seed)}};
  return out;
}

void write_boundaries(const std::filesystem::path& path, const std::vector<SlotBoundary>& boundaries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  for (const auto& b : boundaries) out << b.start << ',' << b.end << ',' << b.label << '\n';
}

std::vector<SlotBoundary> read_boundaries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::vector<SlotBoundary> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    std::string start;
    std::string end;
    std::string label;
    if (!std::getline(fields, start, ',') || !std::getline(fields, end, ',') || !std::getline(fields, label)) {
      throw Error(Errc::malformed_header, path.string() + ": expected start,end,label at line " + std::to_string(line_no));
    }
    SlotBoundary b;
    b.start = std::stoll(start);
    b.end = std::stoll(end);
    b.label = std::string(trim(label));
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

// Shared random draws for the nearest-mean oracle. Every window is stored as
// its projected in-band DFT bins for the noiseless signal and for unit noise,
// so features at any sigma are |signal + sigma * noise| aggregated per band.
class OracleSampler {
 public:
  OracleSampler(const SimConfig& cfg, const CalibrationOptions& options, std::uint64_t seed)
      : num_classes_(static_cast<int>(cfg.profiles.size())) {
    if (options.trials < 1000) throw Error(Errc::invalid_argument, "calibration needs at least 1000 trials per class");
    options.bands.validate(0.5 * cfg.sample_rate_hz);
    SimConfig quiet = cfg;
    quiet.noise_sigma_volts = 0.0;
    for (int c = 0; c < num_classes_; ++c) {
      const std::string& name = cfg.profiles[static_cast<std::size_t>(c)].mnemonic;
      const Index length = slot_cycles(cfg, name, options.pad_with_nop) * cfg.samples_per_cycle();
      projectors_.emplace_back(length, cfg.sample_rate_hz, options.bands, options.spectral);
      const BandProjector& projector = projectors_.back();
      for (int set = 0; set < 2; ++set) {
        for (int j = 0; j < options.trials; ++j) {
          Rng rng = make_rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(c)), 2ULL * j + set));
          const VectorXd signal = synth_slot(quiet, name, options.pad_with_nop, 1.0, rng);
          VectorXd unit_noise(length);
          std::normal_distribution<double> normal(0.0, 1.0);
          for (Index i = 0; i < length; ++i) unit_noise(i) = normal(rng);
          samples_[set].push_back({c, projector.project(signal), projector.project(unit_noise)});
        }
      }
    }
  }

  double accuracy(double sigma) const {
    const Index dims = static_cast<Index>(projectors_.front().aggregate(samples_[0].front().signal).size());
    MatrixXd means = MatrixXd::Zero(num_classes_, dims);
    std::vector<double> counts(static_cast<std::size_t>(num_classes_), 0.0);
    for (const auto& s : samples_[0]) {
      means.row(s.label) += features(s, sigma).transpose();
      counts[static_cast<std::size_t>(s.label)] += 1.0;
    }
    for (int c = 0; c < num_classes_; ++c) means.row(c) /= counts[static_cast<std::size_t>(c)];
    std::size_t correct = 0;
    for (const auto& s : samples_[1]) {
      const VectorXd f = features(s, sigma);
      Index best = 0;
      (means.rowwise() - f.transpose()).rowwise().squaredNorm().minCoeff(&best);
      if (best == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples_[1].size());
  }

  int num_classes() const { return num_classes_; }

 private:
  struct Sample {
    int label;
    Vector<std::complex<double>> signal;
    Vector<std::complex<double>> noise;
  };

  VectorXd features(const Sample& s, double sigma) const {
    return projectors_[static_cast<std::size_t>(s.label)].aggregate(s.signal + sigma * s.noise);
  }

  int num_classes_;
  std::vector<BandProjector> projectors_;
  std::vector<Sample> samples_[2];
};

}  // namespace

double nearest_mean_accuracy(const SimConfig& cfg, double noise_sigma, const CalibrationOptions& options,
                             std::uint64_t seed) {
  return OracleSampler(cfg, options, seed).accuracy(noise_sigma);
}

CalibrationResult calibrate_noise(const SimConfig& cfg, const CalibrationOptions& options, std::uint64_t seed) {
  const double target = options.target_accuracy;
  const double chance = 1.0 / static_cast<double>(cfg.profiles.size());
  if (!(target > chance) || target > 1.0) {
    throw Error(Errc::unreachable_target, "target " + format_double(target) + " must lie in (1/classes, 1]");
  }
  const OracleSampler sampler(cfg, options, seed);
  const double clean = sampler.accuracy(0.0);
  if (clean < target) {
    if (clean >= target - options.tolerance) return {0.0, clean};
    throw Error(Errc::unreachable_target,
                "noiseless oracle accuracy " + format_double(clean) + " is below target " + format_double(target));
  }
  double lo = 0.0;
  double hi = 10.0 * cfg.max_peak_amplitude();
  if (sampler.accuracy(hi) >= target) {
    throw Error(Errc::unreachable_target, "accuracy stays above target for every sigma up to " + format_double(hi));
  }
  double lo_accuracy = clean;
  for (int iter = 0; iter < 48 && hi - lo > 1e-9 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double acc = sampler.accuracy(mid);
    if (acc >= target) {
      lo = mid;
      lo_accuracy = acc;
    } else {
      hi = mid;
    }
  }
  return {lo, lo_accuracy};
}

}  // namespace emscope
