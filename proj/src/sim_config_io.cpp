#include "emscope/simulator.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace emscope {

namespace {

[[noreturn]] void config_error(std::size_t line_no, const std::string& what) {
  throw Error(Errc::malformed_header, "sim config line " + std::to_string(line_no) + ": " + what);
}

double number(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  if (!parse_double(text, v)) config_error(line_no, "expected a number, got '" + std::string(text) + "'");
  return v;
}

std::vector<double> number_list(std::string_view text, std::size_t line_no) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto piece = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    out.push_back(number(piece, line_no));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

SimConfig parse_sim_config(std::istream& in) {
  SimConfig cfg = default_sim_config();
  std::vector<InstructionProfile> profiles;
  InstructionProfile* current = nullptr;
  std::optional<int> rows;
  std::optional<int> cols;
  std::optional<std::vector<double>> gains;
  std::map<std::string, double> bump;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = trim(line);
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = trim(text.substr(0, hash));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') config_error(line_no, "unterminated section");
      const std::string_view inner = trim(text.substr(1, text.size() - 2));
      constexpr std::string_view kPrefix = "instruction ";
      if (inner.substr(0, kPrefix.size()) != kPrefix) config_error(line_no, "unknown section");
      profiles.push_back({std::string(trim(inner.substr(kPrefix.size()))), 1, {}});
      current = &profiles.back();
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) config_error(line_no, "expected key = value");
    const std::string key(trim(text.substr(0, eq)));
    const std::string_view value = trim(text.substr(eq + 1));

    if (current) {
      if (key == "cycles") {
        current->cycles = static_cast<int>(number(value, line_no));
      } else if (key == "tone") {
        const auto parts = number_list(value, line_no);
        if (parts.size() != 3) config_error(line_no, "tone needs frequency_hz, amplitude_volts, phase_jitter_rad");
        current->tones.push_back({parts[0], parts[1], parts[2]});
      } else {
        config_error(line_no, "unknown instruction key '" + key + "'");
      }
      continue;
    }
    if (key == "clock_hz") {
      cfg.clock_hz = number(value, line_no);
    } else if (key == "sample_rate_hz") {
      cfg.sample_rate_hz = number(value, line_no);
    } else if (key == "noise_sigma_volts") {
      cfg.noise_sigma_volts = number(value, line_no);
    } else if (key == "trigger_amplitude_volts") {
      cfg.trigger_amplitude_volts = number(value, line_no);
    } else if (key == "trigger_cycles") {
      cfg.trigger_cycles = static_cast<int>(number(value, line_no));
    } else if (key == "seed") {
      cfg.seed = std::stoull(std::string(value));
    } else if (key == "grid_rows") {
      rows = static_cast<int>(number(value, line_no));
    } else if (key == "grid_cols") {
      cols = static_cast<int>(number(value, line_no));
    } else if (key == "grid_gains") {
      gains = number_list(value, line_no);
    } else if (key == "grid_hot_row" || key == "grid_hot_col" || key == "grid_bump_width" || key == "grid_floor_gain") {
      bump[key] = number(value, line_no);
    } else {
      config_error(line_no, "unknown key '" + key + "'");
    }
  }

  if (!profiles.empty()) cfg.profiles = std::move(profiles);
  if (rows || cols || gains || !bump.empty()) {
    const int r = rows.value_or(cfg.grid.rows());
    const int c = cols.value_or(cfg.grid.cols());
    if (gains) {
      if (static_cast<int>(gains->size()) != r * c) config_error(line_no, "grid_gains needs grid_rows * grid_cols values");
      cfg.grid.gain = Eigen::Map<const MatrixXd>(gains->data(), r, c);
    } else {
      const auto get = [&](const std::string& k, double fallback) { return bump.count(k) ? bump[k] : fallback; };
      cfg.grid = bump_grid(r, c, static_cast<int>(get("grid_hot_row", r / 2)), static_cast<int>(get("grid_hot_col", c / 2)),
                           get("grid_bump_width", 1.0), get("grid_floor_gain", 0.02));
    }
  }
  cfg.validate();
  return cfg;
}

SimConfig read_sim_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open sim config " + path.string());
  try {
    return parse_sim_config(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_sim_config(std::ostream& out, const SimConfig& cfg) {
  out << "clock_hz = " << format_double(cfg.clock_hz) << '\n'
      << "sample_rate_hz = " << format_double(cfg.sample_rate_hz) << '\n'
      << "noise_sigma_volts = " << format_double(cfg.noise_sigma_volts) << '\n'
      << "trigger_amplitude_volts = " << format_double(cfg.trigger_amplitude_volts) << '\n'
      << "trigger_cycles = " << cfg.trigger_cycles << '\n'
      << "seed = " << cfg.seed << '\n'
      << "grid_rows = " << cfg.grid.rows() << '\n'
      << "grid_cols = " << cfg.grid.cols() << '\n'
      << "grid_gains = ";
  for (Index i = 0; i < cfg.grid.gain.size(); ++i) {
    out << (i ? ", " : "") << format_double(cfg.grid.gain(i / cfg.grid.cols(), i % cfg.grid.cols()));
  }
  out << '\n';
  for (const auto& p : cfg.profiles) {
    out << "\n[instruction " << p.mnemonic << "]\ncycles = " << p.cycles << '\n';
    for (const Tone& t : p.tones) {
      out << "tone = " << format_double(t.frequency_hz) << ", " << format_double(t.amplitude_volts) << ", "
          << format_double(t.phase_jitter_rad) << '\n';
    }
  }
}

}  // namespace emscope
