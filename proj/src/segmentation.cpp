#include "emscope/segmentation.hpp"

#include <cmath>
#include <string>

namespace emscope {

void TriggerSpec::validate() const {
  if (!(threshold_fraction > 0.0 && threshold_fraction <= 1.0)) {
    throw Error(Errc::invalid_argument, "threshold_fraction must lie in (0, 1]");
  }
  if (min_gap_samples < 1) throw Error(Errc::invalid_argument, "min_gap_samples must be >= 1");
}

TriggerSpec default_trigger_spec(const Trace& trace) {
  TriggerSpec spec;
  spec.min_gap_samples = std::max<Index>(1, trace.samples_per_cycle());
  return spec;
}

double trigger_threshold(const Trace& trace, const TriggerSpec& spec) {
  const double peak = trace.samples.cwiseAbs().maxCoeff();
  if (peak == 0.0) throw Error(Errc::zero_dynamic_range, "zero dynamic range: trace is all zeros");
  return spec.threshold_fraction * peak;
}

std::vector<Index> detect_triggers(const Trace& trace, const TriggerSpec& spec) {
  spec.validate();
  trace.validate();
  const double threshold = trigger_threshold(trace, spec);
  const auto& s = trace.samples;
  std::vector<Index> found;
  for (Index i = 0; i < s.size(); ++i) {
    const bool above = std::abs(s(i)) >= threshold;
    const bool was_above = i > 0 && std::abs(s(i - 1)) >= threshold;
    const bool hit = spec.edge == Edge::rising ? (above && !was_above) : (!above && was_above);
    if (!hit) continue;
    if (!found.empty() && i - found.back() < spec.min_gap_samples) continue;
    found.push_back(i);
  }
  return found;
}

std::vector<InstructionWindow> extract_windows(const Trace& trace, std::span<const Index> triggers,
                                               std::span<const int> cycles, const TriggerSpec& spec) {
  if (triggers.size() < 2) {
    throw Error(Errc::insufficient_triggers, "insufficient triggers: need at least 2, got " + std::to_string(triggers.size()));
  }
  const std::size_t slots = triggers.size() - 1;
  if (cycles.size() != 1 && cycles.size() != slots) {
    throw Error(Errc::invalid_argument, "cycles must have one entry or one per slot");
  }
  const double threshold = trigger_threshold(trace, spec);
  const Index spc = trace.samples_per_cycle();
  const auto& s = trace.samples;

  std::vector<InstructionWindow> windows;
  windows.reserve(slots);
  for (std::size_t i = 0; i < slots; ++i) {
    const Index begin = triggers[i];
    const Index next = triggers[i + 1];
    if (begin < 0 || next > s.size() || next <= begin) throw Error(Errc::invalid_argument, "triggers must be sorted and in range");
    const int slot_cycles = cycles.size() == 1 ? cycles[0] : cycles[i];
    if (slot_cycles < 1) throw Error(Errc::invalid_argument, "cycles must be positive");

    Index start = begin;
    while (start < next && std::abs(s(start)) >= threshold) ++start;
    if (start == next) {
      throw Error(Errc::pulse_fills_span, "trigger pulse at " + std::to_string(begin) + " occupies the whole span");
    }
    const Index length = slot_cycles * spc;
    if (start + length > next) {
      throw Error(Errc::span_too_short, "span after trigger " + std::to_string(begin) + " holds " +
                                            std::to_string(next - start) + " samples, need " + std::to_string(length));
    }
    InstructionWindow w;
    w.samples = s.segment(start, length);
    w.start_index = start;
    w.cycles = slot_cycles;
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace emscope
