#pragma once

#include "emscope/trace.hpp"

#include <span>
#include <vector>

namespace emscope {

enum class Edge { rising, falling };

/// Threshold is relative to the trace's peak |sample|, so detection survives
/// any change of probe gain.
struct TriggerSpec {
  double threshold_fraction = 0.5;
  Index min_gap_samples = 16;
  Edge edge = Edge::rising;

  void validate() const;
};

/// Spec with min_gap_samples set to one clock cycle of `trace`.
TriggerSpec default_trigger_spec(const Trace& trace);

double trigger_threshold(const Trace& trace, const TriggerSpec& spec);

/// Indices where |sample| crosses threshold_fraction * max|sample| on the
/// requested edge. Detections closer than min_gap_samples to the previous
/// kept one are dropped. Throws Errc::zero_dynamic_range on an all-zero trace.
std::vector<Index> detect_triggers(const Trace& trace, const TriggerSpec& spec);

/// One window per adjacent trigger pair, each cycles * samples_per_cycle long
/// and starting at the first sample after the pulse drops below threshold.
/// `cycles` holds one entry per slot, or a single entry used for all slots.
std::vector<InstructionWindow> extract_windows(const Trace& trace, std::span<const Index> triggers,
                                               std::span<const int> cycles, const TriggerSpec& spec);

}  // namespace emscope
