#include "emscope/common.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace emscope {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::usage: return "usage";
    case Errc::io: return "io";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::malformed_header: return "malformed header";
    case Errc::malformed_sample: return "malformed sample";
    case Errc::non_finite_sample: return "non-finite sample";
    case Errc::truncated_payload: return "truncated payload";
    case Errc::unknown_version: return "unknown format version";
    case Errc::trailing_data: return "trailing data";
    case Errc::above_nyquist: return "tone above Nyquist";
    case Errc::empty_program: return "empty program";
    case Errc::unreachable_target: return "target unreachable";
    case Errc::zero_dynamic_range: return "zero dynamic range";
    case Errc::insufficient_triggers: return "insufficient triggers";
    case Errc::span_too_short: return "span too short";
    case Errc::pulse_fills_span: return "trigger pulse fills span";
    case Errc::empty_band: return "empty band";
    case Errc::too_few_candidates: return "too few candidate bands";
    case Errc::zero_length_interval: return "zero-length interval";
    case Errc::no_features: return "no features";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::class_too_small: return "class too small";
    case Errc::empty_class: return "empty class";
    case Errc::window_too_short: return "window too short";
    case Errc::missing_cell: return "missing cell";
    case Errc::segmentation_failure: return "segmentation failure";
  }
  return "unknown";
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(mix64(master) ^ (index * 0xd6e8feb86659fd93ULL + 0x632be59bd9b4e019ULL));
}

unsigned thread_count() {
  unsigned requested = 0;
  if (const char* env = std::getenv("EMSCOPE_THREADS")) {
    requested = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  }
  if (requested == 0) {
    requested = std::max(1u, std::thread::hardware_concurrency());
  }
  return requested;
}

namespace {
thread_local bool in_parallel_region = false;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = in_parallel_region ? 1 : std::min<std::size_t>(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  // Items keep running after a failure is seen only up to the failing index,
  // so the rethrown error is always the one from the lowest failing item.
  std::atomic<std::size_t> next{0};
  std::size_t failed_index = n;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    in_parallel_region = true;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      {
        std::lock_guard lock(failure_mutex);
        if (i > failed_index) break;
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
    in_parallel_region = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, end);
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

}  // namespace emscope
