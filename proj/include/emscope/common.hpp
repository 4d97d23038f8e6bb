#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emscope {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Row-major so that one example (or one window) is a contiguous row.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorXd = Vector<double>;
using RowVectorXd = RowVector<double>;
using MatrixXd = Matrix<double>;

enum class Errc {
  usage,
  io,
  invalid_argument,
  malformed_header,
  malformed_sample,
  non_finite_sample,
  truncated_payload,
  unknown_version,
  trailing_data,
  above_nyquist,
  empty_program,
  unreachable_target,
  zero_dynamic_range,
  insufficient_triggers,
  span_too_short,
  pulse_fills_span,
  empty_band,
  too_few_candidates,
  zero_length_interval,
  no_features,
  dimension_mismatch,
  class_too_small,
  empty_class,
  window_too_short,
  missing_cell,
  segmentation_failure,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure in the library surfaces as an Error carrying a code, so
/// callers (and the CLI's exit-code mapping) can distinguish causes.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Independent stream seed for work item `index` under `master`. Used
/// everywhere per-item randomness must not depend on execution order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept;

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Worker count from EMSCOPE_THREADS (unset or 0 means hardware concurrency).
unsigned thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() workers. Results must
/// be written to per-index slots; the call order is unspecified. Nested calls
/// run serially on the calling worker. If items throw, the exception of the
/// lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

/// Strict full-token parse; returns false on any trailing garbage.
bool parse_double(std::string_view text, double& out);

std::string_view trim(std::string_view text);

}  // namespace emscope
