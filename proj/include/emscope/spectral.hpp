#pragma once

#include "emscope/common.hpp"
#include "emscope/trace.hpp"

#include <complex>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace emscope {

enum class Aggregation { mean, max };

struct SpectralConfig {
  /// FFT length is next_pow2(n) * padding_factor, raised to min_fft_size.
  int padding_factor = 8;
  Index min_fft_size = 16384;
  Aggregation aggregation = Aggregation::mean;
};

Index fft_size_for(Index window_length, const SpectralConfig& cfg);

/// One-sided magnitude spectrum. Magnitudes are |X_k| / window_length, so a
/// unit sinusoid centred on a bin reads 0.5 there.
struct Spectrum {
  VectorXd bin_freqs_hz;
  VectorXd magnitudes;
  Index window_length = 0;
  Index fft_size = 0;
};

Spectrum fft_magnitude(const Eigen::Ref<const VectorXd>& samples, double sample_rate_hz,
                       const SpectralConfig& cfg = {});
Spectrum fft_magnitude(const InstructionWindow& window, double sample_rate_hz, const SpectralConfig& cfg = {});

/// Time-domain energy implied by a one-sided spectrum (Parseval).
double spectral_energy(const Spectrum& spectrum);

struct Band {
  double low_hz = 0.0;
  double high_hz = 0.0;
  friend bool operator==(const Band&, const Band&) = default;
};

struct BandSpec {
  std::vector<Band> bands;

  std::size_t size() const { return bands.size(); }
  /// low < high <= nyquist, sorted, pairwise disjoint.
  void validate(double nyquist_hz) const;
  friend bool operator==(const BandSpec&, const BandSpec&) = default;
};

/// Six 50 kHz bands tiling 31.3-31.6 MHz.
BandSpec default_bands();

/// default_bands() plus one 100 kHz band on every multiple of half the clock up
/// to 64 MHz, i.e. the neighbourhoods a harmonic survey inspects.
BandSpec survey_bands(double clock_hz = kDefaultClockHz);

/// `low_hz,high_hz` per line.
BandSpec read_band_spec(const std::filesystem::path& path);
void write_band_spec(const std::filesystem::path& path, const BandSpec& spec);

struct FeatureVector {
  VectorXd values;
  std::optional<int> label;
};

/// Per band, the mean (or max) magnitude over bins whose centre lies in
/// [low, high). A band covering no bin throws Errc::empty_band.
FeatureVector band_features(const Spectrum& spectrum, const BandSpec& bands,
                            Aggregation aggregation = Aggregation::mean);

/// Evaluates only the DFT bins that fall inside `bands` for windows of one
/// fixed length. Produces the same values as fft_magnitude + band_features,
/// at a fraction of the cost when thousands of windows are scored.
class BandProjector {
 public:
  BandProjector(Index window_length, double sample_rate_hz, const BandSpec& bands, const SpectralConfig& cfg = {});

  Index window_length() const { return window_length_; }
  VectorXd features(const Eigen::Ref<const VectorXd>& samples) const;

  /// Complex bin values (unnormalized) for every in-band bin, in band order.
  Vector<std::complex<double>> project(const Eigen::Ref<const VectorXd>& samples) const;

  /// Aggregates per-band magnitudes from projected bin values.
  VectorXd aggregate(const Vector<std::complex<double>>& bins) const;

 private:
  Index window_length_;
  Aggregation aggregation_;
  Matrix<std::complex<double>> basis_;
  std::vector<std::pair<Index, Index>> band_ranges_;  // [first, last) rows of basis_
};

/// Candidate bands of width band_width_hz tile [range.first, range.second);
/// each is scored by the Fisher ratio of its band feature and the top k (ties
/// to lower frequency) are returned sorted by frequency.
struct BandScore {
  Band band;
  double score = 0.0;
};

std::vector<BandScore> score_bands(std::span<const InstructionWindow> windows, double sample_rate_hz,
                                   std::pair<double, double> search_range, double band_width_hz,
                                   const SpectralConfig& cfg = {});

BandSpec select_bands(std::span<const InstructionWindow> windows, double sample_rate_hz,
                      std::pair<double, double> search_range, double band_width_hz, int k,
                      const SpectralConfig& cfg = {});

/// Between-class over pooled within-class variance of one scalar feature.
double fisher_ratio(std::span<const double> values, std::span<const int> labels, int num_classes);

struct Interval {
  Index start = 0;
  Index length = 0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// (mean, population std, least-squares slope) for each interval, in order.
template <typename Derived>
VectorXd interval_features(const Eigen::MatrixBase<Derived>& samples, std::span<const Interval> intervals);

}  // namespace emscope

#include "emscope/impl/interval_features.hpp"
