#include "emscope/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <string>

namespace emscope {

namespace {

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

double bin_frequency(Index k, double sample_rate_hz, Index fft_size) {
  return static_cast<double>(k) * sample_rate_hz / static_cast<double>(fft_size);
}

// [first, last) bin indices whose centre lies in [low, high).
std::pair<Index, Index> bins_in_band(const Band& band, double sample_rate_hz, Index fft_size, Index num_bins) {
  Index first = 0;
  while (first < num_bins && bin_frequency(first, sample_rate_hz, fft_size) < band.low_hz) ++first;
  Index last = first;
  while (last < num_bins && bin_frequency(last, sample_rate_hz, fft_size) < band.high_hz) ++last;
  return {first, last};
}

double aggregate_range(const VectorXd& magnitudes, Index first, Index last, Aggregation aggregation) {
  const auto segment = magnitudes.segment(first, last - first);
  return aggregation == Aggregation::mean ? segment.mean() : segment.maxCoeff();
}

[[noreturn]] void empty_band(const Band& band) {
  throw Error(Errc::empty_band, "band [" + format_double(band.low_hz) + ", " + format_double(band.high_hz) +
                                    ") contains no frequency bin");
}

}  // namespace

Index fft_size_for(Index window_length, const SpectralConfig& cfg) {
  const Index padded = next_pow2(std::max<Index>(1, window_length)) * std::max(1, cfg.padding_factor);
  return std::max(padded, next_pow2(std::max<Index>(1, cfg.min_fft_size)));
}

Spectrum fft_magnitude(const Eigen::Ref<const VectorXd>& samples, double sample_rate_hz, const SpectralConfig& cfg) {
  const Index n = samples.size();
  if (n == 0) throw Error(Errc::invalid_argument, "cannot transform an empty window");
  const Index m = fft_size_for(n, cfg);

  std::vector<double> padded(static_cast<std::size_t>(m), 0.0);
  std::copy(samples.begin(), samples.end(), padded.begin());
  thread_local Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> bins;
  fft.fwd(bins, padded);

  const Index half = m / 2 + 1;
  Spectrum spectrum;
  spectrum.window_length = n;
  spectrum.fft_size = m;
  spectrum.bin_freqs_hz.resize(half);
  spectrum.magnitudes.resize(half);
  for (Index k = 0; k < half; ++k) {
    spectrum.bin_freqs_hz(k) = bin_frequency(k, sample_rate_hz, m);
    spectrum.magnitudes(k) = std::abs(bins[static_cast<std::size_t>(k)]) / static_cast<double>(n);
  }
  return spectrum;
}

Spectrum fft_magnitude(const InstructionWindow& window, double sample_rate_hz, const SpectralConfig& cfg) {
  return fft_magnitude(window.samples, sample_rate_hz, cfg);
}

double spectral_energy(const Spectrum& spectrum) {
  const Index m = spectrum.fft_size;
  const Index half = spectrum.magnitudes.size();
  const double n = static_cast<double>(spectrum.window_length);
  double sum = 0.0;
  for (Index k = 0; k < half; ++k) {
    // Interior bins stand for a conjugate pair; DC and (even m) Nyquist do not.
    const bool paired = k != 0 && !(m % 2 == 0 && k == m / 2);
    sum += (paired ? 2.0 : 1.0) * spectrum.magnitudes(k) * spectrum.magnitudes(k);
  }
  return sum * n * n / static_cast<double>(m);
}

void BandSpec::validate(double nyquist_hz) const {
  if (bands.empty()) throw Error(Errc::invalid_argument, "band spec is empty");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const Band& b = bands[i];
    if (!(b.low_hz < b.high_hz) || b.low_hz < 0.0 || b.high_hz > nyquist_hz) {
      throw Error(Errc::invalid_argument, "band " + std::to_string(i) + " must satisfy 0 <= low < high <= nyquist");
    }
    if (i > 0 && b.low_hz < bands[i - 1].high_hz) {
      throw Error(Errc::invalid_argument, "bands must be sorted and disjoint");
    }
  }
}

BandSpec default_bands() {
  BandSpec spec;
  for (int i = 0; i < 6; ++i) {
    spec.bands.push_back({31.3e6 + 5e4 * i, 31.3e6 + 5e4 * (i + 1)});
  }
  return spec;
}

BandSpec survey_bands(double clock_hz) {
  BandSpec spec = default_bands();
  for (int m = 1; m <= 8; ++m) {
    const double centre = 0.5 * clock_hz * m;
    spec.bands.push_back({centre - 5e4, centre + 5e4});
  }
  std::sort(spec.bands.begin(), spec.bands.end(), [](const Band& a, const Band& b) { return a.low_hz < b.low_hz; });
  return spec;
}

BandSpec read_band_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open band spec " + path.string());
  BandSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto comma = text.find(',');
    Band band;
    if (comma == std::string_view::npos || !parse_double(text.substr(0, comma), band.low_hz) ||
        !parse_double(text.substr(comma + 1), band.high_hz)) {
      throw Error(Errc::malformed_header, path.string() + ": expected low_hz,high_hz at line " + std::to_string(line_no));
    }
    spec.bands.push_back(band);
  }
  return spec;
}

void write_band_spec(const std::filesystem::path& path, const BandSpec& spec) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  for (const Band& b : spec.bands) out << format_double(b.low_hz) << ',' << format_double(b.high_hz) << '\n';
}

FeatureVector band_features(const Spectrum& spectrum, const BandSpec& bands, Aggregation aggregation) {
  FeatureVector fv;
  fv.values.resize(static_cast<Index>(bands.size()));
  const double* freqs = spectrum.bin_freqs_hz.data();
  const double* freqs_end = freqs + spectrum.bin_freqs_hz.size();
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const Band& band = bands.bands[i];
    const auto first = static_cast<Index>(std::lower_bound(freqs, freqs_end, band.low_hz) - freqs);
    const auto last = static_cast<Index>(std::lower_bound(freqs, freqs_end, band.high_hz) - freqs);
    if (first == last) empty_band(band);
    fv.values(static_cast<Index>(i)) = aggregate_range(spectrum.magnitudes, first, last, aggregation);
  }
  return fv;
}

BandProjector::BandProjector(Index window_length, double sample_rate_hz, const BandSpec& bands,
                             const SpectralConfig& cfg)
    : window_length_(window_length), aggregation_(cfg.aggregation) {
  if (window_length <= 0) throw Error(Errc::invalid_argument, "projector needs a positive window length");
  const Index m = fft_size_for(window_length, cfg);
  const Index half = m / 2 + 1;
  std::vector<Index> rows;
  for (const Band& band : bands.bands) {
    const auto [first, last] = bins_in_band(band, sample_rate_hz, m, half);
    if (first == last) empty_band(band);
    band_ranges_.emplace_back(static_cast<Index>(rows.size()), static_cast<Index>(rows.size()) + (last - first));
    for (Index k = first; k < last; ++k) rows.push_back(k);
  }
  basis_.resize(static_cast<Index>(rows.size()), window_length);
  for (Index r = 0; r < basis_.rows(); ++r) {
    const auto k = static_cast<std::uint64_t>(rows[static_cast<std::size_t>(r)]);
    for (Index t = 0; t < window_length; ++t) {
      const auto phase_index = (k * static_cast<std::uint64_t>(t)) % static_cast<std::uint64_t>(m);
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(phase_index) / static_cast<double>(m);
      basis_(r, t) = std::polar(1.0, angle);
    }
  }
}

Vector<std::complex<double>> BandProjector::project(const Eigen::Ref<const VectorXd>& samples) const {
  if (samples.size() != window_length_) throw Error(Errc::dimension_mismatch, "window length differs from projector");
  return basis_ * samples.cast<std::complex<double>>();
}

VectorXd BandProjector::aggregate(const Vector<std::complex<double>>& bins) const {
  const VectorXd magnitudes = bins.cwiseAbs() / static_cast<double>(window_length_);
  VectorXd out(static_cast<Index>(band_ranges_.size()));
  for (std::size_t i = 0; i < band_ranges_.size(); ++i) {
    out(static_cast<Index>(i)) = aggregate_range(magnitudes, band_ranges_[i].first, band_ranges_[i].second, aggregation_);
  }
  return out;
}

VectorXd BandProjector::features(const Eigen::Ref<const VectorXd>& samples) const { return aggregate(project(samples)); }

double fisher_ratio(std::span<const double> values, std::span<const int> labels, int num_classes) {
  std::vector<double> sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> count(static_cast<std::size_t>(num_classes), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[static_cast<std::size_t>(labels[i])] += values[i];
    count[static_cast<std::size_t>(labels[i])] += 1.0;
    total += values[i];
  }
  const double n = static_cast<double>(values.size());
  const double grand = total / n;
  double between = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (count[ci] == 0.0) continue;
    const double d = sum[ci] / count[ci] - grand;
    between += count[ci] * d * d;
  }
  double within = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto ci = static_cast<std::size_t>(labels[i]);
    const double d = values[i] - sum[ci] / count[ci];
    within += d * d;
  }
  between /= n;
  within /= n;
  if (within == 0.0) return between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return between / within;
}

std::vector<BandScore> score_bands(std::span<const InstructionWindow> windows, double sample_rate_hz,
                                   std::pair<double, double> search_range, double band_width_hz,
                                   const SpectralConfig& cfg) {
  const auto [low, high] = search_range;
  if (!(low > 0.0 && low < high && high <= 0.5 * sample_rate_hz) || !(band_width_hz > 0.0)) {
    throw Error(Errc::invalid_argument, "search range must lie inside (0, nyquist] with positive band width");
  }
  std::map<std::string, int> class_of;
  for (const auto& w : windows) {
    if (!w.label) throw Error(Errc::invalid_argument, "band selection needs labeled windows");
    class_of.emplace(*w.label, 0);
  }
  int next = 0;
  for (auto& [name, id] : class_of) id = next++;
  std::vector<int> labels;
  std::vector<int> per_class(class_of.size(), 0);
  for (const auto& w : windows) {
    labels.push_back(class_of.at(*w.label));
    ++per_class[static_cast<std::size_t>(labels.back())];
  }
  if (class_of.size() < 2 || *std::min_element(per_class.begin(), per_class.end()) < 2) {
    throw Error(Errc::class_too_small, "band selection needs at least 2 classes with 2 windows each");
  }

  const auto count = static_cast<Index>(std::floor((high - low) / band_width_hz + 1e-9));
  BandSpec candidates;
  for (Index i = 0; i < count; ++i) {
    candidates.bands.push_back({low + band_width_hz * static_cast<double>(i), low + band_width_hz * static_cast<double>(i + 1)});
  }
  if (candidates.bands.empty()) throw Error(Errc::too_few_candidates, "band width exceeds search range");

  MatrixXd values(count, static_cast<Index>(windows.size()));
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const Spectrum s = fft_magnitude(windows[w], sample_rate_hz, cfg);
    values.col(static_cast<Index>(w)) = band_features(s, candidates, cfg.aggregation).values;
  }
  std::vector<BandScore> scores;
  for (Index i = 0; i < count; ++i) {
    const RowVectorXd row = values.row(i);
    scores.push_back({candidates.bands[static_cast<std::size_t>(i)],
                      fisher_ratio(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), labels,
                                   static_cast<int>(class_of.size()))});
  }
  return scores;
}

BandSpec select_bands(std::span<const InstructionWindow> windows, double sample_rate_hz,
                      std::pair<double, double> search_range, double band_width_hz, int k, const SpectralConfig& cfg) {
  if (k <= 0) throw Error(Errc::invalid_argument, "k must be positive");
  std::vector<BandScore> scores = score_bands(windows, sample_rate_hz, search_range, band_width_hz, cfg);
  if (static_cast<int>(scores.size()) < k) {
    throw Error(Errc::too_few_candidates,
                std::to_string(scores.size()) + " candidate bands, " + std::to_string(k) + " requested");
  }
  std::stable_sort(scores.begin(), scores.end(), [](const BandScore& a, const BandScore& b) { return a.score > b.score; });
  BandSpec out;
  for (int i = 0; i < k; ++i) out.bands.push_back(scores[static_cast<std::size_t>(i)].band);
  std::sort(out.bands.begin(), out.bands.end(), [](const Band& a, const Band& b) { return a.low_hz < b.low_hz; });
  return out;
}

}  // namespace emscope
