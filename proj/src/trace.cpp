#include "emscope/trace.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace emscope {

namespace {

constexpr std::array<char, 4> kTraceMagic{'E', 'M', 'T', 'R'};
constexpr std::uint8_t kTraceVersion = 1;
constexpr std::string_view kRateKey = "sample_rate_hz";
constexpr std::string_view kClockKey = "clock_hz";

[[noreturn]] void fail(Errc code, const std::string& detail) {
  throw Error(code, std::string(errc_name(code)) + ": " + detail);
}

std::string at_offset(std::uint64_t offset) { return "at byte offset " + std::to_string(offset); }
std::string at_line(std::size_t line) { return "at line " + std::to_string(line); }

void check_meta_entry(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n\r") != std::string::npos ||
      value.find_first_of("\n\r") != std::string::npos) {
    throw Error(Errc::invalid_argument, "meta entry cannot be encoded: '" + key + "'");
  }
}

// Shared by both readers: the two sampling keys become fields, the rest stays
// in meta in file order. `where` describes the header position for errors.
void apply_header_entry(Trace& trace, std::string_view key, std::string_view value, bool& has_rate,
                        bool& has_clock, const std::string& where) {
  if (key.empty()) fail(Errc::malformed_header, "empty key " + where);
  if (key == kRateKey || key == kClockKey) {
    double parsed = 0.0;
    if (!parse_double(value, parsed) || !std::isfinite(parsed) || parsed <= 0.0) {
      fail(Errc::malformed_header, std::string(key) + " must be a positive number " + where);
    }
    if (key == kRateKey) {
      trace.sample_rate_hz = parsed;
      has_rate = true;
    } else {
      trace.clock_hz = parsed;
      has_clock = true;
    }
    return;
  }
  trace.meta.emplace_back(std::string(key), std::string(value));
}

std::string header_block(const Trace& trace) {
  std::string block;
  block += std::string(kRateKey) + "=" + format_double(trace.sample_rate_hz) + "\n";
  block += std::string(kClockKey) + "=" + format_double(trace.clock_hz) + "\n";
  for (const auto& [key, value] : trace.meta) {
    check_meta_entry(key, value);
    block += key + "=" + value + "\n";
  }
  return block;
}

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}

  std::uint64_t offset() const { return offset_; }

  // Reads exactly n bytes or throws truncated_payload naming the offset.
  void read(char* dst, std::size_t n, std::string_view what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      fail(Errc::truncated_payload, std::string(what) + " " + at_offset(offset_ + got));
    }
    offset_ += n;
  }

  template <typename T>
  T read_le(std::string_view what) {
    std::array<unsigned char, sizeof(T)> bytes;
    read(reinterpret_cast<char*>(bytes.data()), bytes.size(), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

Trace read_binary(std::istream& in) {
  ByteReader reader(in);
  std::array<char, 4> magic{};
  reader.read(magic.data(), magic.size(), "missing magic");
  if (magic != kTraceMagic) fail(Errc::malformed_header, "bad magic " + at_offset(0));
  const auto version = reader.read_le<std::uint8_t>("missing version");
  if (version != kTraceVersion) {
    fail(Errc::unknown_version, "version " + std::to_string(version) + " " + at_offset(4));
  }
  const auto meta_length = reader.read_le<std::uint32_t>("missing meta length");
  const std::uint64_t meta_start = reader.offset();
  std::string block(meta_length, '\0');
  reader.read(block.data(), block.size(), "meta block");

  Trace trace;
  bool has_rate = false;
  bool has_clock = false;
  std::size_t pos = 0;
  while (pos < block.size()) {
    const auto eol = block.find('\n', pos);
    if (eol == std::string::npos) {
      fail(Errc::malformed_header, "unterminated meta line " + at_offset(meta_start + pos));
    }
    const std::string_view line(block.data() + pos, eol - pos);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(Errc::malformed_header, "meta line without '=' " + at_offset(meta_start + pos));
    }
    apply_header_entry(trace, line.substr(0, eq), line.substr(eq + 1), has_rate, has_clock,
                       at_offset(meta_start + pos));
    pos = eol + 1;
  }
  if (!has_rate || !has_clock) {
    fail(Errc::malformed_header, "meta block lacks sample_rate_hz or clock_hz " + at_offset(meta_start));
  }

  const auto count = reader.read_le<std::uint64_t>("missing sample count");
  if (count == 0) fail(Errc::truncated_payload, "empty trace " + at_offset(reader.offset() - 8));

  // Grow incrementally so a corrupted count cannot force a huge allocation.
  std::vector<double> values;
  constexpr std::uint64_t kChunk = 1 << 16;
  values.reserve(static_cast<std::size_t>(std::min(count, kChunk)));
  std::array<unsigned char, 4> bytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t where = reader.offset();
    reader.read(reinterpret_cast<char*>(bytes.data()), bytes.size(), "sample payload");
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[3]) << 24);
    const float value = std::bit_cast<float>(bits);
    if (!std::isfinite(value)) fail(Errc::non_finite_sample, "sample " + std::to_string(i) + " " + at_offset(where));
    values.push_back(static_cast<double>(value));
  }
  if (!reader.at_end()) fail(Errc::trailing_data, "after samples " + at_offset(reader.offset()));

  trace.samples = Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
  return trace;
}

void write_binary(std::ostream& out, const Trace& trace) {
  const std::string block = header_block(trace);
  out.write(kTraceMagic.data(), kTraceMagic.size());
  put_le<std::uint8_t>(out, kTraceVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(block.size()));
  out.write(block.data(), static_cast<std::streamsize>(block.size()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(trace.samples.size()));
  for (const double sample : trace.samples) {
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(sample)));
  }
}

Trace read_csv(std::istream& in) {
  Trace trace;
  bool has_rate = false;
  bool has_clock = false;
  bool in_data = false;
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  std::size_t pending_blank = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) {
      ++pending_blank;
      continue;
    }
    if (text.front() == '#') {
      if (in_data) fail(Errc::malformed_header, "header after samples " + at_line(line_no));
      const std::string_view body = trim(text.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) fail(Errc::malformed_header, "expected '# key=value' " + at_line(line_no));
      apply_header_entry(trace, trim(body.substr(0, eq)), body.substr(eq + 1), has_rate, has_clock,
                         at_line(line_no));
      continue;
    }
    if (in_data && pending_blank > 0) {
      fail(Errc::malformed_sample, "blank line inside samples " + at_line(line_no - 1));
    }
    pending_blank = 0;
    if (!has_rate) fail(Errc::malformed_header, "missing sample_rate_hz before " + at_line(line_no));
    in_data = true;
    double value = 0.0;
    if (!parse_double(text, value)) fail(Errc::malformed_sample, "'" + std::string(text) + "' " + at_line(line_no));
    if (!std::isfinite(value)) fail(Errc::non_finite_sample, at_line(line_no));
    values.push_back(value);
  }
  if (!has_rate) fail(Errc::malformed_header, "missing sample_rate_hz");
  if (values.empty()) fail(Errc::truncated_payload, "no samples after " + at_line(line_no));
  (void)has_clock;  // optional in CSV; defaults to the nominal device clock
  trace.samples = Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
  return trace;
}

void write_csv(std::ostream& out, const Trace& trace) {
  std::istringstream block(header_block(trace));
  std::string line;
  while (std::getline(block, line)) out << "# " << line << '\n';
  for (const double sample : trace.samples) out << format_double(sample) << '\n';
}

}  // namespace

Index samples_per_cycle(double sample_rate_hz, double clock_hz) {
  return static_cast<Index>(std::llround(sample_rate_hz / clock_hz));
}

Index Trace::samples_per_cycle() const { return emscope::samples_per_cycle(sample_rate_hz, clock_hz); }

std::optional<std::string> Trace::meta_value(std::string_view key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void Trace::set_meta(std::string key, std::string value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta.emplace_back(std::move(key), std::move(value));
}

void Trace::validate() const {
  if (samples.size() == 0) throw Error(Errc::invalid_argument, "trace has no samples");
  if (!samples.allFinite()) throw Error(Errc::invalid_argument, "trace has non-finite samples");
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw Error(Errc::invalid_argument, "sample_rate_hz must be positive");
  }
  if (!(clock_hz > 0.0) || !std::isfinite(clock_hz)) throw Error(Errc::invalid_argument, "clock_hz must be positive");
}

bool operator==(const Trace& a, const Trace& b) {
  return a.sample_rate_hz == b.sample_rate_hz && a.clock_hz == b.clock_hz && a.meta == b.meta &&
         a.samples.size() == b.samples.size() && a.samples == b.samples;
}

TraceFormat parse_trace_format(std::string_view name) {
  if (name == "csv") return TraceFormat::csv;
  if (name == "binary" || name == "bin") return TraceFormat::binary;
  throw Error(Errc::usage, "unknown trace format '" + std::string(name) + "' (expected csv|binary)");
}

std::string_view extension_for(TraceFormat format) { return format == TraceFormat::csv ? ".csv" : ".emtr"; }

TraceFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? TraceFormat::csv : TraceFormat::binary;
}

Trace read_trace(std::istream& in, TraceFormat format) {
  Trace trace = format == TraceFormat::csv ? read_csv(in) : read_binary(in);
  trace.validate();
  return trace;
}

void write_trace(std::ostream& out, const Trace& trace, TraceFormat format) {
  trace.validate();
  if (format == TraceFormat::csv) {
    write_csv(out, trace);
  } else {
    write_binary(out, trace);
  }
  if (!out) throw Error(Errc::io, "failed writing trace");
}

Trace read_trace_file(const std::filesystem::path& path, TraceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  try {
    return read_trace(in, format);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_trace_file(const std::filesystem::path& path, const Trace& trace, TraceFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create " + path.string());
  write_trace(out, trace, format);
}

Trace window_to_trace(const InstructionWindow& window, double sample_rate_hz, double clock_hz) {
  Trace trace;
  trace.samples = window.samples;
  trace.sample_rate_hz = sample_rate_hz;
  trace.clock_hz = clock_hz;
  trace.meta.emplace_back("start_index", std::to_string(window.start_index));
  trace.meta.emplace_back("cycles", std::to_string(window.cycles));
  if (window.label) trace.meta.emplace_back("label", *window.label);
  return trace;
}

InstructionWindow trace_to_window(const Trace& trace) {
  InstructionWindow window;
  window.samples = trace.samples;
  if (auto v = trace.meta_value("start_index")) window.start_index = std::stoll(*v);
  if (auto v = trace.meta_value("cycles")) {
    window.cycles = std::stoi(*v);
  } else {
    window.cycles = static_cast<int>(trace.samples.size() / std::max<Index>(1, trace.samples_per_cycle()));
  }
  window.label = trace.meta_value("label");
  return window;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto comma = text.find(',');
    if (comma == std::string_view::npos) {
      throw Error(Errc::malformed_header, path.string() + ": expected label,trace_path " + at_line(line_no));
    }
    std::filesystem::path file{std::string(trim(text.substr(comma + 1)))};
    if (file.is_relative()) file = path.parent_path() / file;
    entries.push_back({std::string(trim(text.substr(0, comma))), file});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot create manifest " + path.string());
  for (const auto& entry : entries) {
    auto file = entry.path;
    const auto relative = file.lexically_relative(path.parent_path());
    if (!relative.empty() && *relative.begin() != "..") file = relative;
    out << entry.label << ',' << file.generic_string() << '\n';
  }
}

std::vector<Index> LabeledDataset::class_counts() const {
  std::vector<Index> counts(class_names.size(), 0);
  for (const int label : labels) ++counts[static_cast<std::size_t>(label)];
  return counts;
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& rows) const {
  LabeledDataset out;
  out.class_names = class_names;
  out.features.resize(static_cast<Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = features.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (features.rows() != static_cast<Index>(labels.size())) {
    throw Error(Errc::invalid_argument, "feature rows and label count differ");
  }
  for (const int label : labels) {
    if (label < 0 || label >= num_classes()) throw Error(Errc::invalid_argument, "label out of range");
  }
  if (!features.allFinite()) throw Error(Errc::invalid_argument, "non-finite feature value");
}

std::pair<std::vector<Index>, std::vector<Index>> stratified_split_indices(const std::vector<int>& labels,
                                                                           int num_classes, double fraction,
                                                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(Errc::invalid_argument, "split fraction must lie in (0,1)");
  if (labels.empty()) throw Error(Errc::invalid_argument, "cannot split an empty dataset");
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));

  std::vector<Index> first;
  std::vector<Index> second;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw Error(Errc::class_too_small, "class " + std::to_string(c) + " has fewer than 2 examples to split");
    }
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<Index>(members.size());
    const Index take = std::clamp<Index>(static_cast<Index>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
    first.insert(first.end(), members.begin(), members.begin() + take);
    second.insert(second.end(), members.begin() + take, members.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double fraction,
                                                         std::uint64_t seed) {
  ds.validate();
  auto [a, b] = stratified_split_indices(ds.labels, ds.num_classes(), fraction, seed);
  return {ds.subset(a), ds.subset(b)};
}

}  // namespace emscope
