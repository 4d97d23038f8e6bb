#include "emscope/simulator.hpp"
#include "emscope/trace.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstring>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

using namespace emscope;

namespace {

Trace read_csv(const std::string& text) {
  std::istringstream in(text);
  return read_trace(in, TraceFormat::csv);
}

std::string write(const Trace& t, TraceFormat f) {
  std::ostringstream out;
  write_trace(out, t, f);
  return out.str();
}

Trace read(const std::string& bytes, TraceFormat f) {
  std::istringstream in(bytes);
  return read_trace(in, f);
}

Errc error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::usage;
}

Trace simulated(Index min_samples, std::uint64_t seed) {
  SimConfig cfg = default_sim_config();
  ProgramSpec prog;
  while (static_cast<Index>(prog.instructions.size()) * 80 < min_samples) prog.instructions.push_back("MUL");
  return synth_program_trace(prog, cfg, cfg.grid.hot_cell(), seed).trace;
}

}  // namespace

TEST_CASE("minimal csv trace") {
  const Trace t = read_csv("# sample_rate_hz=250000000\n0\n1\n0\n-1\n");
  CHECK(t.samples.size() == 4);
  CHECK(t.sample_rate_hz == 2.5e8);
  CHECK(t.clock_hz == 16e6);
  CHECK(t.samples(3) == -1.0);
  CHECK(t.samples_per_cycle() == 16);
}

TEST_CASE("csv writer emits one data line per sample") {
  Trace t;
  t.samples = VectorXd::Zero(1);
  const std::string text = write(t, TraceFormat::csv);
  std::istringstream lines(text);
  std::string line;
  int data = 0;
  while (std::getline(lines, line)) {
    if (!line.empty() && line[0] != '#') {
      CHECK(line == "0");
      ++data;
    }
  }
  CHECK(data == 1);
}

TEST_CASE("meta keeps insertion order") {
  Trace t;
  t.samples = VectorXd::Ones(2);
  t.set_meta("b", "2");
  t.set_meta("a", "1");
  for (auto f : {TraceFormat::csv, TraceFormat::binary}) {
    const std::string bytes = write(t, f);
    CHECK(bytes.find("b=2") < bytes.find("a=1"));
    const Trace back = read(bytes, f);
    REQUIRE(back.meta.size() == 2);
    CHECK(back.meta[0].first == "b");
    CHECK(back.meta[1].first == "a");
  }
}

TEST_CASE("binary round trip is byte identical for simulator output") {
  const Trace t = simulated(10000, 7);
  const std::string first = write(t, TraceFormat::binary);
  const Trace back = read(first, TraceFormat::binary);
  CHECK(write(back, TraceFormat::binary) == first);
  CHECK(back.samples.size() == t.samples.size());
  CHECK(back.meta == t.meta);
  for (Index i = 0; i < t.samples.size(); ++i) {
    REQUIRE(back.samples(i) == static_cast<double>(static_cast<float>(t.samples(i))));
  }
}

TEST_CASE("binary round trip of a float-exact trace is equal") {
  Rng rng = make_rng(7);
  std::normal_distribution<double> dist;
  Trace t;
  t.samples.resize(100000);
  for (Index i = 0; i < t.samples.size(); ++i) t.samples(i) = static_cast<float>(dist(rng));
  t.set_meta("seed", "7");
  CHECK(read(write(t, TraceFormat::binary), TraceFormat::binary) == t);
}

TEST_CASE("csv round trip within 1e-9 relative") {
  const Trace t = simulated(2000, 3);
  const Trace back = read(write(t, TraceFormat::csv), TraceFormat::csv);
  REQUIRE(back.samples.size() == t.samples.size());
  for (Index i = 0; i < t.samples.size(); ++i) {
    CHECK(std::abs(back.samples(i) - t.samples(i)) <= 1e-9 * std::max(1.0, std::abs(t.samples(i))));
  }
  CHECK(back.meta == t.meta);
  CHECK(back.sample_rate_hz == t.sample_rate_hz);
}

TEST_CASE("binary reader rejects malformed input with distinct errors") {
  Trace t;
  t.samples = VectorXd::LinSpaced(8, -1.0, 1.0);
  const std::string good = write(t, TraceFormat::binary);

  SUBCASE("empty trace") {
    Trace empty_header = t;
    std::string bytes = write(empty_header, TraceFormat::binary);
    const std::size_t count_at = bytes.size() - 8 * 4 - 8;
    for (int i = 0; i < 8; ++i) bytes[count_at + i] = 0;
    bytes.resize(count_at + 8);
    CHECK(error_of([&] { read(bytes, TraceFormat::binary); }) == Errc::truncated_payload);
  }
  SUBCASE("bad magic") {
    std::string bytes = good;
    bytes[0] = 'X';
    CHECK(error_of([&] { read(bytes, TraceFormat::binary); }) == Errc::malformed_header);
  }
  SUBCASE("unknown version") {
    std::string bytes = good;
    bytes[4] = 0x02;
    CHECK(error_of([&] { read(bytes, TraceFormat::binary); }) == Errc::unknown_version);
  }
  SUBCASE("truncated samples") {
    CHECK(error_of([&] { read(good.substr(0, good.size() - 3), TraceFormat::binary); }) == Errc::truncated_payload);
  }
  SUBCASE("non-finite sample") {
    std::string bytes = good;
    const float inf = std::numeric_limits<float>::infinity();
    std::memcpy(bytes.data() + bytes.size() - 4, &inf, 4);
    CHECK(error_of([&] { read(bytes, TraceFormat::binary); }) == Errc::non_finite_sample);
  }
  SUBCASE("trailing data") {
    CHECK(error_of([&] { read(good + "x", TraceFormat::binary); }) == Errc::trailing_data);
  }
  SUBCASE("messages name the byte offset") {
    try {
      read(good.substr(0, good.size() - 3), TraceFormat::binary);
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
  }
}

TEST_CASE("csv reader rejects malformed input") {
  CHECK(error_of([] { read_csv("0\n1\n"); }) == Errc::malformed_header);
  CHECK(error_of([] { read_csv("# sample_rate_hz=250000000\n0\nabc\n"); }) == Errc::malformed_sample);
  CHECK(error_of([] { read_csv("# sample_rate_hz=250000000\n0\nnan\n"); }) == Errc::non_finite_sample);
  CHECK(error_of([] { read_csv("# sample_rate_hz=250000000\n"); }) == Errc::truncated_payload);
  try {
    read_csv("# sample_rate_hz=250000000\n0\nabc\n");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("corrupted binary input never yields an invalid trace") {
  Trace t;
  t.samples = VectorXd::LinSpaced(64, -1.0, 1.0);
  t.set_meta("note", "fuzz");
  const std::string good = write(t, TraceFormat::binary);
  Rng rng = make_rng(11);
  std::uniform_int_distribution<std::size_t> pos(0, good.size() - 1);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string bytes = good;
    const int flips = 1 + trial % 4;
    for (int f = 0; f < flips; ++f) bytes[pos(rng)] = static_cast<char>(byte(rng));
    if (trial % 7 == 0) bytes.resize(pos(rng));
    try {
      const Trace back = read(bytes, TraceFormat::binary);
      CHECK_NOTHROW(back.validate());
    } catch (const Error&) {
    }
  }
}

TEST_CASE("window and trace conversion keeps placement") {
  InstructionWindow w;
  w.samples = VectorXd::LinSpaced(32, 0.0, 1.0);
  w.start_index = 123;
  w.label = "MUL";
  w.cycles = 2;
  const InstructionWindow back = trace_to_window(window_to_trace(w, 2.5e8, 16e6));
  CHECK(back.samples == w.samples);
  CHECK(back.start_index == 123);
  CHECK(back.label == std::optional<std::string>("MUL"));
  CHECK(back.cycles == 2);
}

TEST_CASE("manifest paths resolve against the manifest directory") {
  const auto dir = testutil::scratch("manifest");
  std::filesystem::create_directories(dir / "sub");
  write_manifest(dir / "m.csv", {{"MUL", dir / "sub" / "a.emtr"}, {"NOP", dir / "b.csv"}});
  CHECK(testutil::slurp(dir / "m.csv") == "MUL,sub/a.emtr\nNOP,b.csv\n");
  const auto entries = read_manifest(dir / "m.csv");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].label == "MUL");
  CHECK(entries[0].path == dir / "sub" / "a.emtr");
}

TEST_CASE("split_dataset") {
  LabeledDataset ds;
  ds.class_names = {"A", "B", "C"};
  const int n = 500;
  ds.features.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    ds.features(i, 0) = i;
    ds.labels.push_back(i % 5 == 0 ? 0 : (i % 5 < 3 ? 1 : 2));
  }

  SUBCASE("500 examples at 0.75 give 375 and 125") {
    const auto [a, b] = split_dataset(ds, 0.75, 1);
    CHECK(a.size() == 375);
    CHECK(b.size() == 125);
  }
  SUBCASE("parts are disjoint, exhaustive and stratified") {
    for (double fraction : {0.1, 0.33, 0.5, 0.75, 0.9}) {
      const auto [first, second] = stratified_split_indices(ds.labels, 3, fraction, 9);
      std::set<Index> all(first.begin(), first.end());
      for (Index i : second) CHECK(all.insert(i).second);
      CHECK(all.size() == static_cast<std::size_t>(n));
      const auto counts = ds.class_counts();
      for (int c = 0; c < 3; ++c) {
        const auto in_first = std::count_if(first.begin(), first.end(), [&](Index i) { return ds.labels[i] == c; });
        CHECK(std::abs(static_cast<double>(in_first) - fraction * static_cast<double>(counts[c])) <= 1.0);
      }
    }
  }
  SUBCASE("same seed, same partition") {
    CHECK(stratified_split_indices(ds.labels, 3, 0.75, 4) == stratified_split_indices(ds.labels, 3, 0.75, 4));
    CHECK(stratified_split_indices(ds.labels, 3, 0.75, 4) != stratified_split_indices(ds.labels, 3, 0.75, 5));
  }
  SUBCASE("two examples of one class split one each") {
    const auto [a, b] = stratified_split_indices({0, 0}, 1, 0.5, 1);
    CHECK(a.size() == 1);
    CHECK(b.size() == 1);
  }
  SUBCASE("singleton class cannot be split") {
    CHECK(error_of([] { stratified_split_indices({0, 0, 1}, 2, 0.5, 1); }) == Errc::class_too_small);
  }
}
