#include "emscope/forest.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace emscope {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'M', 'R', 'F'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint32_t kMaxCount = 1u << 28;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out_.write(bytes.data(), bytes.size());
  }

  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    std::array<char, sizeof(T)> bytes;
    if (!in_.read(bytes.data(), bytes.size())) fail(Errc::truncated_payload, std::string("truncated payload reading ") + what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  std::uint32_t count(const char* what) {
    const auto n = get<std::uint32_t>(what);
    if (n > kMaxCount) fail(Errc::malformed_header, std::string("implausible ") + what);
    return n;
  }

  std::string get_string(const char* what) {
    const auto n = count(what);
    std::string s(n, '\0');
    if (n && !in_.read(s.data(), n)) fail(Errc::truncated_payload, std::string("truncated payload reading ") + what);
    offset_ += n;
    return s;
  }

  [[noreturn]] void fail(Errc code, const std::string& what) const {
    throw Error(code, "model byte " + std::to_string(offset_) + ": " + what);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

void write_node(Writer& w, const DecisionTree& tree, int id) {
  const TreeNode& node = tree.nodes[id];
  if (node.is_leaf()) {
    w.put<std::uint8_t>(0);
    for (int c : node.class_counts) w.put<std::uint32_t>(static_cast<std::uint32_t>(c));
    return;
  }
  w.put<std::uint8_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(node.feature));
  w.put<double>(node.threshold);
  write_node(w, tree, node.left);
  write_node(w, tree, node.right);
}

int read_node(Reader& r, DecisionTree& tree, std::uint32_t remaining_budget) {
  if (tree.nodes.size() >= remaining_budget) r.fail(Errc::malformed_header, "node count exceeded");
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  const auto tag = r.get<std::uint8_t>("node tag");
  if (tag == 0) {
    std::vector<int> counts(static_cast<std::size_t>(tree.num_classes));
    for (int& c : counts) c = static_cast<int>(r.get<std::uint32_t>("leaf count"));
    tree.nodes[id].class_counts = std::move(counts);
    return id;
  }
  if (tag != 1) r.fail(Errc::malformed_header, "unknown node tag " + std::to_string(tag));
  const auto feature = r.get<std::uint32_t>("split feature");
  if (feature >= static_cast<std::uint32_t>(tree.num_features)) r.fail(Errc::malformed_header, "split feature out of range");
  const double threshold = r.get<double>("split threshold");
  tree.nodes[id].feature = static_cast<int>(feature);
  tree.nodes[id].threshold = threshold;
  const int left = read_node(r, tree, remaining_budget);
  const int right = read_node(r, tree, remaining_budget);
  tree.nodes[id].left = left;
  tree.nodes[id].right = right;
  return id;
}

}  // namespace

void save_model(std::ostream& out, const ForestModel& model) {
  Writer w(out);
  out.write(kMagic.data(), kMagic.size());
  w.put<std::uint8_t>(kVersion);
  w.put<std::uint8_t>(model.feature_kind == FeatureKind::interval ? 1 : 0);
  const ForestParams& p = model.params;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.n_estimators));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(p.max_features.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.max_features.count));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.min_samples_leaf));
  w.put<std::int32_t>(p.max_depth ? *p.max_depth : -1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.min_interval));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.n_intervals));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.input_dims));
  w.put<std::uint64_t>(model.master_seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.class_names.size()));
  for (const auto& name : model.class_names) w.put_string(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.trees.size()));
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    const DecisionTree& tree = model.trees[t];
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.num_features));
    if (model.feature_kind == FeatureKind::interval) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(model.intervals[t].size()));
      for (const Interval& iv : model.intervals[t]) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(iv.start));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(iv.length));
      }
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
    write_node(w, tree, 0);
  }
  if (!out) throw Error(Errc::io, "failed writing model");
}

ForestModel load_model(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  for (char& c : magic) c = static_cast<char>(r.get<std::uint8_t>("magic"));
  if (magic != kMagic) r.fail(Errc::malformed_header, "bad magic, not an EMRF model");
  const auto version = r.get<std::uint8_t>("version");
  if (version != kVersion) r.fail(Errc::unknown_version, "unknown version " + std::to_string(version));

  ForestModel model;
  const auto kind = r.get<std::uint8_t>("feature kind");
  if (kind > 1) r.fail(Errc::malformed_header, "unknown feature kind");
  model.feature_kind = kind ? FeatureKind::interval : FeatureKind::band;
  ForestParams& p = model.params;
  p.n_estimators = static_cast<int>(r.count("n_estimators"));
  const auto mf_kind = r.get<std::uint8_t>("max_features kind");
  if (mf_kind > 2) r.fail(Errc::malformed_header, "unknown max_features kind");
  p.max_features.kind = static_cast<MaxFeaturesKind>(mf_kind);
  p.max_features.count = static_cast<int>(r.count("max_features count"));
  p.min_samples_leaf = static_cast<int>(r.count("min_samples_leaf"));
  const auto depth = r.get<std::int32_t>("max_depth");
  if (depth >= 0) p.max_depth = depth;
  p.min_interval = static_cast<int>(r.count("min_interval"));
  p.n_intervals = static_cast<int>(r.count("n_intervals"));
  model.input_dims = static_cast<int>(r.count("input dims"));
  model.master_seed = r.get<std::uint64_t>("seed");
  const auto classes = r.count("class count");
  if (classes == 0) r.fail(Errc::malformed_header, "model has no classes");
  for (std::uint32_t c = 0; c < classes; ++c) model.class_names.push_back(r.get_string("class name"));

  const auto trees = r.count("tree count");
  model.trees.resize(trees);
  if (model.feature_kind == FeatureKind::interval) model.intervals.resize(trees);
  for (std::uint32_t t = 0; t < trees; ++t) {
    DecisionTree& tree = model.trees[t];
    tree.num_classes = static_cast<int>(classes);
    tree.num_features = static_cast<int>(r.count("tree feature count"));
    if (model.feature_kind == FeatureKind::interval) {
      const auto n = r.count("interval count");
      if (tree.num_features != static_cast<int>(3 * n)) r.fail(Errc::malformed_header, "interval count disagrees with tree");
      for (std::uint32_t j = 0; j < n; ++j) {
        Interval iv;
        iv.start = r.get<std::uint32_t>("interval start");
        iv.length = r.get<std::uint32_t>("interval length");
        if (iv.length == 0 || iv.start + iv.length > model.input_dims) r.fail(Errc::malformed_header, "interval out of range");
        model.intervals[t].push_back(iv);
      }
    } else if (tree.num_features != model.input_dims) {
      r.fail(Errc::malformed_header, "tree feature count disagrees with model");
    }
    const auto nodes = r.count("node count");
    if (nodes == 0) r.fail(Errc::malformed_header, "empty tree");
    tree.nodes.reserve(nodes);
    read_node(r, tree, nodes);
    if (tree.nodes.size() != nodes) r.fail(Errc::malformed_header, "node count disagrees with tree");
  }
  if (!r.at_end()) r.fail(Errc::trailing_data, "trailing data after last tree");
  model.params.validate();
  return model;
}

void save_model_file(const std::filesystem::path& path, const ForestModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write model " + path.string());
  save_model(out, model);
}

ForestModel load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open model " + path.string());
  try {
    return load_model(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace emscope
