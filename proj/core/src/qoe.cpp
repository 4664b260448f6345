#include "dai/qoe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>

#include "json.hpp"
#include "rng.hpp"

namespace dai::qoe {

const std::array<const char*, kFeatureDim> kFeatureNames = {
    "video_kbps", "fec_kbps", "loss", "iat_mean_ms", "iat_std_ms"};

const char* to_string(QoeGear gear) {
  switch (gear) {
    case QoeGear::High:
      return "High";
    case QoeGear::Medium:
      return "Medium";
    case QoeGear::Low:
      return "Low";
    case QoeGear::VeryLow:
      return "VeryLow";
  }
  return "?";
}

QoeGear gear_from_string(const std::string& s) {
  if (s == "High") return QoeGear::High;
  if (s == "Medium") return QoeGear::Medium;
  if (s == "Low") return QoeGear::Low;
  if (s == "VeryLow") return QoeGear::VeryLow;
  throw DataError("unknown gear: " + s);
}

const char* to_string(QoeTarget target) {
  switch (target) {
    case QoeTarget::Bitrate:
      return "bitrate";
    case QoeTarget::Framerate:
      return "framerate";
    case QoeTarget::Resolution:
      return "resolution";
  }
  return "?";
}

QoeTarget target_from_string(const std::string& s) {
  if (s == "bitrate") return QoeTarget::Bitrate;
  if (s == "framerate") return QoeTarget::Framerate;
  if (s == "resolution") return QoeTarget::Resolution;
  throw UsageError("unknown target: " + s +
                   " (want bitrate|framerate|resolution)");
}

QoeGear label_for(const QoeLabel& label, QoeTarget target) {
  switch (target) {
    case QoeTarget::Bitrate:
      return label.bitrate;
    case QoeTarget::Framerate:
      return label.framerate;
    case QoeTarget::Resolution:
      return label.resolution;
  }
  return label.bitrate;
}

namespace {

QoeGear grade(double value, double high, double medium, double low) {
  if (value >= high) return QoeGear::High;
  if (value >= medium) return QoeGear::Medium;
  if (value >= low) return QoeGear::Low;
  return QoeGear::VeryLow;
}

}  // namespace

QoeLabel discretize(double bitrate_kbps, double framerate_fps,
                    double resolution_width) {
  if (bitrate_kbps < 0 || framerate_fps < 0 || resolution_width < 0) {
    throw DomainError("discretize: negative input");
  }
  QoeLabel label;
  label.bitrate = grade(bitrate_kbps, 700, 500, 300);
  label.framerate = grade(framerate_fps, 30, 20, 10);
  label.resolution = grade(resolution_width, 1280, 960, 640);
  return label;
}

FeatureVector features_of(const qos::QosWindow& w) {
  return {w.video_rate_kbps, w.fec_rate_kbps, w.loss_rate, w.iat_mean_ms,
          w.iat_std_ms};
}

std::vector<Sample> build_dataset(std::span<const qos::QosWindow> windows,
                                  const gen::GroundTruth& truth) {
  std::vector<Sample> samples;
  if (windows.empty()) {
    return samples;
  }
  if (truth.per_second.empty()) {
    throw AlignmentError("build_dataset: ground truth trace is empty");
  }
  bool any_candidate = false;
  for (const auto& w : windows) {
    if (w.sparse) {
      continue;
    }
    any_candidate = true;
    double overlap_total = 0.0;
    double bitrate = 0.0, framerate = 0.0, width = 0.0;
    for (const auto& s : truth.per_second) {
      const std::int64_t sec_start =
          static_cast<std::int64_t>(s.t_s) * 1'000'000;
      const std::int64_t sec_end = sec_start + 1'000'000;
      const std::int64_t lo = std::max(w.t_start_us, sec_start);
      const std::int64_t hi = std::min(w.t_start_us + w.duration_us, sec_end);
      if (hi <= lo) {
        continue;
      }
      const double overlap = static_cast<double>(hi - lo);
      overlap_total += overlap;
      bitrate += overlap * s.bitrate_kbps;
      framerate += overlap * s.framerate_fps;
      width += overlap * s.width_px;
    }
    if (overlap_total <= 0.0) {
      continue;  // window entirely outside the trace
    }
    Sample sample;
    sample.x = features_of(w);
    sample.y = discretize(bitrate / overlap_total, framerate / overlap_total,
                          width / overlap_total);
    sample.t_start_us = w.t_start_us;
    samples.push_back(sample);
  }
  if (any_candidate && samples.empty()) {
    throw AlignmentError(
        "build_dataset: windows and ground truth do not overlap in time");
  }
  return samples;
}

namespace {

int gini_candidates() {
  // ceil(sqrt(d)) candidate features per split.
  return static_cast<int>(std::ceil(std::sqrt(double(kFeatureDim))));
}

double gini(const std::array<std::uint32_t, kGearCount>& counts,
            std::uint32_t total) {
  if (total == 0) {
    return 0.0;
  }
  double g = 1.0;
  for (auto c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    g -= p * p;
  }
  return g;
}

class TreeBuilder {
 public:
  TreeBuilder(std::span<const Sample> data, const std::vector<int>& labels,
              const ForestParams& params, detail::Rng& rng)
      : data_(data), labels_(labels), params_(params), rng_(rng) {}

  DecisionTree build(std::vector<std::uint32_t> indices,
                     std::array<double, kFeatureDim>& importance) {
    root_size_ = static_cast<double>(indices.size());
    importance_ = &importance;
    tree_.nodes.clear();
    grow(std::move(indices), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::uint32_t> indices, int depth) {
    std::array<std::uint32_t, kGearCount> counts{};
    for (auto i : indices) {
      ++counts[static_cast<std::size_t>(labels_[i])];
    }
    const auto total = static_cast<std::uint32_t>(indices.size());
    const double node_gini = gini(counts, total);

    const int node_id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes[node_id].counts = counts;

    const bool pure = node_gini <= 0.0;
    if (depth >= params_.max_depth || pure ||
        total < 2 * static_cast<std::uint32_t>(params_.min_samples_leaf)) {
      return node_id;
    }

    // Candidate features, sampled without replacement, scanned in
    // ascending order so split ties are deterministic.
    std::array<int, kFeatureDim> feats;
    std::iota(feats.begin(), feats.end(), 0);
    const int k = gini_candidates();
    for (int i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(
          rng_.uniform_int(i, kFeatureDim - 1));
      std::swap(feats[static_cast<std::size_t>(i)], feats[j]);
    }
    std::sort(feats.begin(), feats.begin() + k);

    int best_feature = -1;
    double best_weighted = node_gini;
    double best_threshold = 0.0;
    std::vector<std::uint32_t> sorted(indices);
    for (int fi = 0; fi < k; ++fi) {
      const int f = feats[static_cast<std::size_t>(fi)];
      std::sort(sorted.begin(), sorted.end(),
                [&](std::uint32_t a, std::uint32_t b) {
                  const double xa = data_[a].x[static_cast<std::size_t>(f)];
                  const double xb = data_[b].x[static_cast<std::size_t>(f)];
                  return xa != xb ? xa < xb : a < b;
                });
      std::array<std::uint32_t, kGearCount> left{};
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        ++left[static_cast<std::size_t>(labels_[sorted[i]])];
        const double xa = data_[sorted[i]].x[static_cast<std::size_t>(f)];
        const double xb = data_[sorted[i + 1]].x[static_cast<std::size_t>(f)];
        if (xa == xb) {
          continue;
        }
        const auto nl = static_cast<std::uint32_t>(i + 1);
        const auto nr = total - nl;
        if (nl < static_cast<std::uint32_t>(params_.min_samples_leaf) ||
            nr < static_cast<std::uint32_t>(params_.min_samples_leaf)) {
          continue;
        }
        std::array<std::uint32_t, kGearCount> right{};
        for (int c = 0; c < kGearCount; ++c) {
          right[static_cast<std::size_t>(c)] =
              counts[static_cast<std::size_t>(c)] -
              left[static_cast<std::size_t>(c)];
        }
        const double weighted =
            (nl * gini(left, nl) + nr * gini(right, nr)) / total;
        if (weighted < best_weighted - 1e-12) {
          best_weighted = weighted;
          best_feature = f;
          best_threshold = (xa + xb) / 2.0;
        }
      }
    }

    if (best_feature < 0) {
      return node_id;
    }

    std::vector<std::uint32_t> left_idx, right_idx;
    for (auto i : indices) {
      if (data_[i].x[static_cast<std::size_t>(best_feature)] <=
          best_threshold) {
        left_idx.push_back(i);
      } else {
        right_idx.push_back(i);
      }
    }
    (*importance_)[static_cast<std::size_t>(best_feature)] +=
        (total / root_size_) * (node_gini - best_weighted);

    indices.clear();
    indices.shrink_to_fit();
    const int left_id = grow(std::move(left_idx), depth + 1);
    const int right_id = grow(std::move(right_idx), depth + 1);
    tree_.nodes[node_id].feature = best_feature;
    tree_.nodes[node_id].threshold = best_threshold;
    tree_.nodes[node_id].left = left_id;
    tree_.nodes[node_id].right = right_id;
    return node_id;
  }

  std::span<const Sample> data_;
  const std::vector<int>& labels_;
  const ForestParams& params_;
  detail::Rng& rng_;
  DecisionTree tree_;
  std::array<double, kFeatureDim>* importance_ = nullptr;
  double root_size_ = 0.0;
};

QoeGear tree_predict(const DecisionTree& tree, const FeatureVector& x) {
  int node = 0;
  while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                 : n.right;
  }
  const auto& counts = tree.nodes[static_cast<std::size_t>(node)].counts;
  int best = 0;
  for (int c = 1; c < kGearCount; ++c) {
    if (counts[static_cast<std::size_t>(c)] >
        counts[static_cast<std::size_t>(best)]) {
      best = c;  // ties keep the lower gear
    }
  }
  return static_cast<QoeGear>(best);
}

}  // namespace

RandomForestModel train_forest(std::span<const Sample> dataset,
                               QoeTarget target, const ForestParams& params,
                               std::uint64_t seed) {
  if (dataset.empty()) {
    throw UsageError("train_forest: empty dataset");
  }
  if (params.n_trees < 1 || params.max_depth < 1 ||
      params.min_samples_leaf < 1) {
    throw UsageError("train_forest: invalid parameters");
  }
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const auto& s : dataset) {
    labels.push_back(static_cast<int>(label_for(s.y, target)));
  }
  const bool single_class =
      std::adjacent_find(labels.begin(), labels.end(),
                         std::not_equal_to<>()) == labels.end();

  RandomForestModel model;
  model.params = params;
  model.target = target;
  model.train_seed = seed;
  model.single_class = single_class;
  model.trees.reserve(static_cast<std::size_t>(params.n_trees));

  std::array<double, kFeatureDim> importance{};
  const auto n = static_cast<std::int64_t>(dataset.size());
  for (int t = 0; t < params.n_trees; ++t) {
    detail::Rng rng(detail::mix_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::uint32_t> bootstrap(dataset.size());
    for (auto& idx : bootstrap) {
      idx = static_cast<std::uint32_t>(rng.uniform_int(0, n - 1));
    }
    TreeBuilder builder(dataset, labels, params, rng);
    model.trees.push_back(builder.build(std::move(bootstrap), importance));
  }

  const double total =
      std::accumulate(importance.begin(), importance.end(), 0.0);
  if (total > 0.0) {
    for (std::size_t f = 0; f < kFeatureDim; ++f) {
      model.feature_importances[f] = importance[f] / total;
    }
  }
  return model;
}

QoeGear predict(const RandomForestModel& model, const FeatureVector& x) {
  if (model.trees.empty()) {
    throw UsageError("predict: model has no trees");
  }
  std::array<std::uint32_t, kGearCount> votes{};
  for (const auto& tree : model.trees) {
    ++votes[static_cast<std::size_t>(tree_predict(tree, x))];
  }
  int best = 0;
  for (int c = 1; c < kGearCount; ++c) {
    if (votes[static_cast<std::size_t>(c)] >
        votes[static_cast<std::size_t>(best)]) {
      best = c;  // ties keep the lower gear
    }
  }
  return static_cast<QoeGear>(best);
}

namespace {

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
};

std::map<int, ClassCounts> tally(std::span<const int> preds,
                                 std::span<const int> truth) {
  if (preds.size() != truth.size()) {
    throw ShapeError("f1: prediction/truth lengths differ: " +
                     std::to_string(preds.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  if (preds.empty()) {
    throw ShapeError("f1: empty inputs");
  }
  std::map<int, ClassCounts> counts;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == truth[i]) {
      ++counts[truth[i]].tp;
    } else {
      ++counts[preds[i]].fp;
      ++counts[truth[i]].fn;
    }
  }
  return counts;
}

}  // namespace

double micro_f1(std::span<const int> preds, std::span<const int> truth) {
  const auto counts = tally(preds, truth);
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (const auto& [cls, c] : counts) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  const double denom = static_cast<double>(2 * tp + fp + fn);
  return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
}

double macro_f1(std::span<const int> preds, std::span<const int> truth) {
  const auto counts = tally(preds, truth);
  double sum = 0.0;
  std::size_t classes = 0;
  for (const auto& [cls, c] : counts) {
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    sum += denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
    ++classes;
  }
  return classes > 0 ? sum / static_cast<double>(classes) : 0.0;
}

namespace {

std::vector<int> to_ints(std::span<const QoeGear> gears) {
  std::vector<int> v;
  v.reserve(gears.size());
  for (auto g : gears) {
    v.push_back(static_cast<int>(g));
  }
  return v;
}

}  // namespace

double micro_f1(std::span<const QoeGear> preds,
                std::span<const QoeGear> truth) {
  const auto p = to_ints(preds);
  const auto t = to_ints(truth);
  return micro_f1(std::span<const int>(p), std::span<const int>(t));
}

double macro_f1(std::span<const QoeGear> preds,
                std::span<const QoeGear> truth) {
  const auto p = to_ints(preds);
  const auto t = to_ints(truth);
  return macro_f1(std::span<const int>(p), std::span<const int>(t));
}

std::array<std::array<std::uint64_t, kGearCount>, kGearCount> confusion_matrix(
    std::span<const QoeGear> preds, std::span<const QoeGear> truth) {
  if (preds.size() != truth.size()) {
    throw ShapeError("confusion_matrix: lengths differ");
  }
  std::array<std::array<std::uint64_t, kGearCount>, kGearCount> m{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

double r2_score(std::span<const double> truth, std::span<const double> preds) {
  if (truth.size() != preds.size()) {
    throw ShapeError("r2_score: lengths differ");
  }
  if (truth.size() < 2) {
    throw ShapeError("r2_score: need at least 2 points");
  }
  double mean = 0.0;
  for (double y : truth) {
    mean += y;
  }
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - preds[i]) * (truth[i] - preds[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) {
    throw DegenerateVarianceError("r2_score: truth series has zero variance");
  }
  return 1.0 - ss_res / ss_tot;
}

std::string serialize_model(const RandomForestModel& model) {
  nlohmann::json j;
  j["version"] = 1;
  j["target"] = to_string(model.target);
  j["feature_order"] = kFeatureNames;
  j["params"] = {{"n_trees", model.params.n_trees},
                 {"max_depth", model.params.max_depth},
                 {"min_samples_leaf", model.params.min_samples_leaf}};
  j["seed"] = model.train_seed;
  j["single_class"] = model.single_class;
  j["importances"] = model.feature_importances;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : model.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes) {
      if (n.feature >= 0) {
        nodes.push_back({{"f", n.feature},
                         {"t", n.threshold},
                         {"l", n.left},
                         {"r", n.right}});
      } else {
        nodes.push_back({{"c", n.counts}});
      }
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  j["trees"] = std::move(trees);
  return j.dump();
}

RandomForestModel load_model(const std::string& serialized) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(serialized);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("model parse error: ") + e.what());
  }
  try {
    if (!j.contains("version") || j["version"].get<int>() != 1) {
      throw VersionError("model version mismatch (want 1)");
    }
    RandomForestModel model;
    model.target = target_from_string(j.at("target").get<std::string>());
    model.params.n_trees = j.at("params").at("n_trees").get<int>();
    model.params.max_depth = j.at("params").at("max_depth").get<int>();
    model.params.min_samples_leaf =
        j.at("params").at("min_samples_leaf").get<int>();
    model.train_seed = j.at("seed").get<std::uint64_t>();
    model.single_class = j.at("single_class").get<bool>();
    const auto& imp = j.at("importances");
    for (std::size_t f = 0; f < kFeatureDim; ++f) {
      model.feature_importances[f] = imp.at(f).get<double>();
    }
    for (const auto& jt : j.at("trees")) {
      DecisionTree tree;
      for (const auto& jn : jt.at("nodes")) {
        TreeNode n;
        if (jn.contains("f")) {
          n.feature = jn.at("f").get<int>();
          n.threshold = jn.at("t").get<double>();
          n.left = jn.at("l").get<int>();
          n.right = jn.at("r").get<int>();
        } else {
          const auto& c = jn.at("c");
          for (int g = 0; g < kGearCount; ++g) {
            n.counts[static_cast<std::size_t>(g)] =
                c.at(g).get<std::uint32_t>();
          }
        }
        tree.nodes.push_back(n);
      }
      model.trees.push_back(std::move(tree));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model schema error: ") + e.what());
  }
}

void save_model(const RandomForestModel& model,
                const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw DataError("cannot open for writing: " + path.string());
  }
  f << serialize_model(model) << '\n';
}

RandomForestModel load_model_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw DataError("cannot open model file: " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return load_model(text);
}

}  // namespace dai::qoe
