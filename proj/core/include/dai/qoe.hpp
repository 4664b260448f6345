#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dai/errors.hpp"
#include "dai/qos.hpp"
#include "dai/streamgen.hpp"

namespace dai::qoe {

// Discretized quality gears, totally ordered: High > Medium > Low > VeryLow.
enum class QoeGear : int { VeryLow = 0, Low = 1, Medium = 2, High = 3 };

constexpr int kGearCount = 4;

const char* to_string(QoeGear gear);
QoeGear gear_from_string(const std::string& s);

struct QoeLabel {
  QoeGear bitrate = QoeGear::VeryLow;
  QoeGear framerate = QoeGear::VeryLow;
  QoeGear resolution = QoeGear::VeryLow;
};

// Gear boundaries are lower-bound inclusive: bitrate 700/500/300 kbps,
// framerate 30/20/10 fps, width 1280/960/640 px.
QoeLabel discretize(double bitrate_kbps, double framerate_fps,
                    double resolution_width);

constexpr int kFeatureDim = 5;
using FeatureVector = std::array<double, kFeatureDim>;

// Feature order is part of the model contract.
extern const std::array<const char*, kFeatureDim> kFeatureNames;

FeatureVector features_of(const qos::QosWindow& window);

struct Sample {
  FeatureVector x{};
  QoeLabel y;
  std::int64_t t_start_us = 0;
};

// Labels each non-sparse window with the time-weighted mean ground truth
// over the window, then discretizes.
std::vector<Sample> build_dataset(std::span<const qos::QosWindow> windows,
                                  const gen::GroundTruth& truth);

enum class QoeTarget { Bitrate, Framerate, Resolution };

const char* to_string(QoeTarget target);
QoeTarget target_from_string(const std::string& s);
QoeGear label_for(const QoeLabel& label, QoeTarget target);

struct ForestParams {
  int n_trees = 100;
  int max_depth = 12;
  int min_samples_leaf = 2;
};

// Nodes of one tree, stored flat; feature < 0 marks a leaf holding class
// counts. Internal nodes route x[feature] <= threshold to the left child.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::array<std::uint32_t, kGearCount> counts{};
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
};

struct RandomForestModel {
  ForestParams params;
  QoeTarget target = QoeTarget::Bitrate;
  std::uint64_t train_seed = 0;
  bool single_class = false;
  std::vector<DecisionTree> trees;
  std::array<double, kFeatureDim> feature_importances{};
};

// Bagged Gini trees: bootstrap samples, ceil(sqrt(d)) candidate features
// per split, midpoint thresholds, per-tree seeds derived from (seed, tree
// index). Importances are the normalized total impurity decrease.
RandomForestModel train_forest(std::span<const Sample> dataset,
                               QoeTarget target,
                               const ForestParams& params = {},
                               std::uint64_t seed = 1);

// Majority vote across trees; ties go to the lower gear.
QoeGear predict(const RandomForestModel& model, const FeatureVector& x);

double micro_f1(std::span<const int> preds, std::span<const int> truth);
double macro_f1(std::span<const int> preds, std::span<const int> truth);
double micro_f1(std::span<const QoeGear> preds, std::span<const QoeGear> truth);
double macro_f1(std::span<const QoeGear> preds, std::span<const QoeGear> truth);

// counts[true][pred], indexed by the QoeGear integer value.
std::array<std::array<std::uint64_t, kGearCount>, kGearCount> confusion_matrix(
    std::span<const QoeGear> preds, std::span<const QoeGear> truth);

// 1 - sum((y - y')^2) / sum((y - mean)^2).
double r2_score(std::span<const double> truth, std::span<const double> preds);

std::string serialize_model(const RandomForestModel& model);
RandomForestModel load_model(const std::string& serialized);
void save_model(const RandomForestModel& model,
                const std::filesystem::path& path);
RandomForestModel load_model_file(const std::filesystem::path& path);

}  // namespace dai::qoe
