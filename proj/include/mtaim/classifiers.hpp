#pragma once

#include "mtaim/config.hpp"
#include "mtaim/features.hpp"
#include "mtaim/nn.hpp"
#include "mtaim/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mtaim::clf {

enum class Family { Gbdt, Attention, ConvRecurrent };

std::string_view to_string(Family f) noexcept;
Family parse_family(std::string_view s);  // throws ConfigError

struct GbdtParams {
  double learning_rate = 0.01;
  int max_depth = 3;
  int n_rounds = 300;
  double l2 = 1.0;
};

struct AttentionParams {
  int encoder_layers = 4;
  int latent_dim = 12;
};

struct ConvRecurrentParams {
  int hidden_dim = 100;
  int recurrent_layers = 2;
  int conv_kernel = 5;
  int conv_channels = 32;
};

struct ClassifierConfig {
  Family family = Family::ConvRecurrent;
  GbdtParams gbdt;
  AttentionParams attention;
  ConvRecurrentParams conv_recurrent;
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 3e-3;
  int max_tokens = 30;  // sequence length after temporal pooling
  std::uint64_t seed = 1;

  static ClassifierConfig defaults_for(Family f);
  // Reads `<section>.family` first, then family-specific keys.
  static ClassifierConfig from_config(const Config& c, const std::string& section = "classifier");
  void validate() const;  // only the active family's fields are checked

  nlohmann::json to_json() const;  // active family's fields only
  static ClassifierConfig from_json(const nlohmann::json& j);
  std::string describe() const;  // "key=value;..." in a fixed order
};

// Expected input layout of a trained model.
struct InputManifest {
  std::vector<std::string> channels;
  int steps = 0;
  bool operator==(const InputManifest&) const = default;
};

struct Tree {
  std::vector<int> feature;  // -1 at leaves
  std::vector<double> threshold;
  std::vector<int> left, right;
  std::vector<double> value;

  double evaluate(const Vector& x) const;
};

struct TrainedClassifier {
  ClassifierConfig config;
  InputManifest manifest;
  int n_classes = kNumMovements;
  Vector channel_mean, channel_std;  // standardisation fitted on the training set
  nn::ParamSet params;               // neural families
  Vector base_score;                 // gbdt: initial log-prior per class
  std::vector<std::vector<Tree>> rounds;  // gbdt: rounds x classes
  std::vector<double> training_log;
  int version = kSchemaVersion;

  std::size_t parameter_count() const;

  nlohmann::json to_json() const;
  static TrainedClassifier from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TrainedClassifier load(const std::filesystem::path& path);
};

struct Prediction {
  int label = 0;
  std::vector<double> scores;  // nonnegative, sums to 1
  MovementLabel movement() const { return label_from_index(label); }
};

// Generic entry points over integer class labels 0..n_classes-1.
TrainedClassifier train_classifier(const ClassifierConfig& cfg, const std::vector<Matrix>& x, const std::vector<int>& y,
                                   int n_classes, const InputManifest& manifest, std::ostream* log = nullptr);
// Raw pre-normalisation scores (logits) for a batch.
Matrix predict_logits(const TrainedClassifier& m, const std::vector<Matrix>& x);
std::vector<Prediction> predict_batch(const TrainedClassifier& m, const std::vector<Matrix>& x,
                                      double temperature = 1.0);

// Movement classification over feature tensors.
TrainedClassifier train_classifier(const ClassifierConfig& cfg, const std::vector<features::FeatureTensor>& train,
                                   std::ostream* log = nullptr);
Prediction predict(const TrainedClassifier& m, const features::FeatureTensor& x, double temperature = 1.0);
std::vector<Prediction> predict(const TrainedClassifier& m, const std::vector<features::FeatureTensor>& xs,
                                double temperature = 1.0);

// Per-channel summary statistics used by the tree model: min, max, mean, std,
// argmax time (t / (T - 1)), energy (mean square).
Vector summary_features(const Matrix& x);

// Stratified fold index (0..folds-1) per sample.
std::vector<int> stratified_folds(const std::vector<int>& y, int folds, std::uint64_t seed);

struct GridCell {
  ClassifierConfig config;
  std::vector<double> fold_accuracy;
  double mean = 0.0;
  double std = 0.0;
  std::size_t parameters = 0;
};

struct GridResult {
  ClassifierConfig best;
  std::vector<GridCell> cells;
};

GridResult grid_search(const std::vector<ClassifierConfig>& grid, const std::vector<features::FeatureTensor>& data,
                       int folds, std::uint64_t seed);
void write_grid_table(std::ostream& out, const GridResult& r);

// Encoder depth 2..5 x latent width {6, 12, 24}.
std::vector<ClassifierConfig> attention_grid(const ClassifierConfig& base);

}  // namespace mtaim::clf
