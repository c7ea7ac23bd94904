#include <gtest/gtest.h>

#include "mtaim/classifiers.hpp"
#include "mtaim/errors.hpp"
#include "mtaim/features.hpp"
#include "mtaim/preprocess.hpp"
#include "mtaim/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace mtaim;
using namespace mtaim::clf;

namespace {

// Noise-free, 60 samples: 10 per movement from 10 subjects, one repetition each.
std::vector<features::FeatureTensor> separable_set() {
  synth::SimulatorConfig c;
  c.noise_sigma = 0.0;
  c.spike_rate = 0.0;
  c.kinematics_noise_sigma = 0.0;
  c.reps_per_movement = 1;
  c.steps = 100;
  const auto d = synth::generate_dataset(c);
  std::vector<features::FeatureTensor> out;
  for (const auto& s : d.samples) out.push_back(features::assemble_features(s, nullptr, nullptr));
  return out;
}

std::vector<features::FeatureTensor> noisy_set(double noise, int subjects = 4) {
  synth::SimulatorConfig c;
  c.noise_sigma = noise;
  c.n_subjects = subjects;
  c.steps = 100;
  const auto d = prep::preprocess_dataset(synth::generate_dataset(c)).data;
  std::vector<features::FeatureTensor> out;
  for (const auto& s : d.samples) out.push_back(features::assemble_features(s, nullptr, nullptr));
  return out;
}

double accuracy(const TrainedClassifier& m, const std::vector<features::FeatureTensor>& xs) {
  const auto p = predict(m, xs);
  int hit = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) hit += p[i].movement() == xs[i].label;
  return static_cast<double>(hit) / static_cast<double>(xs.size());
}

ClassifierConfig quick(Family f) {
  auto c = ClassifierConfig::defaults_for(f);
  if (f == Family::Gbdt) c.gbdt.n_rounds = 60;
  return c;
}

}  // namespace

TEST(ClassifierConfig, ReferenceDefaults) {
  const auto g = ClassifierConfig::defaults_for(Family::Gbdt);
  EXPECT_DOUBLE_EQ(g.gbdt.learning_rate, 0.01);
  EXPECT_EQ(g.gbdt.max_depth, 3);
  EXPECT_NO_THROW(g.validate());
  const auto a = ClassifierConfig::defaults_for(Family::Attention);
  EXPECT_EQ(a.attention.encoder_layers, 4);
  EXPECT_EQ(a.attention.latent_dim, 12);
  const auto r = ClassifierConfig::defaults_for(Family::ConvRecurrent);
  EXPECT_EQ(r.conv_recurrent.hidden_dim, 100);
  EXPECT_EQ(r.conv_recurrent.recurrent_layers, 2);
  EXPECT_EQ(r.conv_recurrent.conv_kernel, 5);
  EXPECT_EQ(r.conv_recurrent.conv_channels, 32);
}

TEST(ClassifierConfig, OnlyActiveFamilyValidated) {
  auto c = ClassifierConfig::defaults_for(Family::Gbdt);
  c.attention.encoder_layers = 0;  // ignored for gbdt
  EXPECT_NO_THROW(c.validate());
  c.gbdt.n_rounds = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  auto a = ClassifierConfig::defaults_for(Family::Attention);
  EXPECT_EQ(ClassifierConfig::from_json(a.to_json()).describe(), a.describe());
  a.attention.latent_dim = -1;
  EXPECT_THROW(a.validate(), ConfigError);
}

class SeparableFit : public ::testing::TestWithParam<Family> {};

TEST_P(SeparableFit, PerfectTrainingAccuracyAndContracts) {
  const auto data = separable_set();
  ASSERT_EQ(data.size(), 60u);
  const auto m = train_classifier(quick(GetParam()), data);
  EXPECT_DOUBLE_EQ(accuracy(m, data), 1.0);
  if (GetParam() != Family::Gbdt) EXPECT_LE(m.training_log.back(), m.training_log.front());
  for (const auto& x : data) {
    const auto p = predict(m, x);
    ASSERT_EQ(p.scores.size(), 6u);
    EXPECT_NEAR(std::accumulate(p.scores.begin(), p.scores.end(), 0.0), 1.0, 1e-9);
    for (double s : p.scores) EXPECT_GE(s, 0.0);
    EXPECT_EQ(p.label, std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
    const auto q = predict(m, x);
    EXPECT_EQ(p.scores, q.scores);
  }
}

INSTANTIATE_TEST_SUITE_P(Families, SeparableFit,
                         ::testing::Values(Family::Gbdt, Family::Attention, Family::ConvRecurrent),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(TrainClassifier, ZeroEpochsIsNearChance) {
  const auto data = noisy_set(0.35);
  for (auto f : {Family::Attention, Family::ConvRecurrent}) {
    auto c = ClassifierConfig::defaults_for(f);
    c.epochs = 0;
    const auto m = train_classifier(c, data);
    EXPECT_NEAR(accuracy(m, data), 1.0 / 6.0, 0.15) << to_string(f);
    for (const auto& p : predict(m, data))
      for (double s : p.scores) EXPECT_NEAR(s, 1.0 / 6.0, 0.1);
  }
}

TEST(TrainClassifier, Errors) {
  auto data = separable_set();
  std::vector<features::FeatureTensor> one_label;
  for (const auto& x : data)
    if (x.label == MovementLabel::Flexion) one_label.push_back(x);
  EXPECT_THROW(train_classifier(quick(Family::Gbdt), one_label), DegenerateError);
  auto bad = data;
  bad[3].values = Matrix::Zero(6, 99);
  EXPECT_THROW(train_classifier(quick(Family::ConvRecurrent), bad), ShapeError);

  const auto m = train_classifier(quick(Family::Gbdt), data);
  auto wide = data[0];
  wide.values = Matrix::Zero(12, 100);
  wide.manifest = features::manifest_for(true, false);
  EXPECT_THROW(predict(m, wide), ShapeError);
  auto longer = data[0];
  longer.values = Matrix::Zero(6, 101);
  EXPECT_THROW(predict(m, longer), ShapeError);
}

TEST(Gbdt, DepthZeroPredictsThePrior) {
  auto data = noisy_set(0.35, 2);
  // unbalance: drop half of the non-extension samples
  std::vector<features::FeatureTensor> skewed;
  int dropped = 0;
  for (const auto& x : data)
    if (x.label == MovementLabel::Extension || (dropped++ % 2) == 0) skewed.push_back(x);
  std::map<MovementLabel, int> counts;
  for (const auto& x : skewed) counts[x.label]++;
  int majority = 0;
  for (auto [l, n] : counts) majority = std::max(majority, n);
  auto c = quick(Family::Gbdt);
  c.gbdt.max_depth = 0;
  const auto m = train_classifier(c, skewed);
  EXPECT_DOUBLE_EQ(accuracy(m, skewed), static_cast<double>(majority) / static_cast<double>(skewed.size()));
}

TEST(Gbdt, TrainingAccuracyAtLeastMajorityBaseline) {
  const auto data = noisy_set(1.0, 3);
  const auto m = train_classifier(quick(Family::Gbdt), data);
  EXPECT_GE(accuracy(m, data), 1.0 / 6.0);
}

TEST(SummaryFeatures, DirectDefinition) {
  Matrix x(2, 4);
  x << 1, 3, -2, 0,
       0, 0, 0, 5;
  const Vector f = summary_features(x);
  ASSERT_EQ(f.size(), 12);
  // channel 0: min, max, mean, std, argmax time, energy
  EXPECT_DOUBLE_EQ(f(0), -2);
  EXPECT_DOUBLE_EQ(f(1), 3);
  EXPECT_DOUBLE_EQ(f(2), 0.5);
  EXPECT_NEAR(f(3), std::sqrt((0.25 + 6.25 + 6.25 + 0.25) / 4), 1e-12);
  EXPECT_DOUBLE_EQ(f(4), 1.0 / 3.0);  // t / (T - 1)
  EXPECT_DOUBLE_EQ(f(5), (1 + 9 + 4 + 0) / 4.0);
  EXPECT_DOUBLE_EQ(f(10), 1.0);
}

TEST(Predict, ArgmaxInvariantUnderTemperature) {
  const auto data = noisy_set(0.7, 2);
  auto c = quick(Family::Attention);
  c.epochs = 5;
  const auto m = train_classifier(c, data);
  for (double temp : {0.1, 0.5, 3.0, 50.0}) {
    const auto a = predict(m, data), b = predict(m, data, temp);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].label, b[i].label);
  }
  EXPECT_THROW(predict(m, data.front(), 0.0), ConfigError);
}

TEST(TrainedClassifier, JsonRoundTripPredictsIdentically) {
  const auto data = noisy_set(0.35, 2);
  for (auto f : {Family::Gbdt, Family::ConvRecurrent}) {
    auto c = quick(f);
    c.epochs = 3;
    c.gbdt.n_rounds = 10;
    const auto m = train_classifier(c, data);
    const auto back = TrainedClassifier::from_json(nlohmann::json::parse(m.to_json().dump()));
    const auto a = predict(m, data), b = predict(back, data);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].scores, b[i].scores);
    EXPECT_EQ(back.manifest, m.manifest);
  }
}

TEST(StratifiedFolds, BalancedAndDeterministic) {
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) y.push_back(i % 6);
  const auto f = stratified_folds(y, 5, 3);
  EXPECT_EQ(f, stratified_folds(y, 5, 3));
  std::map<std::pair<int, int>, int> per;
  for (std::size_t i = 0; i < y.size(); ++i) per[{f[i], y[i]}]++;
  for (auto [k, n] : per) EXPECT_EQ(n, 2);
}

TEST(GridSearch, SingleCellAndEmptyGrid) {
  const auto data = separable_set();
  auto c = quick(Family::Gbdt);
  c.gbdt.n_rounds = 10;
  const auto r = grid_search({c}, data, 3, 1);
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.best.describe(), c.describe());
  EXPECT_EQ(r.cells[0].fold_accuracy.size(), 3u);
  EXPECT_THROW(grid_search({}, data, 3, 1), ConfigError);
  std::ostringstream table;
  write_grid_table(table, r);
  std::string header;
  std::getline(std::istringstream(table.str()) >> std::ws, header);
  EXPECT_NE(header.find("mean"), std::string::npos);
}

TEST(GridSearch, AttentionGridHasTwelveCells) {
  const auto grid = attention_grid(ClassifierConfig::defaults_for(Family::Attention));
  ASSERT_EQ(grid.size(), 12u);
  std::set<std::pair<int, int>> cells;
  for (const auto& c : grid) cells.insert({c.attention.encoder_layers, c.attention.latent_dim});
  for (int depth = 2; depth <= 5; ++depth)
    for (int width : {6, 12, 24}) EXPECT_TRUE(cells.count({depth, width}));
}

TEST(GridSearch, LongerTrainedCellWins) {
  const auto data = separable_set();
  auto short_run = ClassifierConfig::defaults_for(Family::ConvRecurrent);
  short_run.epochs = 1;
  auto long_run = short_run;
  long_run.epochs = 10;
  const auto r = grid_search({short_run, long_run}, data, 3, 2);
  EXPECT_EQ(r.best.epochs, 10);
  EXPECT_GT(r.cells[1].mean, r.cells[0].mean);
}

TEST(GridSearch, TiesPreferFewerParameters) {
  const auto data = separable_set();
  auto big = quick(Family::Gbdt);
  big.gbdt.n_rounds = 20;
  auto small = big;
  small.gbdt.max_depth = 2;
  // both fit the noise-free set perfectly on every fold
  const auto r = grid_search({big, small}, data, 3, 4);
  ASSERT_DOUBLE_EQ(r.cells[0].mean, r.cells[1].mean);
  EXPECT_EQ(r.best.gbdt.max_depth, 2);
}
