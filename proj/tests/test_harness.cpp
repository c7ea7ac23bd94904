#include <gtest/gtest.h>

#include "mtaim/errors.hpp"
#include "mtaim/harness.hpp"
#include "mtaim/preprocess.hpp"
#include "mtaim/synthdata.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace mtaim;
using namespace mtaim::harness;

namespace {

Dataset processed(double noise, int subjects = 10) {
  synth::SimulatorConfig c;
  c.noise_sigma = noise;
  c.n_subjects = subjects;
  if (noise == 0.0) {
    c.spike_rate = 0.0;
    c.kinematics_noise_sigma = 0.0;
  }
  return prep::preprocess_dataset(synth::generate_dataset(c)).data;
}

const Dataset& default_data() {
  static const Dataset d = processed(synth::SimulatorConfig{}.noise_sigma);
  return d;
}

// Short-running spec for plumbing checks.
ExperimentSpec cheap_spec(AugMode mode) {
  ExperimentSpec s;
  s.mode = mode;
  s.classifier = clf::ClassifierConfig::defaults_for(clf::Family::Gbdt);
  s.classifier.gbdt.n_rounds = 15;
  s.generator.epochs = 5;
  s.translator.epochs = 5;
  s.trials = 2;
  return s;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mtaim_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentReport fake_report(AugMode mode, clf::Family family, std::vector<double> acc) {
  ExperimentReport r;
  r.mode = mode;
  r.classifier = family;
  r.cell = std::string(to_string(mode)) + "/" + std::string(clf::to_string(family));
  r.accuracies = acc;
  const auto ms = metrics::mean_std(acc);
  r.mean = ms.mean;
  r.std = ms.std;
  r.precision.assign(6, 0.5);
  r.recall.assign(6, 0.25);
  return r;
}

}  // namespace

TEST(MakeSplit, CrossSampleStratified) {
  const auto& d = default_data();
  ASSERT_EQ(d.size(), 180u);
  SplitSpec s;
  s.seed = 11;
  const auto splits = make_split(d, s);
  ASSERT_EQ(splits.size(), 1u);
  const auto& sp = splits[0];
  EXPECT_EQ(sp.test.size(), 45u);
  EXPECT_EQ(sp.train.size(), 135u);
  std::set<std::size_t> all = as_set(sp.train);
  for (auto i : sp.test) EXPECT_TRUE(all.insert(i).second) << "index " << i << " in both partitions";
  EXPECT_EQ(all.size(), d.size());
  std::map<MovementLabel, int> per_label;
  for (auto i : sp.test) per_label[d.samples[i].label]++;
  for (auto [l, n] : per_label) {
    EXPECT_GE(n, 7);
    EXPECT_LE(n, 8);
  }
  EXPECT_EQ(make_split(d, s)[0].test, sp.test);
  s.seed = 12;
  EXPECT_NE(make_split(d, s)[0].test, sp.test);
}

TEST(MakeSplit, LeaveOneSubjectOut) {
  const auto& d = default_data();
  SplitSpec s;
  s.mode = SplitMode::Loso;
  const auto folds = make_split(d, s);
  ASSERT_EQ(folds.size(), 10u);
  std::set<std::string> held;
  for (const auto& f : folds) {
    ASSERT_EQ(f.test.size(), 18u);
    const auto subject = d.samples[f.test.front()].subject_id;
    for (auto i : f.test) EXPECT_EQ(d.samples[i].subject_id, subject);
    for (auto i : f.train) EXPECT_NE(d.samples[i].subject_id, subject);
    EXPECT_EQ(f.train.size() + f.test.size(), d.size());
    held.insert(subject);
  }
  EXPECT_EQ(held.size(), 10u);
  EXPECT_THROW(make_split(processed(0.35, 1), s), DegenerateError);
}

TEST(MakeSplit, KfoldPartitions) {
  const auto& d = default_data();
  SplitSpec s;
  s.mode = SplitMode::Kfold;
  s.folds = 4;
  const auto folds = make_split(d, s);
  ASSERT_EQ(folds.size(), 4u);
  std::vector<int> seen(d.size(), 0);
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), d.size());
    for (auto i : f.test) seen[i]++;
  }
  for (int n : seen) EXPECT_EQ(n, 1);
}

TEST(SplitSpec, Validation) {
  SplitSpec s;
  s.test_fraction = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.test_fraction = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.mode = SplitMode::Kfold;
  s.folds = 1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Leakage, AssertionCatchesOverlap) {
  TrialInputs in;
  in.generator_ids = {"S01/Flexion/1", "S02/Flexion/1"};
  in.classifier_ids = {"S01/Flexion/1", "synthetic/Flexion/0"};
  EXPECT_NO_THROW(assert_no_leakage({"S03/Flexion/1"}, in));
  EXPECT_THROW(assert_no_leakage({"S02/Flexion/1"}, in), LeakageError);
  EXPECT_THROW(assert_no_leakage({"synthetic/Flexion/0"}, in), LeakageError);
}

TEST(BuildFeatures, ChannelCounts) {
  const auto& d = default_data();
  std::vector<MTSample> mt(d.samples.begin(), d.samples.begin() + 3);
  std::vector<const KinematicsSample*> kin;
  for (std::size_t i = 0; i < 3; ++i) kin.push_back(&d.kin(i));
  EXPECT_EQ(build_features(mt, {}, false, false)[0].channels(), 6);
  EXPECT_EQ(build_features(mt, {}, true, false)[0].channels(), 12);
  EXPECT_EQ(build_features(mt, kin, true, true)[0].channels(), 18);
  EXPECT_EQ(build_features(mt, kin, true, true)[0].manifest, features::manifest_for(true, true));
}

TEST(RunExperiment, BaseOnSeparableDataIsPerfect) {
  auto s = cheap_spec(AugMode::Base);
  s.classifier = clf::ClassifierConfig::defaults_for(clf::Family::Gbdt);
  s.trials = 3;
  const auto r = run_experiment(s, processed(0.0));
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  EXPECT_EQ(r.accuracies.size(), 3u);
}

TEST(RunExperiment, CountsAndAggregation) {
  auto s = cheap_spec(AugMode::Both);
  s.trials = 5;
  const auto r = run_experiment(s, default_data());
  ASSERT_EQ(r.trials.size(), 5u);
  ASSERT_EQ(r.accuracies.size(), 5u);
  for (const auto& t : r.trials) {
    EXPECT_EQ(t.train_real, 135u);
    EXPECT_EQ(t.train_synthetic, 120u);
    EXPECT_EQ(t.test, 45u);
    EXPECT_EQ(t.channels, 18);
  }
  double mean = 0.0;
  for (double a : r.accuracies) mean += a;
  mean /= 5;
  double var = 0.0;
  for (double a : r.accuracies) var += (a - mean) * (a - mean);
  EXPECT_NEAR(r.mean, mean, 1e-12);
  EXPECT_NEAR(r.std, std::sqrt(var / 4), 1e-12);
  EXPECT_EQ(r.cell, "both/gbdt");
  const auto back = ExperimentReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.accuracies, r.accuracies);
  EXPECT_EQ(back.cell, r.cell);
}

TEST(RunExperiment, ChannelsPerMode) {
  for (auto [mode, channels] : {std::pair{AugMode::Base, 6}, std::pair{AugMode::DataAug, 6},
                                std::pair{AugMode::FeatureAug, 18}}) {
    auto s = cheap_spec(mode);
    s.trials = 1;
    const auto r = run_experiment(s, default_data());
    EXPECT_EQ(r.trials[0].channels, channels) << to_string(mode);
    EXPECT_EQ(r.trials[0].train_synthetic, mode == AugMode::DataAug ? 120u : 0u);
  }
  auto s = cheap_spec(AugMode::FeatureAug);
  s.trials = 1;
  s.include_dtft = false;
  EXPECT_EQ(run_experiment(s, default_data()).trials[0].channels, 12);
}

TEST(RunExperiment, OutOfFoldTranslationIsDeterministic) {
  auto s = cheap_spec(AugMode::FeatureAug);
  s.kinematics_source = KinematicsSource::Generated;
  s.translation_folds = 3;
  s.trials = 1;
  GeneratorCache cache;
  const auto a = run_experiment(s, default_data(), &cache);
  EXPECT_EQ(cache.size(), 4u);  // full-split translator plus one per fold
  EXPECT_EQ(run_experiment(s, default_data()).accuracies, a.accuracies);
  s.translation_folds = -1;
  EXPECT_THROW(run_experiment(s, default_data()), ConfigError);
}

TEST(RunExperiment, RejectsInvalidSpecs) {
  auto s = cheap_spec(AugMode::FeatureAug);
  Dataset no_kin = default_data();
  no_kin.kinematics.clear();
  EXPECT_THROW(run_experiment(s, no_kin), DataError);
  s.translator.mode = gen::ConditioningMode::MovementLabel;
  EXPECT_THROW(run_experiment(s, default_data()), ConfigError);
  s = cheap_spec(AugMode::Base);
  s.trials = 0;
  EXPECT_THROW(run_experiment(s, default_data()), ConfigError);
}

TEST(RunMatrix, TwelveCellsPairedAndReproducible) {
  MatrixSpec m;
  m.base = cheap_spec(AugMode::Base);
  for (auto& c : m.classifiers) {
    c.gbdt.n_rounds = 10;
    c.epochs = 1;
  }
  const auto a = run_matrix(m, default_data());
  ASSERT_EQ(a.size(), 12u);
  std::set<std::string> cells;
  for (const auto& r : a) cells.insert(r.cell);
  EXPECT_EQ(cells.size(), 12u);
  const auto b = run_matrix(m, default_data());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].accuracies, b[i].accuracies) << a[i].cell;

  // a base cell does not depend on which other cells run alongside it
  ExperimentSpec alone = m.base;
  alone.mode = AugMode::Base;
  alone.classifier = m.classifiers.back();
  const auto single = run_experiment(alone, default_data());
  const auto in_matrix = std::find_if(a.begin(), a.end(), [&](const auto& r) { return r.cell == single.cell; });
  ASSERT_NE(in_matrix, a.end());
  EXPECT_EQ(in_matrix->accuracies, single.accuracies);
  for (std::size_t t = 0; t < single.trials.size(); ++t)
    EXPECT_EQ(in_matrix->trials[t].split_seed, single.trials[t].split_seed);
}

TEST(EmitReport, TablesPlotsAndRoundTrip) {
  std::vector<ExperimentReport> reports;
  int k = 0;
  for (auto f : {clf::Family::Gbdt, clf::Family::Attention, clf::Family::ConvRecurrent})
    for (auto m : kAllAugModes) {
      ++k;
      reports.push_back(fake_report(m, f, {0.5 + 0.01 * k, 0.6 + 0.013 * k, 1.0 / 3.0 + 0.02 * k}));
    }
  const auto dir = fresh_dir("emit");
  const auto paths = emit_report(reports, dir);
  int csv = 0, svg = 0;
  for (const auto& p : paths) {
    EXPECT_TRUE(std::filesystem::exists(p)) << p;
    csv += p.extension() == ".csv";
    svg += p.extension() == ".svg";
  }
  EXPECT_EQ(svg, 3);
  EXPECT_GE(csv, 1);

  std::ifstream in(dir / "reports" / "accuracy.csv");
  const auto rows = read_accuracy_table(in);
  ASSERT_EQ(rows.size(), 12u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(rows[i].mean, reports[i].mean, 1e-9);
    EXPECT_NEAR(rows[i].std, reports[i].std, 1e-9);
    ASSERT_EQ(rows[i].trials.size(), 3u);
    EXPECT_EQ(rows[i].mode, std::string(to_string(reports[i].mode)));
  }

  for (const auto& p : paths) {
    if (p.extension() != ".svg") continue;
    boost::property_tree::ptree tree;
    ASSERT_NO_THROW(boost::property_tree::read_xml(p.string(), tree)) << p;
    const auto& root = tree.get_child("svg");
    int bars = 0, dotted = 0;
    for (const auto& [tag, node] : root) {
      if (tag == "rect") ++bars;
      if (tag == "line" && node.get<std::string>("<xmlattr>.stroke-dasharray", "") != "") ++dotted;
    }
    EXPECT_EQ(bars, 5);  // background plus one per mode
    EXPECT_EQ(dotted, 1);
  }
  std::filesystem::remove_all(dir);
}

TEST(EmitReport, Errors) {
  EXPECT_THROW(emit_report({}, fresh_dir("empty")), ArityError);
  const auto blocker = fresh_dir("blocked");
  std::ofstream(blocker.string()) << "not a directory";
  EXPECT_THROW(emit_report({fake_report(AugMode::Base, clf::Family::Gbdt, {0.5})}, blocker / "sub"), IoError);
  std::filesystem::remove(blocker);
}

TEST(CompareGenerators, RowsPerFamilyAndMetric) {
  std::vector<gen::GeneratorConfig> configs;
  for (auto f : {gen::Family::Cvae, gen::Family::Gan}) {
    auto c = gen::GeneratorConfig::defaults_for(f);
    c.epochs = 3;
    configs.push_back(c);
  }
  const auto scores = compare_generators(configs, processed(0.35, 2), 2, 3);
  ASSERT_EQ(scores.size(), 2u);
  for (const auto& s : scores) {
    EXPECT_EQ(s.frechet.size(), 2u);
    EXPECT_EQ(s.wasserstein.size(), 2u);
    EXPECT_EQ(s.collapse.size(), 2u);
    for (double v : s.frechet) EXPECT_GT(v, 0.0);
  }
  const auto rows = generator_metric_rows(scores);
  EXPECT_EQ(rows.size(), 6u);
}

TEST(Ablation, MoreFeaturesHelpAtAcceptanceNoise) {
  const Dataset d = processed(1.0);
  ExperimentSpec s;
  s.mode = AugMode::Base;
  const auto six = run_experiment(s, d);
  s.mode = AugMode::FeatureAug;
  const auto eighteen = run_experiment(s, d);
  ASSERT_EQ(eighteen.trials.front().channels, 18);
  EXPECT_GE(eighteen.mean, six.mean) << "18-channel " << eighteen.mean << " vs 6-channel " << six.mean;
}
