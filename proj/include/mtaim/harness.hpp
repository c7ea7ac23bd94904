#pragma once

#include "mtaim/classifiers.hpp"
#include "mtaim/config.hpp"
#include "mtaim/genmodels.hpp"
#include "mtaim/metrics.hpp"
#include "mtaim/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtaim::harness {

enum class SplitMode { CrossSample, Loso, Kfold };
enum class AugMode { Base, DataAug, FeatureAug, Both };
enum class KinematicsSource { Generated, GroundTruth };

std::string_view to_string(SplitMode m) noexcept;
std::string_view to_string(AugMode m) noexcept;
std::string_view to_string(KinematicsSource k) noexcept;
SplitMode parse_split_mode(std::string_view s);
AugMode parse_aug_mode(std::string_view s);
KinematicsSource parse_kinematics_source(std::string_view s);

inline constexpr AugMode kAllAugModes[] = {AugMode::Base, AugMode::DataAug, AugMode::FeatureAug, AugMode::Both};

struct SplitSpec {
  SplitMode mode = SplitMode::CrossSample;
  double test_fraction = 0.25;
  bool stratified = true;
  int folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Split {
  std::vector<std::size_t> train, test;  // indices into the dataset, ascending
};

// One split for cross_sample, one per fold (or subject) otherwise.
// Throws DegenerateError for loso with fewer than 2 subjects.
std::vector<Split> make_split(const Dataset& d, const SplitSpec& spec);

struct ExperimentSpec {
  AugMode mode = AugMode::Base;
  clf::ClassifierConfig classifier;
  gen::GeneratorConfig generator;   // label-conditioned, for data augmentation
  gen::GeneratorConfig translator;  // MT-conditioned, for generated kinematics
  int synthetic_per_label = 20;
  int trials = 5;
  SplitSpec split;
  // Unset: ground truth for feature_aug, generated for both.
  std::optional<KinematicsSource> kinematics_source;
  bool include_dtft = true;  // feature modes add the DFT channels as well as kinematics
  // Generated kinematics for real training samples come from translators that did not
  // see them (k-fold over the training split), so train and test features carry the
  // same translation error. 0 or 1 translates them with the full-split translator.
  int translation_folds = 0;
  bool fixed_split = false;  // reuse the trial-0 split for every trial
  std::uint64_t master_seed = 1;

  ExperimentSpec();
  KinematicsSource effective_kinematics() const;
  bool uses_features() const { return mode == AugMode::FeatureAug || mode == AugMode::Both; }
  bool uses_synthetic() const { return mode == AugMode::DataAug || mode == AugMode::Both; }
  std::string cell_id() const;  // "<mode>/<classifier family>"
  void validate() const;
  nlohmann::json to_json() const;
  // Sections: experiment, split, classifier, generator, translator.
  static ExperimentSpec from_config(const Config& c);
};

struct TrialRecord {
  int trial = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t model_seed = 0;
  std::size_t train_real = 0;
  std::size_t train_synthetic = 0;
  std::size_t test = 0;
  int channels = 0;
  double accuracy = 0.0;
  metrics::ClassificationReport report;
};

struct ExperimentReport {
  std::string cell;
  AugMode mode = AugMode::Base;
  clf::Family classifier = clf::Family::ConvRecurrent;
  std::vector<TrialRecord> trials;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> precision, recall;  // per label, averaged over trials
  nlohmann::json config;

  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);  // summary fields only
};

// Trained generators keyed by (trial, role, config); shared between the cells of a matrix.
class GeneratorCache {
 public:
  const gen::GeneratorArtifact& get(const std::string& key, const std::function<gen::GeneratorArtifact()>& make);
  std::size_t size() const noexcept { return items_.size(); }

 private:
  std::map<std::string, gen::GeneratorArtifact> items_;
};

// Seeds. Splits depend on (master, trial) only, so every cell sees the same splits.
std::uint64_t split_seed(std::uint64_t master, int trial);
std::uint64_t model_seed(std::uint64_t master, const std::string& cell, int trial);
std::uint64_t generator_seed(std::uint64_t master, int trial);

// Train inputs that went into one trial; used by the leakage assertion.
struct TrialInputs {
  std::vector<std::string> generator_ids;
  std::vector<std::string> classifier_ids;
};

// Throws LeakageError if any test id appears among the inputs.
void assert_no_leakage(const std::vector<std::string>& test_ids, const TrialInputs& inputs);

// Stacks MT, optional DFT and optional kinematics channels; `kin` has one entry
// per sample when with_kinematics is set.
std::vector<features::FeatureTensor> build_features(const std::vector<MTSample>& mt,
                                                    const std::vector<const KinematicsSample*>& kin, bool with_dtft,
                                                    bool with_kinematics);

ExperimentReport run_experiment(const ExperimentSpec& spec, const Dataset& d, GeneratorCache* cache = nullptr,
                                std::ostream* progress = nullptr);

struct MatrixSpec {
  ExperimentSpec base;  // mode and classifier are overridden per cell
  std::vector<AugMode> modes{std::begin(kAllAugModes), std::end(kAllAugModes)};
  std::vector<clf::ClassifierConfig> classifiers;

  MatrixSpec();
  static MatrixSpec from_config(const Config& c);
};

std::vector<ExperimentReport> run_matrix(const MatrixSpec& spec, const Dataset& d, std::ostream* progress = nullptr);

// Generator comparison: each config is trained on all of `d` `repeats` times with
// fresh seeds; every run samples `per_label` series per movement and is scored
// against the real samples of the same movement.
struct GeneratorScores {
  gen::Family family = gen::Family::Cvae;
  std::vector<double> frechet, wasserstein, collapse;  // one entry per run
};
std::vector<GeneratorScores> compare_generators(const std::vector<gen::GeneratorConfig>& configs, const Dataset& d,
                                                int repeats = 5, int per_label = 20, std::uint64_t master_seed = 1,
                                                metrics::Pooling pooling = metrics::Pooling::Pooled,
                                                std::ostream* progress = nullptr);
// Rows "<family>,frechet|wasserstein|collapse,mean,std".
std::vector<metrics::MetricRow> generator_metric_rows(const std::vector<GeneratorScores>& scores);

// reports/accuracy.csv, reports/precision_recall.csv, plots/accuracy_<classifier>.svg.
// Returns the written paths. Throws IoError when the directory cannot be written.
std::vector<std::filesystem::path> emit_report(const std::vector<ExperimentReport>& reports,
                                               const std::filesystem::path& out_dir);

void write_accuracy_table(std::ostream& out, const std::vector<ExperimentReport>& reports);
struct AccuracyRow {
  std::string mode, classifier;
  double mean = 0.0, std = 0.0;
  std::vector<double> trials;
};
std::vector<AccuracyRow> read_accuracy_table(std::istream& in);

// Grouped bars (one per mode) with std whiskers and a dotted line at the base accuracy.
std::string accuracy_plot_svg(const std::vector<ExperimentReport>& reports, clf::Family classifier);

}  // namespace mtaim::harness
