#pragma once

#include "mtaim/classifiers.hpp"
#include "mtaim/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtaim::metrics {

enum class Metric { Wasserstein, Frechet };
std::string_view to_string(Metric m) noexcept;

struct DistanceResult {
  double value = 0.0;
  Metric metric = Metric::Wasserstein;
  std::uint64_t fingerprint_a = 0;
  std::uint64_t fingerprint_b = 0;
};

// 64-bit FNV-1a over the raw doubles.
std::uint64_t fingerprint(std::span<const double> values);

// Empirical W1 between two value sets. Throws ArityError on an empty operand.
DistanceResult wasserstein_1d(std::span<const double> a, std::span<const double> b);

enum class Pooling { Pooled, PerChannel };
// Series comparison: all values of all channels pooled, or the mean of per-channel distances.
DistanceResult wasserstein_series(const Matrix& a, const Matrix& b, Pooling pooling = Pooling::Pooled);

// Discrete Frechet distance; points are the columns (channels x steps).
// Throws ArityError on an empty operand, ShapeError on a channel-count mismatch.
DistanceResult frechet_distance(const Matrix& a, const Matrix& b);

struct ClassificationReport {
  int n_classes = kNumMovements;
  double accuracy = 0.0;
  std::vector<double> precision, recall;
  std::vector<bool> no_predictions;      // precision reported as 0 for these labels
  std::vector<std::vector<long>> confusion;  // [true][pred]
  std::vector<long> support;
  long total = 0;
};

ClassificationReport classification_report(const std::vector<int>& truth, const std::vector<int>& pred,
                                           int n_classes = kNumMovements);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};
MeanStd mean_std(const std::vector<double>& xs);

struct ProbeResult {
  std::vector<double> fold_accuracy;
  double mean = 0.0;
  double std = 0.0;
  double chance = 0.0;  // 1 / number of subjects
};

// Cross-validated subject identification from the strain channels alone
// (folds stratified by subject).
ProbeResult subject_leakage_probe(const Dataset& d, int folds = 5, const clf::ClassifierConfig& cfg = {},
                                  std::uint64_t seed = 1);

struct PcaResult {
  Matrix coordinates;  // n x dims
  Vector explained_ratio;
  Vector mean;
  Matrix components;  // p x dims
};

// Rows of `x` are samples.
PcaResult pca_project(const Matrix& x, int dims = 2);

// Generated-versus-real distances, averaged over every (generated, real) pair sharing a label.
struct GenerationScores {
  double frechet = 0.0;
  double wasserstein = 0.0;
  std::size_t pairs = 0;
};
GenerationScores score_generated(const std::vector<MTSample>& generated, const std::vector<MTSample>& real,
                                 Pooling pooling = Pooling::Pooled);

struct MetricRow {
  std::string model;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};
void write_metric_table(std::ostream& out, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metric_table(std::istream& in);

}  // namespace mtaim::metrics
