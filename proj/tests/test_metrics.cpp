#include <gtest/gtest.h>

#include "mtaim/errors.hpp"
#include "mtaim/metrics.hpp"
#include "mtaim/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

using namespace mtaim;
using namespace mtaim::metrics;

namespace {

// Integral of |F_a(x) - F_b(x)| over the merged support; independent of the quantile walk.
double w1_cdf_oracle(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> xs(a);
  xs.insert(xs.end(), b.begin(), b.end());
  std::sort(xs.begin(), xs.end());
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double x = xs[k];
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) / b.size();
    s += std::abs(fa - fb) * (xs[k + 1] - x);
  }
  return s;
}

// Minimum over every monotone coupling of the maximum matched distance.
double frechet_brute(const Matrix& a, const Matrix& b) {
  const Eigen::Index n = a.cols(), m = b.cols();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(Eigen::Index, Eigen::Index, double)> walk = [&](Eigen::Index i, Eigen::Index j, double worst) {
    worst = std::max(worst, (a.col(i) - b.col(j)).norm());
    if (worst >= best) return;
    if (i == n - 1 && j == m - 1) {
      best = worst;
      return;
    }
    if (i + 1 < n) walk(i + 1, j, worst);
    if (j + 1 < m) walk(i, j + 1, worst);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, worst);
  };
  walk(0, 0, 0.0);
  return best;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(Wasserstein, IdenticalSetsAreZero) {
  const std::vector<double> a{0.3, -1.0, 2.5, 2.5};
  EXPECT_EQ(wasserstein_1d(a, a).value, 0.0);
}

TEST(Wasserstein, TwoPointExample) {
  const std::vector<double> a{0, 1}, b{1, 2};
  EXPECT_NEAR(wasserstein_1d(a, b).value, 1.0, 1e-12);
}

TEST(Wasserstein, ShiftGivesAbsoluteOffset) {
  std::mt19937_64 rng(3);
  const auto a = random_values(37, rng);
  for (double c : {-2.5, 0.0, 0.75}) {
    auto b = a;
    for (auto& x : b) x += c;
    EXPECT_NEAR(wasserstein_1d(a, b).value, std::abs(c), 1e-12);
  }
}

TEST(Wasserstein, UnequalSizesMatchCdfIntegral) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_values(static_cast<std::size_t>(size(rng)), rng);
    const auto b = random_values(static_cast<std::size_t>(size(rng)), rng);
    EXPECT_NEAR(wasserstein_1d(a, b).value, w1_cdf_oracle(a, b), 1e-9);
  }
}

TEST(Wasserstein, EmptyOperandIsArityError) {
  const std::vector<double> a{1.0}, empty;
  EXPECT_THROW(wasserstein_1d(a, empty), ArityError);
  EXPECT_THROW(wasserstein_1d(empty, a), ArityError);
}

TEST(Wasserstein, MetricProperties) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_values(12, rng), b = random_values(9, rng), c = random_values(15, rng);
    const double ab = wasserstein_1d(a, b).value, ba = wasserstein_1d(b, a).value;
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(ab, wasserstein_1d(a, c).value + wasserstein_1d(c, b).value + 1e-9);
    auto as = a, bs = b;
    for (auto& x : as) x += 4.0;
    for (auto& x : bs) x += 4.0;
    EXPECT_NEAR(wasserstein_1d(as, bs).value, ab, 1e-9);
  }
}

TEST(Wasserstein, PerChannelAveragesRows) {
  std::mt19937_64 rng(8);
  const Matrix a = random_matrix(3, 20, rng), b = random_matrix(3, 20, rng);
  double expect = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> ra(a.row(c).begin(), a.row(c).end()), rb(b.row(c).begin(), b.row(c).end());
    expect += w1_cdf_oracle(ra, rb) / 3.0;
  }
  EXPECT_NEAR(wasserstein_series(a, b, Pooling::PerChannel).value, expect, 1e-9);
  std::vector<double> pa(a.data(), a.data() + a.size()), pb(b.data(), b.data() + b.size());
  EXPECT_NEAR(wasserstein_series(a, b, Pooling::Pooled).value, w1_cdf_oracle(pa, pb), 1e-9);
}

TEST(Wasserstein, FingerprintsIdentifyOperands) {
  const std::vector<double> a{1, 2, 3}, b{1, 2, 4};
  const auto r = wasserstein_1d(a, b);
  EXPECT_EQ(r.metric, Metric::Wasserstein);
  EXPECT_EQ(r.fingerprint_a, fingerprint(a));
  EXPECT_NE(r.fingerprint_a, r.fingerprint_b);
}

TEST(Frechet, IdenticalSequencesAreZero) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 8, rng);
  EXPECT_EQ(frechet_distance(a, a).value, 0.0);
}

TEST(Frechet, SinglePointsGiveEuclideanDistance) {
  Matrix a(2, 1), b(2, 1);
  a << 0, 0;
  b << 3, 4;
  EXPECT_NEAR(frechet_distance(a, b).value, 5.0, 1e-12);
}

TEST(Frechet, ScalarExample) {
  EXPECT_NEAR(frechet_distance(row({0, 1, 0}), row({0, 2, 0})).value, 1.0, 1e-12);
}

TEST(Frechet, MatchesBruteForceOnSmallInstances) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> len(1, 6), dim(1, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = dim(rng);
    const Matrix a = random_matrix(k, len(rng), rng), b = random_matrix(k, len(rng), rng);
    EXPECT_NEAR(frechet_distance(a, b).value, frechet_brute(a, b), 1e-9);
  }
}

TEST(Frechet, SymmetricAndBoundedByEndpoints) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = random_matrix(2, 10, rng), b = random_matrix(2, 7, rng);
    const double f = frechet_distance(a, b).value;
    EXPECT_NEAR(f, frechet_distance(b, a).value, 1e-12);
    EXPECT_GE(f + 1e-12, (a.col(0) - b.col(0)).norm());
    EXPECT_GE(f + 1e-12, (a.col(9) - b.col(6)).norm());
  }
}

TEST(Frechet, ZeroForRepeatedPoints) {
  // a zero-cost coupling exists when one sequence only repeats points of the other
  EXPECT_EQ(frechet_distance(row({1, 2, 3}), row({1, 1, 2, 3, 3})).value, 0.0);
  EXPECT_GT(frechet_distance(row({1, 2, 3}), row({1, 3, 2})).value, 0.0);
}

TEST(Frechet, Errors) {
  EXPECT_THROW(frechet_distance(Matrix(2, 3), Matrix(3, 3)), ShapeError);
  EXPECT_THROW(frechet_distance(Matrix(2, 0), Matrix(2, 3)), ArityError);
}

TEST(ClassificationReport, PerfectPredictions) {
  const std::vector<int> y{0, 1, 2, 3, 4, 5, 0, 1};
  const auto r = classification_report(y, y);
  EXPECT_EQ(r.accuracy, 1.0);
  for (int c = 0; c < 6; ++c) {
    EXPECT_EQ(r.precision[c], 1.0);
    EXPECT_EQ(r.recall[c], 1.0);
  }
}

TEST(ClassificationReport, ThreeSampleCase) {
  const auto r = classification_report({0, 0, 1}, {0, 1, 1}, 2);
  EXPECT_NEAR(r.accuracy, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.precision[0], 1.0);
  EXPECT_EQ(r.recall[0], 0.5);
  EXPECT_EQ(r.precision[1], 0.5);
  EXPECT_EQ(r.recall[1], 1.0);
  EXPECT_EQ(r.confusion[0][1], 1);
}

TEST(ClassificationReport, UnpredictedLabelIsFlagged) {
  const auto r = classification_report({0, 1, 2}, {0, 0, 2}, 3);
  EXPECT_TRUE(r.no_predictions[1]);
  EXPECT_EQ(r.precision[1], 0.0);
  EXPECT_FALSE(r.no_predictions[0]);
}

TEST(ClassificationReport, RandomPredictionsNearChance) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> u(0, 5);
  std::vector<int> y, p;
  for (int i = 0; i < 600; ++i) {
    y.push_back(i % 6);
    p.push_back(u(rng));
  }
  const auto r = classification_report(y, p);
  EXPECT_NEAR(r.accuracy, 1.0 / 6.0, 0.05);
  long total = 0, trace = 0;
  for (int t = 0; t < 6; ++t) {
    long rowsum = 0;
    for (int q = 0; q < 6; ++q) rowsum += r.confusion[t][q];
    EXPECT_EQ(rowsum, r.support[t]);
    total += rowsum;
    trace += r.confusion[t][t];
  }
  EXPECT_EQ(total, 600);
  EXPECT_EQ(r.accuracy, static_cast<double>(trace) / 600.0);
}

TEST(ClassificationReport, Errors) {
  EXPECT_THROW(classification_report({0, 1}, {0}), ArityError);
  EXPECT_THROW(classification_report({}, {}), ArityError);
  EXPECT_THROW(classification_report({0, 7}, {0, 1}), DataError);
}

TEST(MeanStd, SampleStandardDeviation) {
  const auto r = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(r.mean, 2.5);
  EXPECT_NEAR(r.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(mean_std({0.7}).std, 0.0);
}

TEST(Pca, LineIsOneComponent) {
  Matrix x(50, 2);
  for (int i = 0; i < 50; ++i) x.row(i) << i * 0.3 - 2.0, -1.5 * (i * 0.3 - 2.0) + 4.0;
  const auto r = pca_project(x, 2);
  EXPECT_GE(r.explained_ratio(0), 1.0 - 1e-9);
}

TEST(Pca, IsotropicCloudSpreadsVariance) {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(1000, 3, rng);
  const auto r = pca_project(x, 3);
  EXPECT_LT(r.explained_ratio.maxCoeff() - r.explained_ratio.minCoeff(), 0.2);
  EXPECT_LE(r.explained_ratio.sum(), 1.0 + 1e-12);
  for (int k = 0; k + 1 < 3; ++k) EXPECT_GE(r.explained_ratio(k), r.explained_ratio(k + 1));
  for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(r.coordinates.col(k).mean()), 1e-9);
}

TEST(Pca, TooFewSamples) {
  EXPECT_THROW(pca_project(Matrix::Ones(1, 4), 2), ArityError);
}

TEST(SubjectProbe, SingleSubjectIsDegenerate) {
  synth::SimulatorConfig c;
  c.n_subjects = 1;
  c.steps = 40;
  EXPECT_THROW(subject_leakage_probe(synth::generate_dataset(c)), DegenerateError);
}

TEST(SubjectProbe, FindsPlantedLeak) {
  synth::SimulatorConfig c;
  c.n_subjects = 4;
  c.steps = 60;
  c.noise_sigma = 0.3;
  auto d = synth::generate_dataset(c);
  const auto subjects = d.subjects();
  for (auto& s : d.samples) {
    const auto k = std::lower_bound(subjects.begin(), subjects.end(), s.subject_id) - subjects.begin();
    s.values.row(5).setConstant(0.5 * static_cast<double>(k) - 0.75);
  }
  const auto r = subject_leakage_probe(d, 3, {}, 4);
  EXPECT_EQ(r.fold_accuracy.size(), 3u);
  EXPECT_DOUBLE_EQ(r.chance, 0.25);
  EXPECT_GE(r.mean, 0.9);
}

TEST(ScoreGenerated, CopyOfRealScoresZero) {
  synth::SimulatorConfig c;
  c.n_subjects = 2;
  c.steps = 30;
  const auto d = synth::generate_dataset(c);
  std::vector<MTSample> real{d.samples[0]};
  const auto s = score_generated(real, real);
  EXPECT_EQ(s.pairs, 1u);
  EXPECT_EQ(s.frechet, 0.0);
  EXPECT_EQ(s.wasserstein, 0.0);
  std::vector<MTSample> other;
  for (const auto& x : d.samples)
    if (x.label != real[0].label) other.push_back(x);
  EXPECT_THROW(score_generated(real, other), ArityError);
}

TEST(MetricTable, RoundTrip) {
  const std::vector<MetricRow> rows{{"cvae", "frechet", 1.0 / 3.0, 0.1}, {"gan", "wasserstein", 2e-7, 0.0}};
  std::stringstream ss;
  write_metric_table(ss, rows);
  const auto back = read_metric_table(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].model, rows[i].model);
    EXPECT_EQ(back[i].metric, rows[i].metric);
    EXPECT_EQ(back[i].mean, rows[i].mean);
    EXPECT_EQ(back[i].std, rows[i].std);
  }
  std::stringstream bad("model,value\n");
  EXPECT_THROW(read_metric_table(bad), DataError);
}
