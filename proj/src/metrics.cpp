#include "mtaim/metrics.hpp"

#include "mtaim/errors.hpp"
#include "mtaim/random.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mtaim::metrics {

std::string_view to_string(Metric m) noexcept {
  return m == Metric::Wasserstein ? "wasserstein" : "frechet";
}

std::uint64_t fingerprint(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* b = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::span<const double> span_of(const Matrix& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

double w1_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size();
  if (n == m) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(n);
  }
  // both quantile functions are step functions; walk the merged breakpoints i/n, j/m
  double s = 0.0, u = 0.0;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    const double next_a = static_cast<double>(i + 1) / static_cast<double>(n);
    const double next_b = static_cast<double>(j + 1) / static_cast<double>(m);
    const double next = std::min(next_a, next_b);
    s += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    // exact rational comparison avoids drift at shared breakpoints
    const std::size_t lhs = (i + 1) * m, rhs = (j + 1) * n;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return s;
}

}  // namespace

DistanceResult wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ArityError("wasserstein_1d: empty operand");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return {w1_sorted(sa, sb), Metric::Wasserstein, fingerprint(a), fingerprint(b)};
}

DistanceResult wasserstein_series(const Matrix& a, const Matrix& b, Pooling pooling) {
  if (pooling == Pooling::Pooled) return wasserstein_1d(span_of(a), span_of(b));
  if (a.rows() != b.rows()) throw ShapeError("wasserstein_series: channel counts differ");
  if (a.rows() == 0) throw ArityError("wasserstein_series: empty operand");
  double total = 0.0;
  for (Eigen::Index c = 0; c < a.rows(); ++c) {
    const Vector ra = a.row(c).transpose(), rb = b.row(c).transpose();
    total += wasserstein_1d(span_of(ra), span_of(rb)).value;
  }
  return {total / static_cast<double>(a.rows()), Metric::Wasserstein, fingerprint(span_of(a)), fingerprint(span_of(b))};
}

DistanceResult frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() == 0 || b.cols() == 0) throw ArityError("frechet_distance: empty operand");
  if (a.rows() != b.rows())
    throw ShapeError("frechet_distance: point dimensions " + std::to_string(a.rows()) + " and " +
                     std::to_string(b.rows()) + " differ");
  const Eigen::Index n = a.cols(), m = b.cols();
  std::vector<double> prev(static_cast<std::size_t>(m)), cur(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = (a.col(i) - b.col(j)).norm();
      const auto J = static_cast<std::size_t>(j);
      double best;
      if (i == 0 && j == 0) best = 0.0;
      else if (i == 0) best = cur[J - 1];
      else if (j == 0) best = prev[J];
      else best = std::min({prev[J], cur[J - 1], prev[J - 1]});
      cur[J] = std::max(d, best);
    }
    std::swap(prev, cur);
  }
  return {prev.back(), Metric::Frechet, fingerprint(span_of(a)), fingerprint(span_of(b))};
}

ClassificationReport classification_report(const std::vector<int>& truth, const std::vector<int>& pred, int n_classes) {
  if (truth.size() != pred.size()) throw ArityError("classification_report: label vectors differ in length");
  if (truth.empty()) throw ArityError("classification_report: no labels");
  if (n_classes < 1) throw ConfigError("n_classes", "must be >= 1");
  const auto k = static_cast<std::size_t>(n_classes);
  ClassificationReport r;
  r.n_classes = n_classes;
  r.confusion.assign(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes)
      throw DataError("classification_report: label out of range at index " + std::to_string(i));
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  r.total = static_cast<long>(truth.size());
  long trace = 0;
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.no_predictions.assign(k, false);
  r.support.assign(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    trace += r.confusion[c][c];
    long predicted = 0;
    for (std::size_t t = 0; t < k; ++t) predicted += r.confusion[t][c];
    r.support[c] = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), 0L);
    if (predicted == 0)
      r.no_predictions[c] = true;
    else
      r.precision[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(predicted);
    if (r.support[c] > 0) r.recall[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(r.support[c]);
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  return r;
}

MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, xs.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0};
}

ProbeResult subject_leakage_probe(const Dataset& d, int folds, const clf::ClassifierConfig& cfg, std::uint64_t seed) {
  const auto subjects = d.subjects();
  if (subjects.size() < 2) throw DegenerateError("subject probe needs at least 2 subjects");
  std::vector<Matrix> x;
  std::vector<int> y;
  for (const auto& s : d.samples) {
    x.push_back(s.values);
    y.push_back(static_cast<int>(std::lower_bound(subjects.begin(), subjects.end(), s.subject_id) - subjects.begin()));
  }
  const auto fold_of = clf::stratified_folds(y, folds, seed);
  clf::InputManifest manifest{features::manifest_for(false, false), d.samples.front().steps()};

  ProbeResult r;
  r.chance = 1.0 / static_cast<double>(subjects.size());
  for (int k = 0; k < folds; ++k) {
    std::vector<Matrix> xtr, xte;
    std::vector<int> ytr, yte;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (fold_of[i] == k) {
        xte.push_back(x[i]);
        yte.push_back(y[i]);
      } else {
        xtr.push_back(x[i]);
        ytr.push_back(y[i]);
      }
    }
    if (xte.empty()) continue;
    clf::ClassifierConfig c = cfg;
    c.seed = derive_seed(seed, "probe", static_cast<std::uint64_t>(k));
    const auto model = clf::train_classifier(c, xtr, ytr, static_cast<int>(subjects.size()), manifest);
    const auto preds = clf::predict_batch(model, xte);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < yte.size(); ++i) hit += preds[i].label == yte[i];
    r.fold_accuracy.push_back(static_cast<double>(hit) / static_cast<double>(yte.size()));
  }
  const auto ms = mean_std(r.fold_accuracy);
  r.mean = ms.mean;
  r.std = ms.std;
  return r;
}

PcaResult pca_project(const Matrix& x, int dims) {
  if (dims < 1) throw ConfigError("dims", "must be >= 1");
  if (x.rows() < dims) throw ArityError("pca_project: fewer samples than dimensions");
  if (x.cols() < dims) throw ArityError("pca_project: fewer features than dimensions");
  PcaResult r;
  r.mean = x.colwise().mean().transpose();
  const Matrix centred = x.rowwise() - r.mean.transpose();
  Eigen::BDCSVD<Matrix> svd(centred, Eigen::ComputeThinV);
  const Vector s2 = svd.singularValues().array().square();
  const double total = s2.sum();
  r.components = svd.matrixV().leftCols(dims);
  r.coordinates = centred * r.components;
  r.explained_ratio = total > 0 ? Vector(s2.head(dims) / total) : Vector(Vector::Zero(dims));
  return r;
}

GenerationScores score_generated(const std::vector<MTSample>& generated, const std::vector<MTSample>& real,
                                 Pooling pooling) {
  GenerationScores s;
  for (const auto& g : generated)
    for (const auto& r : real) {
      if (g.label != r.label) continue;
      s.frechet += frechet_distance(g.values, r.values).value;
      s.wasserstein += wasserstein_series(g.values, r.values, pooling).value;
      ++s.pairs;
    }
  if (s.pairs == 0) throw ArityError("score_generated: no generated/real pair shares a label");
  s.frechet /= static_cast<double>(s.pairs);
  s.wasserstein /= static_cast<double>(s.pairs);
  return s;
}

void write_metric_table(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "model,metric,mean,std\n";
  out << std::setprecision(17);
  for (const auto& r : rows) out << r.model << ',' << r.metric << ',' << r.mean << ',' << r.std << '\n';
}

std::vector<MetricRow> read_metric_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "model,metric,mean,std") throw DataError("metric table: bad header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string mean, sd;
    if (!std::getline(ss, r.model, ',') || !std::getline(ss, r.metric, ',') || !std::getline(ss, mean, ',') ||
        !std::getline(ss, sd))
      throw DataError("metric table: malformed row '" + line + "'");
    r.mean = std::stod(mean);
    r.std = std::stod(sd);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mtaim::metrics
