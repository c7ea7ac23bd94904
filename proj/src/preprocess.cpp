#include "mtaim/preprocess.hpp"

#include "mtaim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

namespace mtaim::prep {

namespace {

double median_inplace(std::vector<double>& v) {
  const auto n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double hi = *mid;
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

Matrix baseline_normalize(const RawTrial& trial) {
  const auto& r = trial.resistance;
  if (trial.baseline_r0.size() != r.rows())
    throw ShapeError("baseline has " + std::to_string(trial.baseline_r0.size()) + " entries for " +
                     std::to_string(r.rows()) + " channels");
  Matrix out(r.rows(), r.cols());
  for (Eigen::Index c = 0; c < r.rows(); ++c) {
    const double r0 = trial.baseline_r0(c);
    if (!(r0 > 0.0)) throw DegenerateError("nonpositive baseline resistance on channel mt" + std::to_string(c + 1));
    out.row(c) = (r.row(c).array() - r0) / r0;
  }
  return out;
}

Matrix restore_resistance(const Matrix& normalized, const Vector& baseline_r0) {
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index c = 0; c < normalized.rows(); ++c)
    out.row(c) = baseline_r0(c) * (normalized.row(c).array() + 1.0);
  return out;
}

RawTrial to_raw_trial(const MTSample& sample, double r0_ohms) {
  RawTrial t;
  t.baseline_r0 = Vector::Constant(sample.values.rows(), r0_ohms);
  t.resistance = restore_resistance(sample.values, t.baseline_r0);
  t.dt = sample.dt;
  return t;
}

std::vector<double> hampel_filter(std::span<const double> series, int window_half_width, double k) {
  if (window_half_width < 1) throw ConfigError("hampel_half_width", "must be >= 1");
  if (!(k > 0)) throw ConfigError("hampel_k", "must be > 0");
  std::vector<double> out(series.begin(), series.end());
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  if (n < 2) return out;

  std::vector<double> window, dev;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - window_half_width);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, i + window_half_width);
    window.assign(series.begin() + lo, series.begin() + hi + 1);
    const double med = median_inplace(window);
    dev.resize(window.size());
    for (std::size_t j = 0; j < window.size(); ++j) dev[j] = std::abs(window[j] - med);
    const double mad = median_inplace(dev);
    if (std::abs(series[static_cast<std::size_t>(i)] - med) > k * kMadScale * mad)
      out[static_cast<std::size_t>(i)] = med;
  }
  return out;
}

Matrix hampel_filter_rows(const Matrix& m, int window_half_width, double k) {
  Matrix out(m.rows(), m.cols());
  std::vector<double> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    for (Eigen::Index t = 0; t < m.cols(); ++t) row[static_cast<std::size_t>(t)] = m(c, t);
    auto f = hampel_filter(row, window_half_width, k);
    for (Eigen::Index t = 0; t < m.cols(); ++t) out(c, t) = f[static_cast<std::size_t>(t)];
  }
  return out;
}

ExclusionResult exclude_noisy_trials(const Dataset& d, double threshold_sd) {
  ExclusionResult res;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& v = d.samples[i].values;
    int worst_channel = 0;
    double worst_z = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < v.rows(); ++c) {
      const double mean = v.row(c).mean();
      const double var = (v.row(c).array() - mean).square().sum() / static_cast<double>(v.cols());
      const double sd = std::sqrt(var);
      if (!(sd > 0)) continue;
      const double z = (v.row(c).maxCoeff() - mean) / sd;
      if (z > worst_z) {
        worst_z = z;
        worst_channel = static_cast<int>(c) + 1;
      }
    }
    if (worst_z > threshold_sd)
      res.excluded.push_back({sample_id(d.samples[i]), worst_channel, worst_z});
    else
      keep.push_back(i);
  }
  res.kept = d.subset(keep);
  res.kept.complete = d.complete && res.excluded.empty();
  return res;
}

void write_exclusion_log(std::ostream& out, const std::vector<ExclusionRecord>& records) {
  out << "id,channel,max_z\n";
  for (const auto& r : records) out << r.id << ",mt" << r.channel << ',' << r.max_z << '\n';
}

std::pair<Matrix, Matrix> align_and_trim(const Matrix& mt, const Matrix& kin, double mt_start_s, double kin_start_s,
                                         double dt) {
  if (!(dt > 0)) throw ConfigError("dt", "must be positive");
  const double start = std::max(mt_start_s, kin_start_s);
  const auto drop_mt = static_cast<Eigen::Index>(std::llround((start - mt_start_s) / dt));
  const auto drop_kin = static_cast<Eigen::Index>(std::llround((start - kin_start_s) / dt));
  const Eigen::Index len = std::min(mt.cols() - drop_mt, kin.cols() - drop_kin);
  if (len <= 0) throw AlignmentError("strain and kinematics do not overlap after offset removal");
  return {mt.middleCols(drop_mt, len), kin.middleCols(drop_kin, len)};
}

Matrix resample_to(const Matrix& series, int steps) {
  if (steps < 2) throw ConfigError("target_steps", "must be >= 2");
  const Eigen::Index n = series.cols();
  if (n < 2) throw ShapeError("resampling needs at least 2 input steps");
  if (n == steps) return series;
  Matrix out(series.rows(), steps);
  const double scale = static_cast<double>(n - 1) / static_cast<double>(steps - 1);
  for (int j = 0; j < steps; ++j) {
    if (j == 0) {
      out.col(0) = series.col(0);
      continue;
    }
    if (j == steps - 1) {
      out.col(j) = series.col(n - 1);
      continue;
    }
    const double pos = j * scale;
    auto i0 = static_cast<Eigen::Index>(std::floor(pos));
    i0 = std::min(i0, n - 2);
    const double w = pos - static_cast<double>(i0);
    out.col(j) = (1.0 - w) * series.col(i0) + w * series.col(i0 + 1);
  }
  return out;
}

std::vector<Matrix> minmax_normalize(const std::vector<Matrix>& group) {
  std::vector<Matrix> out = group;
  if (group.empty()) return out;
  const Eigen::Index rows = group.front().rows();
  for (Eigen::Index c = 0; c < rows; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& m : group) {
      if (m.rows() != rows) throw ShapeError("trial group members differ in channel count");
      if (m.cols() == 0) continue;
      lo = std::min(lo, m.row(c).minCoeff());
      hi = std::max(hi, m.row(c).maxCoeff());
    }
    const double range = hi - lo;
    for (auto& m : out) {
      if (range > 0) {
        m.row(c) = (2.0 * (m.row(c).array() - lo) / range - 1.0).cwiseMax(-1.0).cwiseMin(1.0);
      } else {
        m.row(c).setZero();
      }
    }
  }
  return out;
}

void PreprocessConfig::validate() const {
  if (hampel_half_width < 1) throw ConfigError("hampel_half_width", "must be >= 1");
  if (!(hampel_k > 0)) throw ConfigError("hampel_k", "must be > 0");
  if (!(exclusion_sd > 0)) throw ConfigError("exclusion_sd", "must be > 0");
  if (target_steps < 2) throw ConfigError("target_steps", "must be >= 2");
}

PreprocessConfig PreprocessConfig::from_config(const Config& c) {
  PreprocessConfig p;
  p.apply_hampel = c.get_bool("preprocess.apply_hampel", p.apply_hampel);
  p.hampel_half_width = c.get_int("preprocess.hampel_half_width", p.hampel_half_width);
  p.hampel_k = c.get_double("preprocess.hampel_k", p.hampel_k);
  p.exclusion_sd = c.get_double("preprocess.exclusion_sd", p.exclusion_sd);
  p.target_steps = c.get_int("preprocess.target_steps", p.target_steps);
  p.validate();
  return p;
}

PreprocessResult preprocess_dataset(const Dataset& d, const PreprocessConfig& cfg) {
  cfg.validate();
  Dataset filtered = d;
  if (cfg.apply_hampel)
    for (auto& s : filtered.samples) s.values = hampel_filter_rows(s.values, cfg.hampel_half_width, cfg.hampel_k);

  auto excl = exclude_noisy_trials(filtered, cfg.exclusion_sd);
  Dataset out = std::move(excl.kept);

  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& s = out.samples[i];
    if (out.has_kinematics() && out.kinematics[i]) {
      auto& k = *out.kinematics[i];
      auto [mt, kin] = align_and_trim(s.values, k.values, 0.0, 0.0, s.dt);
      s.values = resample_to(mt, cfg.target_steps);
      k.values = resample_to(kin, cfg.target_steps);
    } else {
      s.values = resample_to(s.values, cfg.target_steps);
    }
  }

  // Normalization groups: all repetitions of one movement trial of one subject.
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < out.size(); ++i)
    groups[{out.samples[i].subject_id, to_index(out.samples[i].label)}].push_back(i);
  for (const auto& [key, members] : groups) {
    std::vector<Matrix> mt;
    for (auto i : members) mt.push_back(out.samples[i].values);
    auto norm = minmax_normalize(mt);
    for (std::size_t j = 0; j < members.size(); ++j) out.samples[members[j]].values = std::move(norm[j]);

    if (!out.has_kinematics()) continue;
    std::vector<Matrix> kin;
    std::vector<std::size_t> with_kin;
    for (auto i : members)
      if (out.kinematics[i]) {
        kin.push_back(out.kinematics[i]->values);
        with_kin.push_back(i);
      }
    auto knorm = minmax_normalize(kin);
    for (std::size_t j = 0; j < with_kin.size(); ++j) out.kinematics[with_kin[j]]->values = std::move(knorm[j]);
  }
  out.preprocessed = true;
  return {std::move(out), std::move(excl.excluded)};
}

}  // namespace mtaim::prep
