#include "mtaim/synthdata.hpp"

#include "mtaim/errors.hpp"
#include "mtaim/random.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

namespace mtaim::synth {

namespace {

// Sensor layout: 1/2 upper left/right, 3/4 middle, 5/6 lower.
constexpr std::array<std::array<double, kNumChannels>, kNumMovements> kStrainAmplitude = {{
    {-0.30, -0.30, -0.45, -0.45, -0.60, -0.60},  // Extension: compression everywhere
    {0.35, 0.35, 0.65, 0.65, 1.00, 1.00},        // Flexion: tension, lower sensors strongest
    {-0.40, 0.45, -0.50, 0.55, -0.35, 0.40},     // LateralBendLeft
    {0.45, -0.40, 0.55, -0.50, 0.40, -0.35},     // LateralBendRight
    {0.30, -0.15, 0.10, -0.10, -0.20, 0.35},     // RotationLeft: diagonal pattern
    {-0.15, 0.30, -0.10, 0.10, 0.35, -0.20},     // RotationRight
}};

Eigen::Matrix<double, kNumChannels, kNumChannels> build_kinematics_map() {
  // Rows: LP x/y/z then UL x/y/z. Sagittal (x) angles follow the left+right sums,
  // lateral (y) and axial (z) angles follow the left-right differences.
  Eigen::Matrix<double, 3, kNumChannels> sums = Eigen::Matrix<double, 3, kNumChannels>::Zero();
  Eigen::Matrix<double, 3, kNumChannels> diffs = Eigen::Matrix<double, 3, kNumChannels>::Zero();
  for (int j = 0; j < 3; ++j) {
    sums(j, 2 * j) = 1.0;
    sums(j, 2 * j + 1) = 1.0;
    diffs(j, 2 * j) = 1.0;
    diffs(j, 2 * j + 1) = -1.0;
  }
  Eigen::Matrix<double, kNumChannels, kNumChannels> m;
  m.row(0) = -10.0 * (0.2 * sums.row(0) + 0.3 * sums.row(1) + 0.5 * sums.row(2));
  m.row(1) = 8.0 * (0.2 * diffs.row(0) + 0.3 * diffs.row(1) + 0.5 * diffs.row(2));
  m.row(2) = 12.0 * (0.5 * diffs.row(0) - 0.5 * diffs.row(2));
  m.row(3) = -8.0 * (0.5 * sums.row(0) + 0.3 * sums.row(1) + 0.2 * sums.row(2));
  m.row(4) = 6.0 * (0.5 * diffs.row(0) + 0.3 * diffs.row(1) + 0.2 * diffs.row(2));
  m.row(5) = 10.0 * (0.3 * diffs.row(0) - 0.7 * diffs.row(2));
  return m;
}

bool affine_in_shared_profile(const Matrix& v) {
  if (v.cols() < 3) return true;
  Matrix aug(v.rows() + 1, v.cols());
  aug.topRows(v.rows()) = v;
  aug.row(v.rows()).setOnes();
  Eigen::JacobiSVD<Matrix> svd(aug);
  const auto& s = svd.singularValues();
  return s.size() < 3 || s(2) <= 1e-9 * s(0);
}

}  // namespace

void SimulatorConfig::validate() const {
  if (n_subjects < 1) throw ConfigError("n_subjects", "must be >= 1");
  if (reps_per_movement < 1 || reps_per_movement > 3) throw ConfigError("reps_per_movement", "must be in 1..3");
  if (steps < 2) throw ConfigError("steps", "must be >= 2");
  if (!(dt > 0)) throw ConfigError("dt", "must be positive");
  if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma", "must be >= 0");
  if (!(spike_rate >= 0 && spike_rate < 1)) throw ConfigError("spike_rate", "must be in [0, 1)");
  if (!(gain_min > 0 && gain_max >= gain_min)) throw ConfigError("subject_gain_range", "need 0 < min <= max");
  if (!(kinematics_noise_sigma >= 0)) throw ConfigError("kinematics_noise_sigma", "must be >= 0");
}

SimulatorConfig SimulatorConfig::from_config(const Config& c) {
  SimulatorConfig s;
  s.n_subjects = c.get_int("synth.n_subjects", s.n_subjects);
  s.reps_per_movement = c.get_int("synth.reps_per_movement", s.reps_per_movement);
  s.steps = c.get_int("synth.steps", s.steps);
  s.dt = c.get_double("synth.dt", s.dt);
  s.noise_sigma = c.get_double("synth.noise_sigma", s.noise_sigma);
  s.spike_rate = c.get_double("synth.spike_rate", s.spike_rate);
  s.gain_min = c.get_double("synth.gain_min", s.gain_min);
  s.gain_max = c.get_double("synth.gain_max", s.gain_max);
  s.kinematics_noise_sigma = c.get_double("synth.kinematics_noise_sigma", s.kinematics_noise_sigma);
  s.seed = static_cast<std::uint64_t>(c.get_double("synth.seed", static_cast<double>(s.seed)));
  s.validate();
  return s;
}

const Eigen::Matrix<double, kNumChannels, kNumChannels>& kinematics_map() {
  static const auto m = build_kinematics_map();
  return m;
}

MovementSignature signature(MovementLabel m) {
  MovementSignature sig;
  sig.strain = kStrainAmplitude[static_cast<std::size_t>(to_index(m))];
  Eigen::Map<const Eigen::Matrix<double, kNumChannels, 1>> a(sig.strain.data());
  Eigen::Matrix<double, kNumChannels, 1> k = kinematics_map() * a;
  for (int c = 0; c < kNumChannels; ++c) sig.kinematics_deg[static_cast<std::size_t>(c)] = k(c);
  return sig;
}

double envelope(int t, int steps) {
  const double u = steps > 1 ? static_cast<double>(t) / (steps - 1) : 0.0;
  constexpr double onset = 0.15, end = 0.85;
  if (u <= onset || u >= end) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (u - onset) / (end - onset)));
}

Matrix strain_template(MovementLabel m, double gain, int steps) {
  const auto sig = signature(m);
  Matrix out(kNumChannels, steps);
  for (int t = 0; t < steps; ++t) {
    const double e = envelope(t, steps);
    for (int c = 0; c < kNumChannels; ++c) out(c, t) = gain * sig.strain[static_cast<std::size_t>(c)] * e;
  }
  return out;
}

Matrix kinematics_template(MovementLabel m, double gain, int steps) {
  const auto sig = signature(m);
  Matrix out(kNumChannels, steps);
  for (int t = 0; t < steps; ++t) {
    const double e = envelope(t, steps);
    for (int c = 0; c < kNumChannels; ++c) out(c, t) = gain * sig.kinematics_deg[static_cast<std::size_t>(c)] * e;
  }
  return out;
}

Matrix mirror_strain(const Matrix& values) {
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c + 1 < values.rows(); c += 2) {
    out.row(c) = values.row(c + 1);
    out.row(c + 1) = values.row(c);
  }
  return out;
}

Matrix mirror_kinematics(const Matrix& values) {
  Matrix out = values;
  for (Eigen::Index c : {1, 2, 4, 5}) out.row(c) = -values.row(c);
  return out;
}

MovementLabel mirror_label(MovementLabel m) noexcept {
  switch (m) {
    case MovementLabel::LateralBendLeft: return MovementLabel::LateralBendRight;
    case MovementLabel::LateralBendRight: return MovementLabel::LateralBendLeft;
    case MovementLabel::RotationLeft: return MovementLabel::RotationRight;
    case MovementLabel::RotationRight: return MovementLabel::RotationLeft;
    default: return m;
  }
}

double subject_gain(const SimulatorConfig& cfg, int subject_index) {
  Rng rng(derive_seed(cfg.seed, "subject-gain", static_cast<std::uint64_t>(subject_index)));
  std::uniform_real_distribution<double> u(cfg.gain_min, cfg.gain_max);
  return cfg.gain_max > cfg.gain_min ? u(rng) : cfg.gain_min;
}

std::string subject_name(int subject_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "S%02d", subject_index + 1);
  return buf;
}

Dataset generate_dataset(const SimulatorConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.seed = cfg.seed;
  for (int s = 0; s < cfg.n_subjects; ++s) {
    const double gain = subject_gain(cfg, s);
    for (auto m : kAllMovements) {
      for (int r = 1; r <= cfg.reps_per_movement; ++r) {
        Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(to_index(m)),
                                       static_cast<std::uint64_t>(r)}));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        MTSample x;
        x.subject_id = subject_name(s);
        x.repetition = r;
        x.label = m;
        x.dt = cfg.dt;
        x.provenance = Provenance::SyntheticGroundTruth;
        x.values = strain_template(m, gain, cfg.steps);
        if (cfg.noise_sigma > 0 || cfg.spike_rate > 0) {
          for (int t = 0; t < cfg.steps; ++t) {
            for (int c = 0; c < kNumChannels; ++c) {
              x.values(c, t) += gain * cfg.noise_sigma * normal(rng);
              if (cfg.spike_rate > 0 && unit(rng) < cfg.spike_rate) {
                const double sigma = cfg.noise_sigma > 0 ? cfg.noise_sigma : 0.05;
                const double amp = gain * sigma * (5.0 + 10.0 * unit(rng));
                x.values(c, t) += unit(rng) < 0.5 ? -amp : amp;
              }
            }
          }
        }

        KinematicsSample k;
        k.provenance = KinematicsProvenance::Measured;
        k.values = kinematics_template(m, gain, cfg.steps);
        if (cfg.kinematics_noise_sigma > 0) {
          for (int t = 0; t < cfg.steps; ++t)
            for (int c = 0; c < kNumChannels; ++c) k.values(c, t) += gain * cfg.kinematics_noise_sigma * normal(rng);
        }
        d.samples.push_back(std::move(x));
        d.kinematics.emplace_back(std::move(k));
      }
    }
  }
  return d;
}

bool mirror_check(const Dataset& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!affine_in_shared_profile(d.samples[i].values))
      throw NotApplicableError("sample " + sample_id(d.samples[i]) + " is noisy; mirror check needs noise-free data");
  }
  std::map<std::tuple<std::string, int, int>, std::size_t> index;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples[i];
    index[{s.subject_id, to_index(s.label), s.repetition}] = i;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples[i];
    if (s.label != MovementLabel::LateralBendLeft && s.label != MovementLabel::RotationLeft) continue;
    auto it = index.find({s.subject_id, to_index(mirror_label(s.label)), s.repetition});
    if (it == index.end()) return false;
    const auto& partner = d.samples[it->second];
    if (partner.values.cols() != s.values.cols()) return false;
    if ((mirror_strain(partner.values) - s.values).cwiseAbs().maxCoeff() > 1e-12) return false;
    if (d.has_kinematics() && d.kinematics[i] && d.kinematics[it->second]) {
      const auto& a = d.kinematics[i]->values;
      const auto& b = d.kinematics[it->second]->values;
      if (a.cols() != b.cols() || (mirror_kinematics(b) - a).cwiseAbs().maxCoeff() > 1e-12) return false;
    }
  }
  return true;
}

}  // namespace mtaim::synth
