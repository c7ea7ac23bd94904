#include <gtest/gtest.h>

#include "mtaim/classifiers.hpp"
#include "mtaim/errors.hpp"
#include "mtaim/features.hpp"
#include "mtaim/genmodels.hpp"
#include "mtaim/preprocess.hpp"
#include "mtaim/synthdata.hpp"

#include <cmath>
#include <random>

using namespace mtaim;
using namespace mtaim::gen;

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

Dataset repeated(const Dataset& d, std::size_t index, int copies) {
  Dataset out;
  for (int i = 0; i < copies; ++i) {
    out.samples.push_back(d.samples[index]);
    if (d.has_kinematics()) out.kinematics.push_back(d.kinematics[index]);
  }
  out.preprocessed = d.preprocessed;
  out.complete = false;
  return out;
}

double mean_pairwise(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double sum = 0.0;
  for (const auto& x : a)
    for (const auto& y : b) sum += (x - y).norm();
  return sum / static_cast<double>(a.size() * b.size());
}

}  // namespace

TEST(GeneratorConfig, ReferenceArchitecturesAreDefaults) {
  const auto cvae = GeneratorConfig::defaults_for(Family::Cvae);
  EXPECT_EQ(cvae.decoder_layers, 4);
  EXPECT_EQ(cvae.hidden_dim, 12);
  EXPECT_NO_THROW(cvae.validate());
  const auto diff = GeneratorConfig::defaults_for(Family::Diffusion);
  EXPECT_EQ(diff.sampling_steps, 500);
  EXPECT_EQ(diff.hidden_dim, 64);
  EXPECT_EQ(diff.decoder_layers, 12);
  const auto gan = GeneratorConfig::defaults_for(Family::Gan);
  EXPECT_EQ(gan.latent_dim, 12);
  EXPECT_EQ(gan.embedding_layers, 3);
  EXPECT_EQ(gan.generator_advantage, 2);
}

TEST(GeneratorConfig, RejectsInvalidFields) {
  auto c = GeneratorConfig::defaults_for(Family::Cvae);
  c.hidden_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = GeneratorConfig::defaults_for(Family::Diffusion);
  c.sampling_steps = 0;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "sampling_steps");
  }
  EXPECT_THROW(parse_family("vae"), ConfigError);
}

TEST(GeneratorConfig, JsonRoundTrip) {
  auto c = GeneratorConfig::defaults_for(Family::Gan, ConditioningMode::MtSequence);
  c.seed = 99;
  const auto back = GeneratorConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.mode, ConditioningMode::MtSequence);
}

TEST(Cvae, AnalyticGradientMatchesFiniteDifferences) {
  synth::SimulatorConfig sim;
  sim.n_subjects = 1;
  sim.steps = 16;
  const Dataset d = synth::generate_dataset(sim);
  auto cfg = GeneratorConfig::defaults_for(Family::Cvae);
  cfg.hidden_dim = 4;
  cfg.latent_dim = 4;
  cfg.basis_functions = 6;
  Dataset batch = d.subset({0, 4, 9, 13});
  auto a = init_generator(cfg, batch);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Matrix eps(4, cfg.latent_dim);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);

  a.params.zero_grad();
  cvae_objective(a, batch, eps, true);

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  std::vector<std::size_t> sizes;
  for (auto& p : a.params) sizes.push_back(static_cast<std::size_t>(p.value.size()));
  std::discrete_distribution<std::size_t> pick_param(sizes.begin(), sizes.end());
  for (int k = 0; k < 50; ++k) {
    const std::size_t p = pick_param(rng);
    std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(sizes[p]) - 1);
    coords.emplace_back(p, pick(rng));
  }
  constexpr double h = 1e-5;
  int checked = 0;
  for (auto [pi, i] : coords) {
    auto& p = *(a.params.begin() + static_cast<std::ptrdiff_t>(pi));
    const double orig = p.value.data()[i];
    p.value.data()[i] = orig + h;
    const double up = cvae_objective(a, batch, eps, false);
    p.value.data()[i] = orig - h;
    const double down = cvae_objective(a, batch, eps, false);
    p.value.data()[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double analytic = p.grad.data()[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    EXPECT_LT(std::abs(analytic - numeric) / denom, 1e-4) << p.name << "[" << i << "]";
    ++checked;
  }
  EXPECT_EQ(checked, 50);
}

class OverfitOneSample : public ::testing::TestWithParam<Family> {};

TEST_P(OverfitOneSample, ErrorDropsBelowTenPercent) {
  const Dataset one = repeated(default_data(), 5, 32);
  auto cfg = GeneratorConfig::defaults_for(GetParam());
  cfg.epochs = 500;
  const double before = reconstruction_error(init_generator(cfg, one), one);
  const auto a = train_generator(cfg, one);
  const double after = reconstruction_error(a, one);
  EXPECT_LT(after, 0.1 * before) << to_string(GetParam()) << " " << before << " -> " << after;
  ASSERT_EQ(a.training_log.size(), 500u);
  EXPECT_LE(a.training_log.back(), a.training_log.front());
}

INSTANTIATE_TEST_SUITE_P(Families, OverfitOneSample, ::testing::Values(Family::Cvae, Family::Diffusion, Family::Gan),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(TrainGenerator, DeterministicLogs) {
  const Dataset d = processed(0.35, 2);
  for (auto f : {Family::Cvae, Family::Diffusion, Family::Gan}) {
    auto cfg = GeneratorConfig::defaults_for(f);
    cfg.epochs = 15;
    const auto a = train_generator(cfg, d), b = train_generator(cfg, d);
    ASSERT_EQ(a.training_log.size(), b.training_log.size());
    for (std::size_t i = 0; i < a.training_log.size(); ++i) EXPECT_NEAR(a.training_log[i], b.training_log[i], 1e-6);
    EXPECT_EQ(a.data_fingerprint, b.data_fingerprint);
  }
}

TEST(TrainGenerator, ZeroEpochsEqualsInitialisation) {
  const Dataset d = processed(0.35, 1);
  auto cfg = GeneratorConfig::defaults_for(Family::Cvae);
  cfg.epochs = 0;
  const auto a = train_generator(cfg, d);
  const auto init = init_generator(cfg, d);
  EXPECT_EQ(a.params.to_json(), init.params.to_json());
  EXPECT_TRUE(a.training_log.empty());
  for (const auto& s : sample_mt(a, MovementLabel::Flexion, 3, 1)) {
    EXPECT_EQ(s.values.rows(), 6);
    EXPECT_EQ(s.steps(), d.samples[0].steps());
    EXPECT_TRUE(s.values.allFinite());
  }
}

TEST(TrainGenerator, Errors) {
  Dataset d = processed(0.35, 1);
  auto cfg = GeneratorConfig::defaults_for(Family::Cvae, ConditioningMode::MtSequence);
  cfg.epochs = 2;
  d.kinematics[2].reset();
  EXPECT_THROW(train_generator(cfg, d), DataError);
  EXPECT_THROW(train_generator(cfg, Dataset{}), DataError);

  auto diverge = GeneratorConfig::defaults_for(Family::Cvae);
  diverge.learning_rate = 1e200;
  diverge.epochs = 50;
  try {
    train_generator(diverge, processed(0.35, 1));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(SampleMt, CountsShapesAndDeterminism) {
  auto cfg = GeneratorConfig::defaults_for(Family::Cvae);
  cfg.epochs = 30;
  const auto a = train_generator(cfg, default_data());
  std::size_t total = 0;
  for (auto m : kAllMovements) {
    const auto s = sample_mt(a, m, 20, 4);
    total += s.size();
    for (const auto& x : s) {
      EXPECT_EQ(x.label, m);
      EXPECT_EQ(x.provenance, Provenance::Synthetic);
      EXPECT_EQ(x.values.rows(), 6);
      EXPECT_EQ(x.steps(), kDefaultSteps);
      EXPECT_LE(x.values.cwiseAbs().maxCoeff(), 1.0);
    }
  }
  EXPECT_EQ(total, 120u);
  EXPECT_TRUE(sample_mt(a, MovementLabel::Extension, 0, 4).empty());
  const auto x = sample_mt(a, MovementLabel::RotationLeft, 3, 11), y = sample_mt(a, MovementLabel::RotationLeft, 3, 11);
  const auto z = sample_mt(a, MovementLabel::RotationLeft, 3, 12);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE((x[i].values.array() == y[i].values.array()).all());
  EXPECT_FALSE((x[0].values.array() == z[0].values.array()).all());
  EXPECT_THROW(translate_kinematics(a, default_data().samples[0], 1), ModeError);
}

TEST(Diffusion, SingleStepReducesToOneDenoiserApplication) {
  const Dataset d = processed(0.35, 1);
  auto cfg = GeneratorConfig::defaults_for(Family::Diffusion);
  cfg.sampling_steps = 1;
  cfg.epochs = 5;
  cfg.residual_noise = false;
  for (auto schedule : {NoiseSchedule::Zero, NoiseSchedule::Cosine}) {
    cfg.schedule = schedule;
    const auto a = train_generator(cfg, d);
    const int n = 4;
    const Matrix x = diffusion_initial_noise(a, n, 21);
    const auto ab = alpha_bar_schedule(schedule, 1);
    Matrix x0 = x;
    if (ab[1] < 1.0) {
      const Matrix eps = diffusion_predict_noise(a, x, 1, std::vector<MovementLabel>(n, MovementLabel::Flexion));
      x0 = (x - std::sqrt(1.0 - ab[1]) * eps) / std::sqrt(ab[1]);
    }
    const auto expected = decode_coefficients(a, x0);
    const auto got = sample_mt(a, MovementLabel::Flexion, n, 21);
    for (int i = 0; i < n; ++i) EXPECT_LT((got[i].values - expected[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Diffusion, ZeroScheduleIsIdentity) {
  for (double v : alpha_bar_schedule(NoiseSchedule::Zero, 8)) EXPECT_EQ(v, 1.0);
  const auto c = alpha_bar_schedule(NoiseSchedule::Cosine, 500);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_LT(c[i], c[i - 1]);
  EXPECT_GT(c.back(), 0.0);
}

TEST(Translator, RecoversNoiseFreeKinematics) {
  const Dataset d = processed(0.0);
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < d.size(); ++i) (d.samples[i].subject_id >= "S09" ? test : train).push_back(i);
  const auto a = train_generator(GeneratorConfig::defaults_for(Family::Cvae, ConditioningMode::MtSequence), d.subset(train));
  Vector se = Vector::Zero(6);
  double count = 0;
  for (auto i : test) {
    const auto k = translate_kinematics(a, d.samples[i], 5);
    EXPECT_EQ(k.provenance, KinematicsProvenance::Generated);
    ASSERT_EQ(k.values.cols(), d.samples[i].values.cols());
    se += (k.values - d.kin(i).values).rowwise().squaredNorm();
    count += static_cast<double>(k.values.cols());
  }
  for (int c = 0; c < 6; ++c) EXPECT_LT(std::sqrt(se(c) / count), 0.15) << "channel " << c;
}

TEST(Translator, ConditioningDominatesNoise) {
  const Dataset& d = default_data();
  const auto a = train_generator(GeneratorConfig::defaults_for(Family::Cvae, ConditioningMode::MtSequence), d);
  double same_input = 0.0, other_input = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i + 3 < d.size(); i += 3) {
    const auto& s = d.samples[i];
    const auto& t = d.samples[i + 3];  // next movement for the same subject
    ASSERT_NE(s.label, t.label);
    const Matrix k1 = translate_kinematics(a, s, 1).values, k2 = translate_kinematics(a, s, 2).values;
    const Matrix k3 = translate_kinematics(a, t, 1).values;
    same_input += (k1 - k2).norm();
    other_input += (k1 - k3).norm();
    ++pairs;
  }
  EXPECT_LT(same_input / pairs, other_input / pairs);
}

TEST(Translator, UntrainedIsFiniteAndShapeChecked) {
  const Dataset d = processed(0.35, 1);
  auto cfg = GeneratorConfig::defaults_for(Family::Diffusion, ConditioningMode::MtSequence);
  cfg.epochs = 0;
  cfg.sampling_steps = 20;
  const auto a = train_generator(cfg, d);
  const auto k = translate_kinematics(a, d.samples[0], 3);
  EXPECT_TRUE(k.values.allFinite());
  EXPECT_LE(k.values.cwiseAbs().maxCoeff(), 1.0);
  MTSample longer = d.samples[0];
  longer.values = Matrix::Zero(6, d.samples[0].steps() + 1);
  EXPECT_THROW(translate_kinematics(a, longer, 3), ShapeError);
  EXPECT_THROW(sample_mt(a, MovementLabel::Flexion, 2, 3), ModeError);
}

TEST(ModeCollapse, Examples) {
  const Dataset& d = default_data();
  std::vector<Matrix> real;
  for (const auto& s : d.samples) real.push_back(s.values);
  EXPECT_DOUBLE_EQ(detect_mode_collapse(std::vector<Matrix>(5, real[7]), real), 0.0);
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> pick(0, real.size() - 1);
  std::vector<Matrix> boot;
  for (int i = 0; i < 60; ++i) boot.push_back(real[pick(rng)]);
  const double score = detect_mode_collapse(boot, real);
  EXPECT_GE(score, 0.5);
  EXPECT_LE(score, 2.0);
  EXPECT_THROW(detect_mode_collapse({real[0]}, real), ArityError);
}

TEST(ModeCollapse, MatchesDirectDefinition) {
  const Dataset d = processed(0.35, 1);
  std::vector<Matrix> a, real;
  for (std::size_t i = 0; i < 6; ++i) a.push_back(d.samples[i].values * 0.5);
  for (std::size_t i = 6; i < d.size(); ++i) real.push_back(d.samples[i].values);
  double within = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j, ++n) within += (a[i] - a[j]).norm();
  EXPECT_NEAR(detect_mode_collapse(a, real), (within / n) / mean_pairwise(a, real), 1e-12);
}

TEST(ConditioningFidelity, RealDataProbeRecognisesRequestedLabel) {
  const Dataset& d = default_data();
  std::vector<features::FeatureTensor> real;
  for (const auto& s : d.samples) real.push_back(features::assemble_features(s, nullptr, nullptr));
  const auto probe = clf::train_classifier(clf::ClassifierConfig::defaults_for(clf::Family::ConvRecurrent), real);
  for (auto f : {Family::Cvae, Family::Diffusion}) {
    const auto a = train_generator(GeneratorConfig::defaults_for(f), d);
    int hit = 0, total = 0;
    for (auto m : kAllMovements)
      for (const auto& s : sample_mt(a, m, 20, 30 + static_cast<std::uint64_t>(to_index(m)))) {
        hit += clf::predict(probe, features::assemble_features(s, nullptr, nullptr)).movement() == m;
        ++total;
      }
    EXPECT_GE(static_cast<double>(hit) / total, 0.7) << to_string(f);
  }
}

TEST(GeneratorArtifact, JsonRoundTripSamplesIdentically) {
  auto cfg = GeneratorConfig::defaults_for(Family::Gan);
  cfg.epochs = 3;
  const Dataset d = processed(0.35, 1);
  const auto a = train_generator(cfg, d);
  const auto b = GeneratorArtifact::from_json(nlohmann::json::parse(a.to_json().dump()));
  const auto x = sample_mt(a, MovementLabel::Extension, 2, 9), y = sample_mt(b, MovementLabel::Extension, 2, 9);
  for (int i = 0; i < 2; ++i) EXPECT_TRUE((x[i].values.array() == y[i].values.array()).all());
  EXPECT_EQ(a.training_log, b.training_log);
}
