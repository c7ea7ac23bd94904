#pragma once

#include "mtaim/config.hpp"
#include "mtaim/types.hpp"

#include <array>
#include <cstdint>

namespace mtaim::synth {

struct SimulatorConfig {
  int n_subjects = 10;
  int reps_per_movement = 3;
  int steps = kDefaultSteps;
  double dt = kNominalDt;
  // Std of additive Gaussian noise on the strain channels (dimensionless), before
  // the subject gain; noise scales with the gain like the signal does.
  double noise_sigma = 0.35;
  // Per-step probability of an outlier spike on a strain channel.
  double spike_rate = 0.004;
  double gain_min = 0.8;
  double gain_max = 1.2;
  // Std of additive Gaussian noise on the kinematics channels, degrees.
  double kinematics_noise_sigma = 1.5;
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError naming the field
  static SimulatorConfig from_config(const Config& c);
};

// Per-channel amplitudes of one movement; the paired kinematics amplitude is a
// fixed linear map of the strain amplitude (see kinematics_map()).
struct MovementSignature {
  std::array<double, kNumChannels> strain{};
  std::array<double, kNumChannels> kinematics_deg{};
};

MovementSignature signature(MovementLabel m);

// 6x6 map from strain amplitudes to kinematics amplitudes (degrees).
const Eigen::Matrix<double, kNumChannels, kNumChannels>& kinematics_map();

// Raised-cosine bump: zero before 15% of the window, peak at 50%, back to zero by 85%.
double envelope(int t, int steps);

// Noise-free strain and kinematics of one repetition, scaled by the subject gain.
Matrix strain_template(MovementLabel m, double gain, int steps);
Matrix kinematics_template(MovementLabel m, double gain, int steps);

// Channel map that turns a left movement into its right mirror image:
// strain swaps left/right sensors, kinematics negates the lateral and rotation axes.
Matrix mirror_strain(const Matrix& values);
Matrix mirror_kinematics(const Matrix& values);

MovementLabel mirror_label(MovementLabel m) noexcept;

double subject_gain(const SimulatorConfig& cfg, int subject_index);
std::string subject_name(int subject_index);

Dataset generate_dataset(const SimulatorConfig& cfg);

// True iff every left/right lateral-bend and rotation pair of the same subject
// and repetition matches under the mirror map. Throws NotApplicableError for
// noisy data (channels not affine in a shared temporal profile).
bool mirror_check(const Dataset& d);

}  // namespace mtaim::synth
