#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtaim {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kNumMovements = 6;
inline constexpr int kNumChannels = 6;
inline constexpr int kDefaultSteps = 300;
inline constexpr double kNominalDt = 0.020;
inline constexpr int kSchemaVersion = 1;

enum class MovementLabel : int {
  Extension = 0,
  Flexion = 1,
  LateralBendLeft = 2,
  LateralBendRight = 3,
  RotationLeft = 4,
  RotationRight = 5,
};

inline constexpr std::array<MovementLabel, kNumMovements> kAllMovements = {
    MovementLabel::Extension,       MovementLabel::Flexion,      MovementLabel::LateralBendLeft,
    MovementLabel::LateralBendRight, MovementLabel::RotationLeft, MovementLabel::RotationRight};

constexpr int to_index(MovementLabel m) noexcept { return static_cast<int>(m); }
MovementLabel label_from_index(int index);  // throws DataError outside 0..5
std::string_view to_string(MovementLabel m) noexcept;
std::optional<MovementLabel> parse_label(std::string_view name) noexcept;

enum class Provenance { Real, Synthetic, SyntheticGroundTruth };
enum class KinematicsProvenance { Measured, Generated };

std::string_view to_string(Provenance p) noexcept;

// One trial repetition: 6 strain channels x T steps.
struct MTSample {
  std::string subject_id;
  int repetition = 1;
  MovementLabel label = MovementLabel::Extension;
  Matrix values;  // kNumChannels x T
  double dt = kNominalDt;
  Provenance provenance = Provenance::Real;

  int steps() const noexcept { return static_cast<int>(values.cols()); }
};

// Channel order: lower-to-pelvis x/y/z, then upper-to-lower x/y/z.
struct KinematicsSample {
  Matrix values;  // kNumChannels x T
  KinematicsProvenance provenance = KinematicsProvenance::Measured;

  int steps() const noexcept { return static_cast<int>(values.cols()); }
};

struct Dataset {
  std::vector<MTSample> samples;
  // Either empty or one slot per sample.
  std::vector<std::optional<KinematicsSample>> kinematics;
  std::uint64_t seed = 0;
  int schema_version = kSchemaVersion;
  bool preprocessed = false;
  // False once trials have been excluded; balance is only required of complete datasets.
  bool complete = true;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  bool has_kinematics() const noexcept { return !kinematics.empty(); }
  const KinematicsSample& kin(std::size_t i) const;  // throws DataError when absent
  std::vector<std::string> subjects() const;         // sorted, unique
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

// Stable identifier "subject/movement/rep".
std::string sample_id(const MTSample& s);

}  // namespace mtaim
