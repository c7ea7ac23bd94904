#pragma once

#include "mtaim/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace mtaim::features {

enum class DftScale { Magnitude, LogMagnitude };

// |sum_n x[n] exp(-i 2 pi k n / T)| for k = 0..T-1.
std::vector<double> dtft_magnitude(std::span<const double> channel, DftScale scale = DftScale::Magnitude);

// Row-wise dtft_magnitude of a channels x T matrix.
Matrix dtft_channels(const Matrix& channels, DftScale scale = DftScale::Magnitude);

struct FeatureTensor {
  Matrix values;                      // C x T
  std::vector<std::string> manifest;  // mt1..mt6[, dtft1..dtft6][, kin1..kin6]
  MovementLabel label = MovementLabel::Extension;

  int channels() const noexcept { return static_cast<int>(values.rows()); }
  int steps() const noexcept { return static_cast<int>(values.cols()); }
};

std::vector<std::string> manifest_for(bool with_dtft, bool with_kinematics);

// Stacks strain, DFT and kinematics channels in manifest order; absent parts are skipped.
// Throws ShapeError when lengths differ.
FeatureTensor assemble_features(const MTSample& mt, const Matrix* dtft, const KinematicsSample* kin);

}  // namespace mtaim::features
