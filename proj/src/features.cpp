#include "mtaim/features.hpp"

#include "mtaim/errors.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>

namespace mtaim::features {

std::vector<double> dtft_magnitude(std::span<const double> channel, DftScale scale) {
  const std::size_t n = channel.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  if (n == 1) {
    // kissfft has no factorisation for length 1 and reads past its plan
    const double mag = std::abs(channel[0]);
    out[0] = scale == DftScale::LogMagnitude ? std::log1p(mag) : mag;
    return out;
  }
  std::vector<std::complex<double>> in(channel.begin(), channel.end());
  std::vector<std::complex<double>> spectrum;
  Eigen::FFT<double> fft;
  fft.fwd(spectrum, in);
  for (std::size_t k = 0; k < n; ++k) {
    const double mag = std::abs(spectrum[k]);
    out[k] = scale == DftScale::LogMagnitude ? std::log1p(mag) : mag;
  }
  return out;
}

Matrix dtft_channels(const Matrix& channels, DftScale scale) {
  Matrix out(channels.rows(), channels.cols());
  std::vector<double> row(static_cast<std::size_t>(channels.cols()));
  for (Eigen::Index c = 0; c < channels.rows(); ++c) {
    for (Eigen::Index t = 0; t < channels.cols(); ++t) row[static_cast<std::size_t>(t)] = channels(c, t);
    auto mag = dtft_magnitude(row, scale);
    for (Eigen::Index t = 0; t < channels.cols(); ++t) out(c, t) = mag[static_cast<std::size_t>(t)];
  }
  return out;
}

std::vector<std::string> manifest_for(bool with_dtft, bool with_kinematics) {
  std::vector<std::string> m;
  for (int c = 1; c <= kNumChannels; ++c) m.push_back("mt" + std::to_string(c));
  if (with_dtft)
    for (int c = 1; c <= kNumChannels; ++c) m.push_back("dtft" + std::to_string(c));
  if (with_kinematics)
    for (int c = 1; c <= kNumChannels; ++c) m.push_back("kin" + std::to_string(c));
  return m;
}

FeatureTensor assemble_features(const MTSample& mt, const Matrix* dtft, const KinematicsSample* kin) {
  const Eigen::Index steps = mt.values.cols();
  if (mt.values.rows() != kNumChannels) throw ShapeError("mt1..mt6: expected 6 strain channels");
  if (dtft && (dtft->rows() != kNumChannels || dtft->cols() != steps))
    throw ShapeError("dtft1..dtft6: expected 6 x " + std::to_string(steps) + ", got " + std::to_string(dtft->rows()) +
                     " x " + std::to_string(dtft->cols()));
  if (kin && (kin->values.rows() != kNumChannels || kin->values.cols() != steps))
    throw ShapeError("kin1..kin6: expected 6 x " + std::to_string(steps) + ", got " +
                     std::to_string(kin->values.rows()) + " x " + std::to_string(kin->values.cols()));

  FeatureTensor f;
  f.label = mt.label;
  f.manifest = manifest_for(dtft != nullptr, kin != nullptr);
  f.values.resize(static_cast<Eigen::Index>(f.manifest.size()), steps);
  Eigen::Index row = 0;
  f.values.middleRows(row, kNumChannels) = mt.values;
  row += kNumChannels;
  if (dtft) {
    f.values.middleRows(row, kNumChannels) = *dtft;
    row += kNumChannels;
  }
  if (kin) f.values.middleRows(row, kNumChannels) = kin->values;
  return f;
}

}  // namespace mtaim::features
