#include "mtaim/validate.hpp"

#include <array>
#include <cmath>

namespace mtaim {

ValidationReport validate_dataset(const Dataset& d) {
  ValidationReport report;
  auto add = [&](std::ptrdiff_t i, std::string rule, std::string detail) {
    report.push_back({i, std::move(rule), std::move(detail)});
  };

  if (d.has_kinematics() && d.kinematics.size() != d.samples.size())
    add(-1, "kinematics_pairing", "kinematics slots do not match sample count");

  const Eigen::Index steps = d.empty() ? 0 : d.samples.front().values.cols();
  std::array<int, kNumMovements> counts{};
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    const auto idx = static_cast<std::ptrdiff_t>(i);
    counts[static_cast<std::size_t>(to_index(s.label))]++;
    if (s.values.rows() != kNumChannels)
      add(idx, "channel_count", "expected 6 channels, got " + std::to_string(s.values.rows()));
    if (d.preprocessed && s.values.cols() != steps)
      add(idx, "uniform_length", "T=" + std::to_string(s.values.cols()) + " differs from " + std::to_string(steps));
    if (s.repetition < 1 || s.repetition > 3)
      add(idx, "repetition_range", "repetition " + std::to_string(s.repetition) + " outside 1..3");
    if (!s.values.allFinite()) add(idx, "finite", "non-finite strain value");
    if (d.preprocessed && s.values.size() > 0 && (s.values.maxCoeff() > 1.0 || s.values.minCoeff() < -1.0))
      add(idx, "range", "strain values outside [-1, 1]");

    if (d.has_kinematics() && i < d.kinematics.size()) {
      const auto& k = d.kinematics[i];
      if (!k) {
        if (s.provenance != Provenance::Synthetic) add(idx, "kinematics_pairing", "real sample without kinematics");
        continue;
      }
      if (k->values.rows() != kNumChannels) add(idx, "kinematics_channel_count", "expected 6 kinematics channels");
      if (k->values.cols() != s.values.cols()) add(idx, "kinematics_length", "kinematics T does not match strain T");
      if (!k->values.allFinite()) add(idx, "kinematics_finite", "non-finite kinematics value");
      if (d.preprocessed && k->values.size() > 0 && (k->values.maxCoeff() > 1.0 || k->values.minCoeff() < -1.0))
        add(idx, "kinematics_range", "kinematics values outside [-1, 1]");
    }
  }
  if (d.complete && !d.empty()) {
    for (int m = 1; m < kNumMovements; ++m)
      if (counts[static_cast<std::size_t>(m)] != counts[0]) {
        add(-1, "balance", "per-movement counts differ in a complete dataset");
        break;
      }
  }
  return report;
}

}  // namespace mtaim
