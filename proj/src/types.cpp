#include "mtaim/types.hpp"

#include "mtaim/errors.hpp"

#include <algorithm>
#include <set>

namespace mtaim {

namespace {
constexpr std::array<std::string_view, kNumMovements> kLabelNames = {
    "Extension", "Flexion", "LateralBendLeft", "LateralBendRight", "RotationLeft", "RotationRight"};
}

MovementLabel label_from_index(int index) {
  if (index < 0 || index >= kNumMovements)
    throw DataError("movement index out of range: " + std::to_string(index));
  return static_cast<MovementLabel>(index);
}

std::string_view to_string(MovementLabel m) noexcept { return kLabelNames[static_cast<std::size_t>(to_index(m))]; }

std::optional<MovementLabel> parse_label(std::string_view name) noexcept {
  for (int i = 0; i < kNumMovements; ++i)
    if (kLabelNames[static_cast<std::size_t>(i)] == name) return static_cast<MovementLabel>(i);
  return std::nullopt;
}

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::Real: return "real";
    case Provenance::Synthetic: return "synthetic";
    case Provenance::SyntheticGroundTruth: return "synthetic-groundtruth";
  }
  return "unknown";
}

const KinematicsSample& Dataset::kin(std::size_t i) const {
  if (i >= kinematics.size() || !kinematics[i])
    throw DataError("sample " + std::to_string(i) + " has no paired kinematics");
  return *kinematics[i];
}

std::vector<std::string> Dataset::subjects() const {
  std::set<std::string> s;
  for (const auto& x : samples) s.insert(x.subject_id);
  return {s.begin(), s.end()};
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.seed = seed;
  out.schema_version = schema_version;
  out.preprocessed = preprocessed;
  out.complete = complete && indices.size() == samples.size();
  out.samples.reserve(indices.size());
  for (auto i : indices) {
    out.samples.push_back(samples.at(i));
    if (has_kinematics()) out.kinematics.push_back(kinematics.at(i));
  }
  return out;
}

std::string sample_id(const MTSample& s) {
  return s.subject_id + "/" + std::string(to_string(s.label)) + "/" + std::to_string(s.repetition);
}

}  // namespace mtaim
