#pragma once

#include "mtaim/config.hpp"
#include "mtaim/types.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mtaim::prep {

// One raw recording as read from the sensor logger.
struct RawTrial {
  Matrix resistance;   // ohms, 6 x T_raw
  Vector baseline_r0;  // ohms, one per channel, strictly positive
  std::optional<Matrix> kinematics_deg;
  double mt_start_s = 0.0;   // start times on the shared sync clock
  double kin_start_s = 0.0;
  double dt = kNominalDt;
};

// (R - R0) / R0 per channel. Throws DegenerateError naming the channel when R0 <= 0.
Matrix baseline_normalize(const RawTrial& trial);
Matrix restore_resistance(const Matrix& normalized, const Vector& baseline_r0);

// Builds the raw trial that baseline-normalizes back to `sample`.
RawTrial to_raw_trial(const MTSample& sample, double r0_ohms = 10'000.0);

inline constexpr double kMadScale = 1.4826;

// Sliding-window Hampel filter: a point further than k * 1.4826 * MAD from its
// window median is replaced by that median. Windows are truncated at the ends.
std::vector<double> hampel_filter(std::span<const double> series, int window_half_width, double k);
Matrix hampel_filter_rows(const Matrix& m, int window_half_width, double k);

struct ExclusionRecord {
  std::string id;
  int channel = 0;  // 1-based
  double max_z = 0.0;
};

struct ExclusionResult {
  Dataset kept;
  std::vector<ExclusionRecord> excluded;
};

// A sample is dropped iff some channel has a value above mean + threshold_sd * std,
// with mean and std taken over that channel of that sample (one-sided).
ExclusionResult exclude_noisy_trials(const Dataset& d, double threshold_sd = 10.0);
void write_exclusion_log(std::ostream& out, const std::vector<ExclusionRecord>& records);

// Drops leading steps so both series start at the later start time, then trims
// both to the shorter length. Throws AlignmentError when nothing overlaps.
std::pair<Matrix, Matrix> align_and_trim(const Matrix& mt, const Matrix& kin, double mt_start_s, double kin_start_s,
                                         double dt);

// Linear interpolation of every row onto `steps` uniformly spaced points over the
// original time span. Endpoints are kept exactly.
Matrix resample_to(const Matrix& series, int steps);

// Per-channel min-max scaling to [-1, 1] across all matrices of one trial group.
// Constant channels map to 0.
std::vector<Matrix> minmax_normalize(const std::vector<Matrix>& group);

struct PreprocessConfig {
  bool apply_hampel = true;
  int hampel_half_width = 5;
  double hampel_k = 3.0;
  double exclusion_sd = 10.0;
  int target_steps = kDefaultSteps;

  void validate() const;
  static PreprocessConfig from_config(const Config& c);
};

struct PreprocessResult {
  Dataset data;
  std::vector<ExclusionRecord> excluded;
};

// Hampel -> exclusion -> align/trim -> resample -> per (subject, movement) min-max.
// Input values are baseline-normalized strain; kinematics in degrees.
PreprocessResult preprocess_dataset(const Dataset& d, const PreprocessConfig& cfg = {});

}  // namespace mtaim::prep
