#pragma once

#include "mtaim/config.hpp"
#include "mtaim/nn.hpp"
#include "mtaim/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mtaim::gen {

enum class Family { Cvae, Diffusion, Gan };
enum class ConditioningMode { MovementLabel, MtSequence };
enum class NoiseSchedule { Cosine, Zero };

std::string_view to_string(Family f) noexcept;
std::string_view to_string(ConditioningMode m) noexcept;
Family parse_family(std::string_view s);            // throws ConfigError
ConditioningMode parse_mode(std::string_view s);    // throws ConfigError

struct GeneratorConfig {
  Family family = Family::Cvae;
  ConditioningMode mode = ConditioningMode::MovementLabel;
  int decoder_layers = 4;
  int hidden_dim = 12;
  int latent_dim = 12;
  int sampling_steps = 500;     // diffusion: length of the noise schedule
  int fast_sampling_steps = 0;  // diffusion: strided sampler length, 0 = full schedule
  NoiseSchedule schedule = NoiseSchedule::Cosine;
  int embedding_layers = 3;     // gan
  int generator_advantage = 2;  // gan: generator steps per discriminator step
  double kl_weight = 1.0;       // cvae
  int basis_functions = 24;
  int max_tokens = 30;          // conditioning encoder token budget
  bool residual_noise = true;   // sample_mt adds white noise matching the basis-fit residual
  int epochs = 300;
  int batch_size = 32;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;

  // MT-conditioned models train longer: the token encoder is much larger than a label embedding.
  static GeneratorConfig defaults_for(Family f, ConditioningMode m = ConditioningMode::MovementLabel);
  // Reads `<section>.family` and `<section>.conditioning_mode` first, then overrides the family defaults.
  static GeneratorConfig from_config(const Config& c, const std::string& section = "generator");
  void validate() const;  // throws ConfigError naming the field

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

struct GeneratorArtifact {
  GeneratorConfig config;
  int steps = 0;  // T the model was built for
  double dt = kNominalDt;
  double scale = 1.0;  // coefficient standardisation
  Vector residual_std;  // per channel, training series minus their basis fit
  nn::ParamSet params;
  std::vector<double> training_log;  // one loss per epoch
  std::string data_fingerprint;
  int version = kSchemaVersion;

  nlohmann::json to_json() const;
  static GeneratorArtifact from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static GeneratorArtifact load(const std::filesystem::path& path);
};

// Untrained artifact (the state train_generator starts from).
GeneratorArtifact init_generator(const GeneratorConfig& cfg, const Dataset& train);

// Writes "epoch,loss" per epoch to `log` when given.
GeneratorArtifact train_generator(const GeneratorConfig& cfg, const Dataset& train, std::ostream* log = nullptr);

std::vector<MTSample> sample_mt(const GeneratorArtifact& a, MovementLabel label, int n, std::uint64_t seed);

KinematicsSample translate_kinematics(const GeneratorArtifact& a, const MTSample& mt, std::uint64_t seed);
std::vector<KinematicsSample> translate_batch(const GeneratorArtifact& a, const std::vector<MTSample>& mt,
                                              std::uint64_t seed);

// Mean pairwise distance among `samples` over mean distance from samples to `real`
// (Euclidean over the flattened series).
double detect_mode_collapse(const std::vector<Matrix>& samples, const std::vector<Matrix>& real);
inline constexpr double kCollapseWarning = 0.1;

// Deterministic reconstruction (cvae, gan) or denoising (diffusion) error of the
// given samples under the artifact, in standardised coefficient space. The
// diffusion error is averaged over a fixed set of timesteps and noise draws.
double reconstruction_error(const GeneratorArtifact& a, const Dataset& d, std::uint64_t seed = 0);

// C-VAE objective for an explicit reparameterisation draw (B x latent_dim).
// With `backward` the gradient is accumulated into a.params.
double cvae_objective(GeneratorArtifact& a, const Dataset& batch, const Matrix& eps, bool backward);

// Diffusion internals exposed for consistency checks.
std::vector<double> alpha_bar_schedule(NoiseSchedule s, int steps);
// Predicted noise for standardised coefficients x_t (B x 6K) at timestep t in 1..S.
Matrix diffusion_predict_noise(const GeneratorArtifact& a, const Matrix& x_t, int t,
                               const std::vector<MovementLabel>& labels);
// Initial standardised noise the sampler draws for `n` samples under `seed`.
Matrix diffusion_initial_noise(const GeneratorArtifact& a, int n, std::uint64_t seed);
// Coefficients (standardised, B x 6K) -> series clipped to [-1, 1].
std::vector<Matrix> decode_coefficients(const GeneratorArtifact& a, const Matrix& x);

}  // namespace mtaim::gen
