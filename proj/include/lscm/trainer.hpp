#pragma once

// ELBO assembly and the optimisation loop.
//
// One epoch is one gradient step on a single-sample ELBO estimate:
//   draw (L, log sigma) ~ q, logits T = MLP(draw), soft P = Sinkhorn(T + gumbel),
//   hard P = Hungarian(soft P), W = P^T L^T P, one ancestral sample per row
//   under that row's mask, decode, Gaussian log-likelihood, minus the two KL
//   surrogates. In fixed-ordering mode P is a constant and no Sinkhorn or
//   Hungarian work happens.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "lscm/autodiff.hpp"
#include "lscm/decoder.hpp"
#include "lscm/posterior.hpp"
#include "lscm/scm.hpp"
#include "lscm/synth.hpp"

namespace lscm::train {

enum class Mode { learn_permutation, fixed_ordering };
std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 5000;
  double lr = 0.0008;
  std::size_t batch_size = 0;  // 0 = full batch
  Mode mode = Mode::fixed_ordering;
  std::uint64_t seed = 0;

  double tau = 1.0;
  int sinkhorn_iters = 20;
  double perm_kl_coef = 1.0;
  posterior::PriorConfig prior;
  double edge_threshold = scm::kDefaultEdgeThreshold;

  decoder::Kind decoder = decoder::Kind::linear;
  std::size_t decoder_hidden = decoder::kMlpHidden;
  std::size_t logit_hidden = posterior::kLogitHidden;

  // Model-side intervened nodes take the dataset's intervention values. With
  // false they draw from their own noise term instead.
  bool clamp_interventions = true;

  double q_mean_init_std = 0.1;
  double q_log_std_init = -1.0;
  double log_noise_init = 0.0;

  std::size_t eval_interval = 50;  // 0: evaluate only at the end

  // The node ordering used in fixed-ordering mode; identity when unset.
  std::optional<scm::Permutation> ordering;

  void validate() const;
  nlohmann::json to_json() const;
  // Fields that do not change the optimisation trajectory (epochs,
  // eval_interval) are left out.
  std::string hash() const;
};

struct TrainState {
  std::size_t d = 0;
  std::size_t obs_dim = 0;
  ad::ParamStore params;
  ad::AdamState adam;
  std::uint64_t epoch = 0;
  std::vector<double> elbo_trace;
  std::mt19937_64 rng;
};

// Parameter names: q.mean, q.log_std (1 x K), logit.* (learned mode), dec.*.
TrainState init_state(const TrainConfig& config, std::size_t d, std::size_t obs_dim);

// All randomness of one ELBO estimate, drawn up front.
struct ElboNoise {
  Matrix q;        // 1 x K
  Matrix gumbel;   // d x d, unused in fixed-ordering mode
  Matrix latent;   // B x d
  std::vector<std::size_t> rows;  // dataset rows of the batch
};

ElboNoise draw_noise(const TrainConfig& config, std::size_t d, std::size_t n_rows,
                     std::mt19937_64& rng);

// ELBO program over the parameter store with frozen noise.
ad::LossProgram elbo_program(const TrainConfig& config, const synth::Dataset& data,
                             const ElboNoise& noise);

struct StepResult {
  double elbo = 0.0;
  ad::GradStore grads;
};

// Draws fresh noise from state.rng and evaluates the ELBO and its gradient.
// Throws NumericalError (with parameter norms) on a non-finite estimate.
StepResult elbo_step(const TrainConfig& config, TrainState& state, const synth::Dataset& data);

struct History {
  std::vector<std::pair<std::uint64_t, double>> elbo;  // (epoch, ELBO)
  std::vector<nlohmann::json> evaluations;
  bool diverged = false;
  std::string message;
};

using EvalHook = std::function<nlohmann::json(const TrainState&)>;

// Runs epochs until state.epoch == config.epochs. The hook fires every
// eval_interval epochs and after the last one.
History train(const TrainConfig& config, TrainState& state, const synth::Dataset& data,
              const EvalHook& hook = {});

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     const TrainState& state);
// Refuses a checkpoint written under a different config hash.
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config);

// ---- reading the learned model ---------------------------------------------

struct ModelDraw {
  scm::Permutation perm;
  Matrix lower;
  scm::NoiseScale noise;
  Matrix w;
};

// One posterior sample (fresh q and gumbel noise).
ModelDraw sample_model(const TrainConfig& config, const TrainState& state, std::mt19937_64& rng);
// q means, and in learned mode the noiseless Sinkhorn/Hungarian permutation.
ModelDraw mean_model(const TrainConfig& config, const TrainState& state);

// Row r: mean over k ancestral samples of the model under masks.row(r), with
// intervened nodes clamped to clamp_values when given.
Matrix mean_latents(const ModelDraw& model, const Matrix& masks, const Matrix* clamp_values,
                    std::size_t k, std::mt19937_64& rng);

Matrix decode(const TrainConfig& config, const TrainState& state, const Matrix& z);

struct InterventionalImages {
  Matrix samples;  // n x D
  Matrix mean;     // 1 x D
};

// n decoded samples of the mean model under `mask`. With `values` the
// intervened nodes are set to values[i]; otherwise they draw from noise.
InterventionalImages sample_interventional_images(const TrainConfig& config,
                                                  const TrainState& state,
                                                  const scm::InterventionMask& mask,
                                                  std::size_t n, std::mt19937_64& rng,
                                                  const std::vector<double>* values = nullptr);

// State whose posterior sits on the ground truth (means = GT, log std = -20)
// and whose decoder reproduces the projection exactly. Works for linear and
// mlp3 projections with the matching decoder; blocks are not expressible.
TrainState ground_truth_state(const TrainConfig& config, const synth::GroundTruth& gt);

}  // namespace lscm::train
