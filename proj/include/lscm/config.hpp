#pragma once

// Flat JSON experiment configuration. Every key is optional; unknown keys are
// an error. See README for the key list.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lscm/metrics.hpp"
#include "lscm/synth.hpp"
#include "lscm/trainer.hpp"

namespace lscm::config {

struct DataSpec {
  std::size_t d = 5;
  std::size_t obs_dim = 100;  // blocks: the image pixel count, 1024 by default
  double expected_degree = 1.0;
  synth::ProjectionKind projection = synth::ProjectionKind::linear;
  std::size_t n_obs = 500;
  std::size_t n_sets = 20;
  std::size_t samples_per_set = 100;
  bool single_node = false;
  double sigma = 0.1;  // ground-truth noise std
  double intervention_std = synth::kInterventionStd;
};

struct ExperimentConfig {
  DataSpec data;
  train::TrainConfig train;
  eval::EvalConfig eval;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t unseen_sets = 10;
  std::size_t unseen_samples = 1000;
  std::vector<std::size_t> ablation_sets = {2, 5, 10, 20};

  void validate() const;
  nlohmann::json to_json() const;
};

ExperimentConfig parse(const nlohmann::json& j);
ExperimentConfig load(const std::filesystem::path& path);

// Valid config keys, for error messages and docs.
const std::vector<std::string>& known_keys();

// Independent streams per seed and purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

}  // namespace lscm::config
