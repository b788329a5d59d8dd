#pragma once

// Structure, parameter and latent recovery metrics against a ground truth.

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "lscm/matrix.hpp"
#include "lscm/synth.hpp"
#include "lscm/trainer.hpp"

namespace lscm::eval {

// Per unordered pair: missing, extra or reversed edge each cost 1.
double shd(const Matrix& graph, const Matrix& gt);
double expected_shd(const std::vector<Matrix>& graphs, const Matrix& gt);
// SHD between undirected skeletons, averaged.
double skeleton_shd(const std::vector<Matrix>& graphs, const Matrix& gt);

// Over the d(d-1) off-diagonal entries. nullopt when gt has no positives or
// no negatives.
std::optional<double> auroc(const Matrix& scores, const Matrix& gt);
// Step-wise area: sum over positives of precision at that positive's score
// level, tied scores entering together.
std::optional<double> auprc(const Matrix& scores, const Matrix& gt);

// Mean matched |Pearson correlation|. `match` selects a Hungarian assignment
// over coordinates; otherwise coordinate i is paired with coordinate i.
double mcc(const Matrix& z_true, const Matrix& z_pred, bool match);

double edge_weight_mse(const std::vector<Matrix>& w_samples, const Matrix& gt_w);

struct Confusion {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};
Confusion confusion(const Matrix& graph, const Matrix& gt);

struct MetricsReport {
  double e_shd = 0, shd_c = 0;
  std::optional<double> auroc, auprc_g, auprc_w;
  std::optional<double> mcc;
  double l_mse = 0;
  std::optional<double> x_mse;
  std::optional<double> obs_kl;
  double tp = 0, fp = 0, tn = 0, fn = 0;
  double tpr = 0, fpr = 0, precision = 0, recall = 0, f1 = 0;

  nlohmann::json to_json() const;
};

// Field order of MetricsReport::to_json.
const std::vector<std::string>& metric_names();

// The empty graph with zero weights.
MetricsReport null_graph_baseline(const synth::GroundTruth& gt);

struct EvalConfig {
  std::size_t posterior_samples = 100;
  std::size_t latent_samples = 64;
  std::uint64_t seed = 1;
  // Match latent coordinates by assignment. Defaults to on for learned
  // orderings, off for fixed ones.
  std::optional<bool> match_latents;
};

// W of n posterior samples.
std::vector<Matrix> posterior_w_samples(const train::TrainConfig& config,
                                        const train::TrainState& state, std::size_t n,
                                        std::mt19937_64& rng);

// Full report. Without `data` the latent and reconstruction metrics are absent.
// Structure metrics come from `w_samples` when given; otherwise
// eval.posterior_samples draws are taken from the eval.seed stream first.
MetricsReport evaluate(const train::TrainConfig& config, const train::TrainState& state,
                       const synth::GroundTruth& gt, const synth::Dataset* data,
                       const EvalConfig& eval = {},
                       const std::vector<Matrix>* w_samples = nullptr);

struct InterventionComparison {
  scm::InterventionMask mask;
  std::vector<double> values;  // intervention value per node, 0 where not intervened
  Matrix gt_mean;              // 1 x D
  Matrix model_mean;           // 1 x D
  Matrix abs_diff;             // 1 x D
  std::optional<Matrix> block_error;  // 1 x d mean |diff| per block, block images only
};

// For each mask: one value per intervened node from N(0, intervention_std^2),
// shared by ground truth and model, then the mean of n decoded samples each.
std::vector<InterventionComparison> compare_interventions(
    const train::TrainConfig& config, const train::TrainState& state,
    const synth::GroundTruth& gt, const std::vector<scm::InterventionMask>& masks, std::size_t n,
    std::mt19937_64& rng, double intervention_std = synth::kInterventionStd);

}  // namespace lscm::eval
