#pragma once

// Ground-truth models and the three observation families: a random linear
// projection, a random 3-layer perceptron, and rendered block images.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lscm/matrix.hpp"
#include "lscm/scm.hpp"

namespace lscm::synth {

struct ErDag {
  Matrix adjacency;       // node space, adjacency(j, i) = 1 for j -> i
  scm::Permutation perm;  // the node order the edges were drawn over
  Matrix lower_support;   // the same edges in L space (strictly lower)
};

// Each pair under a uniformly random order is an edge with probability
// min(1, 2 * degree / (d - 1)).
ErDag sample_er_dag(std::size_t d, double expected_degree, std::mt19937_64& rng);

inline constexpr double kMinEdgeMagnitude = 0.5;
inline constexpr double kMaxEdgeMagnitude = 2.0;

// Magnitude U(0.5, 2) with a random sign on every supported entry.
Matrix sample_parameters(const Matrix& support, std::mt19937_64& rng);

struct InterventionSet {
  scm::InterventionMask mask;
  std::size_t count = 0;
};
using InterventionPlan = std::vector<InterventionSet>;

// n_sets distinct nonempty masks. Masks listed in `exclude` are never drawn.
InterventionPlan sample_intervention_plan(std::size_t d, std::size_t n_sets,
                                          std::size_t samples_per_set, bool single_node,
                                          std::mt19937_64& rng,
                                          const std::vector<scm::InterventionMask>& exclude = {});

enum class ProjectionKind { linear, mlp3, blocks };
std::string projection_name(ProjectionKind kind);
ProjectionKind parse_projection(const std::string& name);

struct Rect {
  std::size_t row0 = 0, col0 = 0, rows = 0, cols = 0;
};

struct BlockGeometry {
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<Rect> blocks;  // one per node
};

// Blocks in one row for d <= 8, otherwise two rows; 1 pixel margin per cell.
BlockGeometry block_layout(std::size_t d, std::size_t height = 32, std::size_t width = 32);

inline constexpr std::size_t kGeneratorHidden = 128;

struct ProjectionSpec {
  ProjectionKind kind = ProjectionKind::linear;
  Matrix linear;                  // d x D
  std::vector<Matrix> mlp_w;      // d x H, H x H, H x D
  std::vector<Matrix> mlp_b;      // 1 x H, 1 x H, 1 x D
  BlockGeometry geometry;

  std::size_t latent_dim() const;
  std::size_t obs_dim() const;
};

// Linear entries are N(0, 1) (redrawn until full row rank); perceptron weights
// N(0, 1/fan_in) with zero biases; blocks ignore obs_dim beyond checking it
// equals height * width.
ProjectionSpec make_projection(ProjectionKind kind, std::size_t d, std::size_t obs_dim,
                               std::mt19937_64& rng);

// z: N x d -> N x D.
Matrix project(const Matrix& z, const ProjectionSpec& spec);

// Mean logistic intensity per block, N x d, from flattened images.
Matrix block_intensities(const Matrix& images, const BlockGeometry& geometry);

struct GroundTruth {
  scm::LatentScm scm;
  ProjectionSpec projection;

  std::size_t d() const { return scm.dim(); }
  std::size_t obs_dim() const { return projection.obs_dim(); }
  Matrix weighted_adjacency() const { return scm.weighted_adjacency(); }
};

struct GroundTruthConfig {
  std::size_t d = 5;
  std::size_t obs_dim = 100;
  double expected_degree = 1.0;
  ProjectionKind projection = ProjectionKind::linear;
  double log_sigma = -2.302585092994046;  // sigma = 0.1
};

GroundTruth sample_ground_truth(const GroundTruthConfig& config, std::mt19937_64& rng);

struct Dataset {
  Matrix x;                    // N x D
  Matrix masks;                // N x d, entries 0 or 1
  Matrix z_true;               // N x d
  Matrix intervention_values;  // N x d, zero where not intervened
  std::size_t n_obs = 0;

  std::size_t size() const { return x.rows(); }
  std::size_t d() const { return masks.cols(); }
  std::size_t obs_dim() const { return x.cols(); }
};

inline constexpr double kInterventionStd = 2.0;

// Observational rows first, then the plan's sets in order. Intervention values
// are drawn per row from N(0, intervention_std^2).
Dataset generate_dataset(const GroundTruth& gt, std::size_t n_obs, const InterventionPlan& plan,
                         std::mt19937_64& rng, double intervention_std = kInterventionStd);

// Distinct masks of a dataset's interventional rows, in first-seen order.
std::vector<scm::InterventionMask> distinct_masks(const Dataset& data);

}  // namespace lscm::synth
