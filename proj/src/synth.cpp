#include "lscm/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lscm/errors.hpp"
#include "lscm/kernels.hpp"

namespace lscm::synth {
namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = normal(rng);
  return m;
}

bool full_row_rank(const Matrix& m) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> view(m.data(), static_cast<Eigen::Index>(m.rows()),
                                static_cast<Eigen::Index>(m.cols()));
  Eigen::FullPivLU<RowMat> lu(view);
  return static_cast<std::size_t>(lu.rank()) == m.rows();
}

void add_bias(Matrix& out, const Matrix& b) {
  for (std::size_t r = 0; r < out.rows(); ++r)
    kernels::axpy(out.cols(), 1.0, b.data(), out.row(r).data());
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ErDag sample_er_dag(std::size_t d, double expected_degree, std::mt19937_64& rng) {
  if (d < 2) throw ArgumentError("sample_er_dag: need at least 2 nodes");
  if (!(expected_degree > 0.0)) throw ArgumentError("sample_er_dag: degree must be positive");
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  scm::Permutation perm(order);

  const double p = std::min(1.0, 2.0 * expected_degree / static_cast<double>(d - 1));
  std::bernoulli_distribution coin(p);
  Matrix lower(d, d);
  for (std::size_t s = 1; s < d; ++s)
    for (std::size_t r = 0; r < s; ++r)
      if (coin(rng)) lower(s, r) = 1.0;
  Matrix adjacency = scm::compose_w(perm, lower);
  return {std::move(adjacency), std::move(perm), std::move(lower)};
}

Matrix sample_parameters(const Matrix& support, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> magnitude(kMinEdgeMagnitude, kMaxEdgeMagnitude);
  std::bernoulli_distribution negative(0.5);
  Matrix out(support.rows(), support.cols());
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i] == 0.0) continue;
    const double m = magnitude(rng);
    out[i] = negative(rng) ? -m : m;
  }
  return out;
}

InterventionPlan sample_intervention_plan(std::size_t d, std::size_t n_sets,
                                          std::size_t samples_per_set, bool single_node,
                                          std::mt19937_64& rng,
                                          const std::vector<scm::InterventionMask>& exclude) {
  if (d == 0) throw ArgumentError("intervention plan: d must be positive");
  if (n_sets == 0) throw ArgumentError("intervention plan: need at least one set");
  std::set<scm::InterventionMask> taken;
  for (const auto& m : exclude) {
    if (m.size() != d) throw ArgumentError("intervention plan: excluded mask has wrong length");
    taken.insert(m);
  }

  InterventionPlan plan;
  if (single_node) {
    std::vector<scm::InterventionMask> pool;
    for (std::size_t i = 0; i < d; ++i) {
      scm::InterventionMask m(d, 0);
      m[i] = 1;
      if (!taken.contains(m)) pool.push_back(std::move(m));
    }
    if (pool.size() < n_sets) {
      throw ArgumentError("intervention plan: only " + std::to_string(pool.size()) +
                          " single-node masks available, " + std::to_string(n_sets) +
                          " requested");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t s = 0; s < n_sets; ++s) plan.push_back({pool[s], samples_per_set});
    return plan;
  }

  if (d < 63) {
    const std::uint64_t all = (std::uint64_t{1} << d) - 1;
    std::uint64_t excluded_nonzero = 0;
    for (const auto& m : taken)
      if (std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }))
        ++excluded_nonzero;
    if (all - excluded_nonzero < n_sets) {
      throw ArgumentError("intervention plan: only " + std::to_string(all - excluded_nonzero) +
                          " distinct masks available, " + std::to_string(n_sets) + " requested");
    }
  }
  std::bernoulli_distribution coin(0.5);
  while (plan.size() < n_sets) {
    scm::InterventionMask m(d, 0);
    bool any = false;
    for (auto& v : m) {
      v = coin(rng) ? 1 : 0;
      any = any || v != 0;
    }
    if (!any || taken.contains(m)) continue;
    taken.insert(m);
    plan.push_back({std::move(m), samples_per_set});
  }
  return plan;
}

std::string projection_name(ProjectionKind kind) {
  switch (kind) {
    case ProjectionKind::linear: return "linear";
    case ProjectionKind::mlp3: return "mlp3";
    case ProjectionKind::blocks: return "blocks";
  }
  return "?";
}

ProjectionKind parse_projection(const std::string& name) {
  if (name == "linear") return ProjectionKind::linear;
  if (name == "mlp3") return ProjectionKind::mlp3;
  if (name == "blocks") return ProjectionKind::blocks;
  throw ConfigError("unknown projection kind '" + name + "'");
}

BlockGeometry block_layout(std::size_t d, std::size_t height, std::size_t width) {
  if (d == 0) throw ArgumentError("block_layout: no blocks");
  const std::size_t grid_rows = d <= 8 ? 1 : 2;
  const std::size_t per_row = (d + grid_rows - 1) / grid_rows;
  const std::size_t cell_w = width / per_row;
  if (cell_w < 3 || height < 8) throw ArgumentError("block_layout: image too small for d blocks");

  BlockGeometry g{height, width, {}};
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t gr = i / per_row;
    const std::size_t gc = i % per_row;
    Rect r;
    r.col0 = gc * cell_w + 1;
    r.cols = cell_w - 2;
    if (grid_rows == 1) {
      r.row0 = height / 4;
      r.rows = height / 2;
    } else {
      const std::size_t band = height / 2;
      r.row0 = gr * band + band / 8;
      r.rows = band - band / 4;
    }
    g.blocks.push_back(r);
  }
  return g;
}

std::size_t ProjectionSpec::latent_dim() const {
  switch (kind) {
    case ProjectionKind::linear: return linear.rows();
    case ProjectionKind::mlp3: return mlp_w.empty() ? 0 : mlp_w.front().rows();
    case ProjectionKind::blocks: return geometry.blocks.size();
  }
  return 0;
}

std::size_t ProjectionSpec::obs_dim() const {
  switch (kind) {
    case ProjectionKind::linear: return linear.cols();
    case ProjectionKind::mlp3: return mlp_w.empty() ? 0 : mlp_w.back().cols();
    case ProjectionKind::blocks: return geometry.height * geometry.width;
  }
  return 0;
}

ProjectionSpec make_projection(ProjectionKind kind, std::size_t d, std::size_t obs_dim,
                               std::mt19937_64& rng) {
  if (d == 0 || d > obs_dim) {
    throw ArgumentError("projection: need 0 < d <= D, got d = " + std::to_string(d) +
                        ", D = " + std::to_string(obs_dim));
  }
  ProjectionSpec spec;
  spec.kind = kind;
  switch (kind) {
    case ProjectionKind::linear:
      do {
        spec.linear = gaussian_matrix(d, obs_dim, 1.0, rng);
      } while (!full_row_rank(spec.linear));
      break;
    case ProjectionKind::mlp3: {
      const std::size_t h = kGeneratorHidden;
      const std::size_t fan_in[3] = {d, h, h};
      const std::size_t fan_out[3] = {h, h, obs_dim};
      for (int l = 0; l < 3; ++l) {
        spec.mlp_w.push_back(
            gaussian_matrix(fan_in[l], fan_out[l], 1.0 / std::sqrt(double(fan_in[l])), rng));
        spec.mlp_b.emplace_back(1, fan_out[l]);
      }
      break;
    }
    case ProjectionKind::blocks: {
      const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(obs_dim))));
      if (side * side != obs_dim) {
        throw ArgumentError("blocks projection: D must be a square image size");
      }
      spec.geometry = block_layout(d, side, side);
      break;
    }
  }
  return spec;
}

Matrix project(const Matrix& z, const ProjectionSpec& spec) {
  if (z.cols() != spec.latent_dim()) {
    throw ArgumentError("project: latent width " + std::to_string(z.cols()) + " vs " +
                        std::to_string(spec.latent_dim()));
  }
  switch (spec.kind) {
    case ProjectionKind::linear: return matmul(z, spec.linear);
    case ProjectionKind::mlp3: {
      Matrix h = z;
      for (std::size_t l = 0; l < spec.mlp_w.size(); ++l) {
        h = matmul(h, spec.mlp_w[l]);
        add_bias(h, spec.mlp_b[l]);
        if (l + 1 < spec.mlp_w.size()) kernels::tanh(h.size(), h.data(), h.data());
      }
      return h;
    }
    case ProjectionKind::blocks: {
      const auto& g = spec.geometry;
      Matrix img(z.rows(), g.height * g.width);
      for (std::size_t n = 0; n < z.rows(); ++n) {
        for (std::size_t i = 0; i < g.blocks.size(); ++i) {
          const Rect& b = g.blocks[i];
          const double v = logistic(z(n, i));
          for (std::size_t r = b.row0; r < b.row0 + b.rows; ++r)
            for (std::size_t c = b.col0; c < b.col0 + b.cols; ++c) img(n, r * g.width + c) = v;
        }
      }
      return img;
    }
  }
  return {};
}

Matrix block_intensities(const Matrix& images, const BlockGeometry& g) {
  if (images.cols() != g.height * g.width) throw ArgumentError("block_intensities: image size");
  Matrix out(images.rows(), g.blocks.size());
  for (std::size_t n = 0; n < images.rows(); ++n) {
    for (std::size_t i = 0; i < g.blocks.size(); ++i) {
      const Rect& b = g.blocks[i];
      double s = 0.0;
      for (std::size_t r = b.row0; r < b.row0 + b.rows; ++r)
        for (std::size_t c = b.col0; c < b.col0 + b.cols; ++c) s += images(n, r * g.width + c);
      out(n, i) = s / static_cast<double>(b.rows * b.cols);
    }
  }
  return out;
}

GroundTruth sample_ground_truth(const GroundTruthConfig& config, std::mt19937_64& rng) {
  const std::size_t obs_dim =
      config.projection == ProjectionKind::blocks && config.obs_dim == 0 ? 1024 : config.obs_dim;
  if (config.d > obs_dim) throw ArgumentError("ground truth: d exceeds D");
  if (!std::isfinite(config.log_sigma)) throw ArgumentError("ground truth: log sigma not finite");
  auto dag = sample_er_dag(config.d, config.expected_degree, rng);
  Matrix lower = sample_parameters(dag.lower_support, rng);
  GroundTruth gt;
  gt.scm = {dag.perm, std::move(lower), {config.log_sigma}};
  gt.projection = make_projection(config.projection, config.d, obs_dim, rng);
  return gt;
}

Dataset generate_dataset(const GroundTruth& gt, std::size_t n_obs, const InterventionPlan& plan,
                         std::mt19937_64& rng, double intervention_std) {
  const std::size_t d = gt.d();
  std::size_t n = n_obs;
  for (const auto& set : plan) {
    if (set.mask.size() != d) throw ArgumentError("generate_dataset: mask length");
    n += set.count;
  }
  Dataset data;
  data.n_obs = n_obs;
  data.masks = Matrix(n, d);
  data.intervention_values = Matrix(n, d);
  std::size_t row = n_obs;
  std::normal_distribution<double> value(0.0, intervention_std);
  for (const auto& set : plan) {
    for (std::size_t k = 0; k < set.count; ++k, ++row) {
      for (std::size_t i = 0; i < d; ++i) {
        if (set.mask[i] == 0) continue;
        data.masks(row, i) = 1.0;
        data.intervention_values(row, i) = value(rng);
      }
    }
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(n, d);
  for (auto& v : noise.flat()) v = normal(rng);
  data.z_true = scm::ancestral_sample_rows(gt.weighted_adjacency(), gt.scm.noise, noise,
                                           data.masks, &data.intervention_values);
  data.x = project(data.z_true, gt.projection);
  return data;
}

std::vector<scm::InterventionMask> distinct_masks(const Dataset& data) {
  std::vector<scm::InterventionMask> out;
  std::set<scm::InterventionMask> seen;
  for (std::size_t r = 0; r < data.size(); ++r) {
    scm::InterventionMask m(data.d());
    bool any = false;
    for (std::size_t i = 0; i < data.d(); ++i) {
      m[i] = data.masks(r, i) != 0.0 ? 1 : 0;
      any = any || m[i] != 0;
    }
    if (any && seen.insert(m).second) out.push_back(std::move(m));
  }
  return out;
}

}  // namespace lscm::synth
