#pragma once

// Linear-Gaussian structural causal models with equal noise variance.
//
// Conventions: w(j, i) is the weight of edge j -> i. A model is stored as a
// permutation P and a strictly lower triangular L with W = P^T L^T P, so the
// node at position r of the ordering is P.node_at(r) and parents always sit at
// earlier positions.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lscm/matrix.hpp"

namespace lscm::scm {

class Permutation {
 public:
  Permutation() = default;
  // col_of_row[r] is the column holding the 1 in row r.
  explicit Permutation(std::vector<std::size_t> col_of_row);
  static Permutation identity(std::size_t d);
  static Permutation from_matrix(const Matrix& m);

  std::size_t size() const { return cols_.size(); }
  std::size_t node_at(std::size_t position) const { return cols_[position]; }
  const std::vector<std::size_t>& indices() const { return cols_; }
  Matrix matrix() const;

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<std::size_t> cols_;
};

struct NoiseScale {
  double log_sigma = 0.0;
  double sigma() const { return std::exp(log_sigma); }
};

using InterventionMask = std::vector<std::uint8_t>;

struct LatentScm {
  Permutation perm;
  Matrix lower;  // strictly lower triangular
  NoiseScale noise;

  std::size_t dim() const { return perm.size(); }
  Matrix weighted_adjacency() const;
};

std::size_t num_free_entries(std::size_t d);
void require_strictly_lower(const Matrix& l);

Matrix compose_w(const Permutation& p, const Matrix& lower);
Matrix mutate_for_intervention(const Matrix& w, std::span<const std::uint8_t> mask);

// Kahn's algorithm over the nonzero support; nullopt when a cycle exists.
std::optional<std::vector<std::size_t>> topological_order(const Matrix& w);
bool is_dag(const Matrix& w);

// z_i = sum_j w(j, i) z_j + sigma * noise_i, by forward substitution.
std::vector<double> ancestral_sample(const Matrix& w_mut, NoiseScale sigma,
                                     std::span<const double> noise);

// Row-batched sampling. Row r uses w with the columns of masks.row(r) zeroed.
// When clamp_values is given, intervened coordinates take those values instead
// of sigma * noise.
Matrix ancestral_sample_rows(const Matrix& w, NoiseScale sigma, const Matrix& noise,
                             const Matrix& masks, const Matrix* clamp_values = nullptr);

Matrix observational_covariance(const Matrix& w, NoiseScale sigma);

// KL(N(0, cov_a) || N(0, cov_b)).
double gaussian_kl(const Matrix& cov_a, const Matrix& cov_b);

inline constexpr double kDefaultEdgeThreshold = 0.3;
Matrix binarize(const Matrix& w, double threshold = kDefaultEdgeThreshold);

}  // namespace lscm::scm
