#include "lscm/scm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "lscm/errors.hpp"

namespace lscm::scm {
namespace {

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EigenMat> view(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw ArgumentError(std::string(what) + ": expected square matrix, got " + shape_string(m));
  }
}

std::vector<std::size_t> order_or_throw(const Matrix& w) {
  auto order = topological_order(w);
  if (!order) throw StructuralError("weighted adjacency support contains a cycle");
  return *order;
}

}  // namespace

Permutation::Permutation(std::vector<std::size_t> col_of_row) : cols_(std::move(col_of_row)) {
  std::vector<bool> seen(cols_.size(), false);
  for (std::size_t c : cols_) {
    if (c >= cols_.size() || seen[c]) throw ArgumentError("Permutation: not a bijection");
    seen[c] = true;
  }
}

Permutation Permutation::identity(std::size_t d) {
  std::vector<std::size_t> idx(d);
  for (std::size_t i = 0; i < d; ++i) idx[i] = i;
  return Permutation(std::move(idx));
}

Permutation Permutation::from_matrix(const Matrix& m) {
  require_square(m, "Permutation::from_matrix");
  std::vector<std::size_t> idx(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      if (v == 1.0) {
        idx[r] = c;
        ++ones;
      } else if (v != 0.0) {
        throw ArgumentError("Permutation::from_matrix: entries must be 0 or 1");
      }
    }
    if (ones != 1) throw ArgumentError("Permutation::from_matrix: row without a single 1");
  }
  return Permutation(std::move(idx));
}

Matrix Permutation::matrix() const {
  Matrix m(size(), size());
  for (std::size_t r = 0; r < size(); ++r) m(r, cols_[r]) = 1.0;
  return m;
}

Matrix LatentScm::weighted_adjacency() const { return compose_w(perm, lower); }

std::size_t num_free_entries(std::size_t d) { return d * (d - 1) / 2; }

void require_strictly_lower(const Matrix& l) {
  require_square(l, "edge matrix");
  for (std::size_t r = 0; r < l.rows(); ++r)
    for (std::size_t c = r; c < l.cols(); ++c)
      if (l(r, c) != 0.0) throw ArgumentError("edge matrix must be strictly lower triangular");
}

Matrix compose_w(const Permutation& p, const Matrix& lower) {
  require_strictly_lower(lower);
  if (p.size() != lower.rows()) {
    throw ArgumentError("compose_w: permutation of size " + std::to_string(p.size()) +
                        " vs edge matrix " + shape_string(lower));
  }
  const std::size_t d = p.size();
  Matrix w(d, d);
  // (P^T L^T P)(col(r), col(s)) = L(s, r)
  for (std::size_t s = 0; s < d; ++s)
    for (std::size_t r = 0; r < s; ++r) w(p.node_at(r), p.node_at(s)) = lower(s, r);
  return w;
}

Matrix mutate_for_intervention(const Matrix& w, std::span<const std::uint8_t> mask) {
  require_square(w, "mutate_for_intervention");
  if (mask.size() != w.cols()) throw ArgumentError("mutate_for_intervention: mask length");
  Matrix out = w;
  for (std::size_t i = 0; i < w.cols(); ++i) {
    if (mask[i] == 0) continue;
    for (std::size_t j = 0; j < w.rows(); ++j) out(j, i) = 0.0;
  }
  return out;
}

std::optional<std::vector<std::size_t>> topological_order(const Matrix& w) {
  require_square(w, "topological_order");
  const std::size_t d = w.rows();
  std::vector<std::size_t> indegree(d, 0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i)
      if (w(j, i) != 0.0) ++indegree[i];
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < d; ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::vector<std::size_t> order;
  order.reserve(d);
  while (!ready.empty()) {
    const std::size_t j = ready.front();
    ready.pop_front();
    order.push_back(j);
    for (std::size_t i = 0; i < d; ++i) {
      if (w(j, i) != 0.0 && --indegree[i] == 0) ready.push_back(i);
    }
  }
  if (order.size() != d) return std::nullopt;
  return order;
}

bool is_dag(const Matrix& w) { return topological_order(w).has_value(); }

std::vector<double> ancestral_sample(const Matrix& w_mut, NoiseScale sigma,
                                     std::span<const double> noise) {
  require_square(w_mut, "ancestral_sample");
  if (noise.size() != w_mut.rows()) throw ArgumentError("ancestral_sample: noise length");
  const auto order = order_or_throw(w_mut);
  const double s = sigma.sigma();
  std::vector<double> z(noise.size(), 0.0);
  for (std::size_t i : order) {
    double acc = s * noise[i];
    for (std::size_t j = 0; j < z.size(); ++j) acc += w_mut(j, i) * z[j];
    z[i] = acc;
  }
  return z;
}

Matrix ancestral_sample_rows(const Matrix& w, NoiseScale sigma, const Matrix& noise,
                             const Matrix& masks, const Matrix* clamp_values) {
  require_square(w, "ancestral_sample_rows");
  const std::size_t d = w.rows();
  if (noise.cols() != d || !masks.same_shape(noise)) {
    throw ArgumentError("ancestral_sample_rows: noise/mask shapes");
  }
  if (clamp_values != nullptr && !clamp_values->same_shape(noise)) {
    throw ArgumentError("ancestral_sample_rows: clamp value shape");
  }
  // Zeroing columns only removes edges, so one order serves every row.
  const auto order = order_or_throw(w);
  const double s = sigma.sigma();
  Matrix z(noise.rows(), d);
  for (std::size_t r = 0; r < noise.rows(); ++r) {
    for (std::size_t i : order) {
      if (masks(r, i) != 0.0) {
        z(r, i) = clamp_values != nullptr ? (*clamp_values)(r, i) : s * noise(r, i);
        continue;
      }
      double acc = s * noise(r, i);
      for (std::size_t j = 0; j < d; ++j) acc += w(j, i) * z(r, j);
      z(r, i) = acc;
    }
  }
  return z;
}

Matrix observational_covariance(const Matrix& w, NoiseScale sigma) {
  require_square(w, "observational_covariance");
  const auto d = static_cast<Eigen::Index>(w.rows());
  const EigenMat a = EigenMat::Identity(d, d) - view(w);
  const EigenMat a_inv = a.partialPivLu().inverse();
  const double var = sigma.sigma() * sigma.sigma();
  const EigenMat cov = var * a_inv.transpose() * a_inv;
  Matrix out(w.rows(), w.cols());
  Eigen::Map<EigenMat>(out.data(), d, d) = 0.5 * (cov + cov.transpose());
  if (!all_finite(out)) throw NumericalError("observational_covariance: non-finite entries");
  return out;
}

double gaussian_kl(const Matrix& cov_a, const Matrix& cov_b) {
  require_square(cov_a, "gaussian_kl");
  if (!cov_a.same_shape(cov_b)) throw ArgumentError("gaussian_kl: shape mismatch");
  const auto a = view(cov_a);
  const auto b = view(cov_b);
  const double tol = 1e-9 * (1.0 + std::max(max_abs(cov_a), max_abs(cov_b)));
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > tol ||
      (b - b.transpose()).cwiseAbs().maxCoeff() > tol) {
    throw ArgumentError("gaussian_kl: covariance is not symmetric");
  }
  const Eigen::LLT<EigenMat> la(a);
  const Eigen::LLT<EigenMat> lb(b);
  if (la.info() != Eigen::Success || lb.info() != Eigen::Success) {
    throw ArgumentError("gaussian_kl: covariance is not positive definite");
  }
  const double logdet_a = 2.0 * la.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_b = 2.0 * lb.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double trace = lb.solve(EigenMat(a)).trace();
  const double d = static_cast<double>(cov_a.rows());
  return std::max(0.0, 0.5 * (trace - d + logdet_b - logdet_a));
}

Matrix binarize(const Matrix& w, double threshold) {
  if (!(threshold > 0.0)) throw ArgumentError("binarize: threshold must be positive");
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::abs(w[i]) > threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace lscm::scm
