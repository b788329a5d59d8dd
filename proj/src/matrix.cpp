#include "lscm/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "lscm/kernels.hpp"

namespace lscm {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

void Matrix::reshape(std::size_t rows, std::size_t cols) {
  if (rows * cols != data_.size()) throw std::invalid_argument("Matrix::reshape: size mismatch");
  rows_ = rows;
  cols_ = cols;
}

namespace {
void require_same(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a) +
                                " vs " + shape_string(b));
  }
}
}  // namespace

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same(a, b, "operator+");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same(a, b, "operator-");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Matrix operator*(const Matrix& a, double s) {
  Matrix out = a;
  for (auto& v : out.flat()) v *= s;
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_string(a) + " x " +
                                shape_string(b));
  }
  Matrix c(a.rows(), b.cols());
  kernels::gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data(), false);
  return c;
}

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.flat()) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same(a, b, "max_abs_diff");
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.flat().begin(), m.flat().end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

}  // namespace lscm
