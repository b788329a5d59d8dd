#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "lscm/kernels.hpp"

using namespace lscm;
using kernels::Isa;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

RowMat view(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return Eigen::Map<const RowMat>(v.data(), r, c);
}

double max_abs_diff(const std::vector<double>& a, const RowMat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b.data()[i]));
  return m;
}

std::vector<Isa> isas() {
  std::vector<Isa> out{Isa::scalar};
  if (kernels::isa_available(Isa::avx2)) out.push_back(Isa::avx2);
  return out;
}

struct Shape {
  std::size_t m, n, k;
};

// Edge shapes around the 4 x 8 register tile, the 256-column panel and the
// 128-deep k block, plus the transpose path threshold of gemm_nt.
const Shape kShapes[] = {{1, 1, 1},    {3, 5, 7},     {4, 8, 1},    {5, 9, 3},
                         {31, 17, 3},  {32, 40, 4},   {33, 7, 129}, {64, 257, 130},
                         {100, 5, 2500}, {2500, 100, 5}, {7, 300, 256}, {128, 128, 128}};

}  // namespace

TEST_CASE("gemm variants match an Eigen product for every ISA") {
  std::mt19937_64 rng(11);
  for (Isa isa : isas()) {
    const auto& t = kernels::table(isa);
    for (const auto& s : kShapes) {
      CAPTURE(kernels::isa_name(isa));
      CAPTURE(s.m);
      CAPTURE(s.n);
      CAPTURE(s.k);
      const double tol = 1e-12 * static_cast<double>(s.k + 1);
      const auto a = randn(s.m * s.k, rng), b = randn(s.k * s.n, rng);
      const auto at = randn(s.k * s.m, rng), bt = randn(s.n * s.k, rng);
      const auto c0 = randn(s.m * s.n, rng);

      std::vector<double> c(s.m * s.n, 99.0);
      t.gemm_nn(s.m, s.n, s.k, a.data(), b.data(), c.data(), false);
      CHECK(max_abs_diff(c, view(a, s.m, s.k) * view(b, s.k, s.n)) < tol);

      c = c0;
      t.gemm_nn(s.m, s.n, s.k, a.data(), b.data(), c.data(), true);
      RowMat expect = view(c0, s.m, s.n) + view(a, s.m, s.k) * view(b, s.k, s.n);
      CHECK(max_abs_diff(c, expect) < tol);

      c.assign(c.size(), -3.0);
      t.gemm_tn(s.m, s.n, s.k, at.data(), b.data(), c.data(), false);
      CHECK(max_abs_diff(c, view(at, s.k, s.m).transpose() * view(b, s.k, s.n)) < tol);

      c = c0;
      t.gemm_tn(s.m, s.n, s.k, at.data(), b.data(), c.data(), true);
      expect = view(c0, s.m, s.n) + view(at, s.k, s.m).transpose() * view(b, s.k, s.n);
      CHECK(max_abs_diff(c, expect) < tol);

      c.assign(c.size(), 5.0);
      t.gemm_nt(s.m, s.n, s.k, a.data(), bt.data(), c.data(), false);
      CHECK(max_abs_diff(c, view(a, s.m, s.k) * view(bt, s.n, s.k).transpose()) < tol);

      c = c0;
      t.gemm_nt(s.m, s.n, s.k, a.data(), bt.data(), c.data(), true);
      expect = view(c0, s.m, s.n) + view(a, s.m, s.k) * view(bt, s.n, s.k).transpose();
      CHECK(max_abs_diff(c, expect) < tol);
    }
  }
}

TEST_CASE("zero-size gemm leaves or clears the output") {
  for (Isa isa : isas()) {
    const auto& t = kernels::table(isa);
    std::vector<double> c(6, 4.0);
    t.gemm_nn(2, 3, 0, nullptr, nullptr, c.data(), true);
    for (double v : c) CHECK(v == 4.0);
    t.gemm_nn(2, 3, 0, nullptr, nullptr, c.data(), false);
    for (double v : c) CHECK(v == 0.0);
  }
}

TEST_CASE("vector kernels: avx2 agrees with the scalar reference") {
  if (!kernels::isa_available(Isa::avx2)) return;
  const auto& s = kernels::table(Isa::scalar);
  const auto& v = kernels::table(Isa::avx2);
  std::mt19937_64 rng(3);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 1000u, 4099u}) {
    CAPTURE(n);
    const auto x = randn(n, rng), y = randn(n, rng);
    const double scale = std::sqrt(static_cast<double>(n) + 1.0);
    CHECK(std::abs(s.dot(n, x.data(), y.data()) - v.dot(n, x.data(), y.data())) < 1e-13 * scale * scale);
    CHECK(std::abs(s.sum_sq_diff(n, x.data(), y.data()) - v.sum_sq_diff(n, x.data(), y.data())) <
          1e-13 * scale * scale);
    auto ys = y, yv = y;
    s.axpy(n, 0.37, x.data(), ys.data());
    v.axpy(n, 0.37, x.data(), yv.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(ys[i] - yv[i]) < 1e-15);
  }
}

TEST_CASE("vector tanh is within a few ulp of std::tanh") {
  std::vector<double> x;
  for (double t = -25.0; t <= 25.0; t += 0.0137) x.push_back(t);
  for (double t : {0.0, -0.0, 1e-300, -1e-12, 0.6249999, 0.625, 0.6250001, 22.0, 400.0, -400.0})
    x.push_back(t);
  for (Isa isa : isas()) {
    std::vector<double> out(x.size());
    kernels::table(isa).tanh(x.size(), x.data(), out.data());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double ref = std::tanh(x[i]);
      const double err = std::abs(out[i] - ref) / std::max(std::abs(ref), 1e-300);
      worst = std::max(worst, ref == 0.0 ? std::abs(out[i]) : err);
    }
    CAPTURE(kernels::isa_name(isa));
    CHECK(worst < 8 * std::numeric_limits<double>::epsilon());
  }
  // in place
  std::vector<double> y = {0.3, -2.0, 5.0};
  kernels::tanh(y.size(), y.data(), y.data());
  CHECK(y[1] == doctest::Approx(std::tanh(-2.0)).epsilon(1e-15));
}

TEST_CASE("tanh propagates nan") {
  for (Isa isa : isas()) {
    double in[5] = {0.1, std::nan(""), 3.0, -1.0, 2.0};
    double out[5];
    kernels::table(isa).tanh(5, in, out);
    CHECK(std::isnan(out[1]));
    CHECK(out[0] == doctest::Approx(std::tanh(0.1)));
  }
}

TEST_CASE("runtime selection") {
  const Isa before = kernels::active_isa();
  kernels::set_active_isa(Isa::scalar);
  CHECK(kernels::active_isa() == Isa::scalar);
  double a[2] = {1, 2}, b[2] = {3, 4};
  CHECK(kernels::dot(2, a, b) == 11.0);
  if (!kernels::isa_available(Isa::avx2)) {
    CHECK_THROWS(kernels::set_active_isa(Isa::avx2));
  }
  kernels::set_active_isa(before);
  CHECK(kernels::isa_name(Isa::scalar) == "scalar");
  CHECK(kernels::isa_name(Isa::avx2) == "avx2");
}
