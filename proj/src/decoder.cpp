#include "lscm/decoder.hpp"

#include <cmath>
#include <numbers>

#include "lscm/errors.hpp"
#include "lscm/kernels.hpp"

namespace lscm::decoder {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = normal(rng);
  return m;
}

ad::Var affine(ad::Var x, const ad::ParamVars& vars, int layer) {
  const std::string i = std::to_string(layer);
  return ad::add_row(ad::matmul(x, vars["dec.w" + i]), vars["dec.b" + i]);
}

}  // namespace

std::string kind_name(Kind kind) { return kind == Kind::linear ? "linear" : "mlp3"; }

Kind parse_kind(const std::string& name) {
  if (name == "linear") return Kind::linear;
  if (name == "mlp3") return Kind::mlp3;
  throw ConfigError("unknown decoder kind '" + name + "'");
}

void init_params(ad::ParamStore& params, Kind kind, std::size_t d, std::size_t obs_dim,
                 std::mt19937_64& rng, double log_noise_init, std::size_t hidden) {
  if (d == 0 || obs_dim == 0) throw ArgumentError("decoder: empty dimensions");
  if (kind == Kind::linear) {
    params.add("dec.w0", gaussian_matrix(d, obs_dim, rng));
    params.add("dec.b0", Matrix(1, obs_dim));
  } else {
    params.add("dec.w0", gaussian_matrix(d, hidden, rng));
    params.add("dec.b0", Matrix(1, hidden));
    params.add("dec.w1", gaussian_matrix(hidden, hidden, rng));
    params.add("dec.b1", Matrix(1, hidden));
    params.add("dec.w2", gaussian_matrix(hidden, obs_dim, rng));
    params.add("dec.b2", Matrix(1, obs_dim));
  }
  params.add("dec.log_noise", Matrix(1, 1, log_noise_init));
}

ad::Var decode(ad::Var z, const ad::ParamVars& vars, Kind kind) {
  if (kind == Kind::linear) return affine(z, vars, 0);
  ad::Var h = ad::tanh(affine(z, vars, 0));
  h = ad::tanh(affine(h, vars, 1));
  return affine(h, vars, 2);
}

Matrix decode(const Matrix& z, const ad::ParamStore& params, Kind kind) {
  const Matrix& w0 = params.at("dec.w0");
  if (z.cols() != w0.rows()) {
    throw ArgumentError("decode: latent width " + std::to_string(z.cols()) + " vs decoder input " +
                        std::to_string(w0.rows()));
  }
  auto affine_plain = [&](const Matrix& x, int layer) {
    const std::string i = std::to_string(layer);
    Matrix out = matmul(x, params.at("dec.w" + i));
    const Matrix& b = params.at("dec.b" + i);
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b[c];
    return out;
  };
  auto tanh_inplace = [](Matrix& m) { kernels::tanh(m.size(), m.data(), m.data()); };
  if (kind == Kind::linear) return affine_plain(z, 0);
  Matrix h = affine_plain(z, 0);
  tanh_inplace(h);
  h = affine_plain(h, 1);
  tanh_inplace(h);
  return affine_plain(h, 2);
}

double log_likelihood(std::span<const double> x, std::span<const double> mean, double log_noise) {
  if (x.size() != mean.size()) throw ArgumentError("log_likelihood: length mismatch");
  const double sq = kernels::sum_sq_diff(x.size(), x.data(), mean.data());
  const double n = static_cast<double>(x.size());
  return -0.5 * sq * std::exp(-2.0 * log_noise) - n * (log_noise + kHalfLog2Pi);
}

ad::Var log_likelihood(ad::Var mean, const Matrix& x, ad::Var log_noise) {
  if (!mean.value().same_shape(x)) {
    throw ArgumentError("log_likelihood: mean " + shape_string(mean.value()) + " vs data " +
                        shape_string(x));
  }
  const double n = static_cast<double>(x.size());
  ad::Var precision = ad::exp(ad::scale(log_noise, -2.0));
  ad::Var quad = ad::scale(ad::sq_error_sum(mean, x) * precision, -0.5);
  return quad - ad::add_scalar(ad::scale(log_noise, n), n * kHalfLog2Pi);
}

}  // namespace lscm::decoder
