#pragma once

// Likelihood model p(X | Z): a decoder from latents to observation means and
// an isotropic Gaussian log-density with a learned scalar noise.

#include <random>
#include <span>
#include <string>

#include "lscm/autodiff.hpp"
#include "lscm/matrix.hpp"

namespace lscm::decoder {

enum class Kind { linear, mlp3 };

std::string kind_name(Kind kind);
Kind parse_kind(const std::string& name);

inline constexpr std::size_t kMlpHidden = 128;

// Adds dec.w0/dec.b0 (linear) or dec.w0..dec.b2 (mlp3) plus dec.log_noise.
void init_params(ad::ParamStore& params, Kind kind, std::size_t d, std::size_t obs_dim,
                 std::mt19937_64& rng, double log_noise_init = 0.0,
                 std::size_t hidden = kMlpHidden);

// z: N x d -> N x D means.
ad::Var decode(ad::Var z, const ad::ParamVars& vars, Kind kind);
Matrix decode(const Matrix& z, const ad::ParamStore& params, Kind kind);

// Sum over all entries of log N(x; mean, exp(log_noise)^2).
double log_likelihood(std::span<const double> x, std::span<const double> mean, double log_noise);
ad::Var log_likelihood(ad::Var mean, const Matrix& x, ad::Var log_noise);

}  // namespace lscm::decoder
