#pragma once

// Variational posterior over (P, L, Sigma).
//
// q(L, Sigma) is a diagonal Gaussian over K = d(d-1)/2 + 1 coordinates: the
// strictly lower entries of L in row-major order followed by log sigma.
// q(P | L, Sigma) is a Gumbel-Sinkhorn distribution whose logits come from a
// small MLP applied to the (L, log sigma) draw; the forward pass uses the
// Hungarian hardening of the soft sample.

#include <random>
#include <span>

#include "lscm/autodiff.hpp"
#include "lscm/matrix.hpp"
#include "lscm/scm.hpp"

namespace lscm::posterior {

std::size_t q_size(std::size_t d);

struct LSigmaDraw {
  Matrix flat;  // 1 x K
  Matrix lower;
  scm::NoiseScale noise;
};

// mean + exp(log_std) * noise, scattered into (L, log sigma).
LSigmaDraw sample_l_sigma(const Matrix& mean, const Matrix& log_std,
                          std::span<const double> noise, std::size_t d);

struct LSigmaVars {
  ad::Var flat;
  ad::Var lower;
  ad::Var log_sigma;
};
LSigmaVars sample_l_sigma(ad::Var mean, ad::Var log_std, const Matrix& noise, std::size_t d);

// ---- logit network --------------------------------------------------------

inline constexpr std::size_t kLogitHidden = 64;

// Adds logit.w0/b0/w1/b1/w2/b2 with weights ~ N(0, 1/fan_in) and zero biases.
void init_logit_net(ad::ParamStore& params, std::size_t d, std::mt19937_64& rng,
                    std::size_t hidden = kLogitHidden);
// 1 x K draw -> d x d logits. Two tanh hidden layers, linear output.
ad::Var logit_mlp(ad::Var draw, const ad::ParamVars& vars, std::size_t d);
Matrix logit_mlp(const Matrix& draw, const ad::ParamStore& params, std::size_t d);

// ---- permutations ---------------------------------------------------------

Matrix sample_gumbel(std::size_t d, std::mt19937_64& rng);

// iters rounds of log-space row then column normalisation of (t + gumbel) / tau.
ad::Var gumbel_sinkhorn(ad::Var logits, double tau, int iters, const Matrix& gumbel);
Matrix gumbel_sinkhorn(const Matrix& logits, double tau, int iters, const Matrix& gumbel);

// Permutation maximising sum_r score(r, perm(r)); O(d^3).
scm::Permutation hungarian(const Matrix& score);

ad::Var straight_through(ad::Var soft, const scm::Permutation& hard);

// <P_hard, T> - sum_r logsumexp(T_r) + log(d!): surrogate for log q(P)/p(P).
ad::Var permutation_kl_surrogate(ad::Var logits, const scm::Permutation& hard);

// ---- priors ---------------------------------------------------------------

enum class EdgePrior { horseshoe, gaussian };

struct PriorConfig {
  EdgePrior edge_prior = EdgePrior::horseshoe;
  double horseshoe_scale = 0.0;  // <= 0 selects 1/sqrt(d)
  double edge_gaussian_std = 1.0;
  double sigma_mean = 0.0;
  double sigma_std = 1.0;

  double resolved_horseshoe_scale(std::size_t d) const;
};

inline constexpr double kHorseshoeMinAbs = 1e-10;

// Sum over free entries of log(log(1 + 2 s^2 / l^2)) - log(s) - log(2 pi^3) / 2.
double log_prior_l(const Matrix& lower, double horseshoe_scale);
double log_prior_l(std::span<const double> free_entries, double horseshoe_scale);
ad::Var log_prior_l(ad::Var free_entries, double horseshoe_scale);

double log_prior_sigma(double log_sigma, double prior_mean, double prior_std);
ad::Var log_prior_sigma(ad::Var log_sigma, double prior_mean, double prior_std);

// Single-sample log q(draw) - log p_L(draw) - log p_Sigma(draw).
double kl_q_lsigma(const Matrix& mean, const Matrix& log_std, const Matrix& draw, std::size_t d,
                   const PriorConfig& prior);
ad::Var kl_q_lsigma(ad::Var mean, ad::Var log_std, ad::Var draw, std::size_t d,
                    const PriorConfig& prior);

}  // namespace lscm::posterior
