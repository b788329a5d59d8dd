#include "lscm/posterior.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lscm/errors.hpp"

namespace lscm::posterior {

std::size_t q_size(std::size_t d) { return scm::num_free_entries(d) + 1; }

LSigmaDraw sample_l_sigma(const Matrix& mean, const Matrix& log_std,
                          std::span<const double> noise, std::size_t d) {
  const std::size_t k = q_size(d);
  if (mean.size() != k || log_std.size() != k || noise.size() != k) {
    throw ArgumentError("sample_l_sigma: expected " + std::to_string(k) + " coordinates");
  }
  LSigmaDraw out{Matrix(1, k), Matrix(d, d), {}};
  for (std::size_t i = 0; i < k; ++i) out.flat[i] = mean[i] + std::exp(log_std[i]) * noise[i];
  std::size_t idx = 0;
  for (std::size_t r = 1; r < d; ++r)
    for (std::size_t c = 0; c < r; ++c) out.lower(r, c) = out.flat[idx++];
  out.noise.log_sigma = out.flat[k - 1];
  return out;
}

LSigmaVars sample_l_sigma(ad::Var mean, ad::Var log_std, const Matrix& noise, std::size_t d) {
  const std::size_t k = q_size(d);
  if (mean.value().size() != k || noise.size() != k) {
    throw ArgumentError("sample_l_sigma: expected " + std::to_string(k) + " coordinates");
  }
  ad::Tape& tape = *mean.tape();
  Matrix eps = noise;
  eps.reshape(1, k);
  ad::Var flat = mean + ad::exp(log_std) * tape.constant(std::move(eps));
  ad::Var lower = ad::scatter_strict_lower(ad::slice(flat, 0, k - 1), d);
  ad::Var log_sigma = ad::slice(flat, k - 1, 1);
  return {flat, lower, log_sigma};
}

// ---- logit network --------------------------------------------------------

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = normal(rng);
  return m;
}

}  // namespace

void init_logit_net(ad::ParamStore& params, std::size_t d, std::mt19937_64& rng,
                    std::size_t hidden) {
  const std::size_t k = q_size(d);
  params.add("logit.w0", gaussian_matrix(k, hidden, 1.0 / std::sqrt(double(k)), rng));
  params.add("logit.b0", Matrix(1, hidden));
  params.add("logit.w1", gaussian_matrix(hidden, hidden, 1.0 / std::sqrt(double(hidden)), rng));
  params.add("logit.b1", Matrix(1, hidden));
  params.add("logit.w2", gaussian_matrix(hidden, d * d, 1.0 / std::sqrt(double(hidden)), rng));
  params.add("logit.b2", Matrix(1, d * d));
}

ad::Var logit_mlp(ad::Var draw, const ad::ParamVars& vars, std::size_t d) {
  ad::Var h = ad::tanh(ad::add_row(ad::matmul(draw, vars["logit.w0"]), vars["logit.b0"]));
  h = ad::tanh(ad::add_row(ad::matmul(h, vars["logit.w1"]), vars["logit.b1"]));
  ad::Var out = ad::add_row(ad::matmul(h, vars["logit.w2"]), vars["logit.b2"]);
  return ad::reshape(out, d, d);
}

Matrix logit_mlp(const Matrix& draw, const ad::ParamStore& params, std::size_t d) {
  ad::Tape tape;
  ad::ParamVars vars(tape, params);
  Matrix row = draw;
  row.reshape(1, draw.size());
  return logit_mlp(tape.constant(std::move(row)), vars, d).value();
}

// ---- permutations ---------------------------------------------------------

Matrix sample_gumbel(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Matrix g(d, d);
  for (auto& v : g.flat()) {
    double u = uniform(rng);
    while (u <= 0.0) u = uniform(rng);
    v = -std::log(-std::log(u));
  }
  return g;
}

ad::Var gumbel_sinkhorn(ad::Var logits, double tau, int iters, const Matrix& gumbel) {
  if (!(tau > 0.0)) throw ArgumentError("gumbel_sinkhorn: tau must be positive");
  if (iters < 1) throw ArgumentError("gumbel_sinkhorn: need at least one iteration");
  if (!logits.value().same_shape(gumbel)) throw ArgumentError("gumbel_sinkhorn: noise shape");
  ad::Var x = ad::scale(logits + logits.tape()->constant(gumbel), 1.0 / tau);
  for (int i = 0; i < iters; ++i) x = ad::log_normalize_cols(ad::log_normalize_rows(x));
  return ad::exp(x);
}

Matrix gumbel_sinkhorn(const Matrix& logits, double tau, int iters, const Matrix& gumbel) {
  ad::Tape tape;
  Matrix out = gumbel_sinkhorn(tape.constant(logits), tau, iters, gumbel).value();
  if (!all_finite(out)) throw NumericalError("gumbel_sinkhorn: non-finite output");
  return out;
}

scm::Permutation hungarian(const Matrix& score) {
  if (score.rows() != score.cols()) throw ArgumentError("hungarian: square matrix required");
  if (!all_finite(score)) throw ArgumentError("hungarian: non-finite score");
  // Shortest augmenting paths with potentials on cost = -score, 1-based.
  const std::size_t n = score.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[match[j] - 1] = j - 1;
  return scm::Permutation(std::move(col_of_row));
}

ad::Var straight_through(ad::Var soft, const scm::Permutation& hard) {
  return ad::straight_through(soft, hard.matrix());
}

ad::Var permutation_kl_surrogate(ad::Var logits, const scm::Permutation& hard) {
  const std::size_t d = hard.size();
  ad::Tape& tape = *logits.tape();
  double log_fact = 0.0;
  for (std::size_t i = 2; i <= d; ++i) log_fact += std::log(double(i));
  ad::Var matched = ad::dot(logits, tape.constant(hard.matrix()));
  return ad::add_scalar(matched - ad::sum(ad::logsumexp_rows(logits)), log_fact);
}

// ---- priors ---------------------------------------------------------------

double PriorConfig::resolved_horseshoe_scale(std::size_t d) const {
  return horseshoe_scale > 0.0 ? horseshoe_scale : 1.0 / std::sqrt(static_cast<double>(d));
}

namespace {

double horseshoe_constant(double scale) {
  return -std::log(scale) - 0.5 * std::log(2.0 * std::pow(std::numbers::pi, 3));
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0)) throw ArgumentError(std::string(what) + " must be positive");
}

}  // namespace

double log_prior_l(std::span<const double> free_entries, double horseshoe_scale) {
  require_positive(horseshoe_scale, "horseshoe scale");
  const double two_s2 = 2.0 * horseshoe_scale * horseshoe_scale;
  double total = 0.0;
  for (double l : free_entries) {
    const double a = std::max(std::abs(l), kHorseshoeMinAbs);
    total += std::log(std::log1p(two_s2 / (a * a)));
  }
  return total + static_cast<double>(free_entries.size()) * horseshoe_constant(horseshoe_scale);
}

double log_prior_l(const Matrix& lower, double horseshoe_scale) {
  scm::require_strictly_lower(lower);
  std::vector<double> free;
  for (std::size_t r = 1; r < lower.rows(); ++r)
    for (std::size_t c = 0; c < r; ++c) free.push_back(lower(r, c));
  return log_prior_l(free, horseshoe_scale);
}

ad::Var log_prior_l(ad::Var free_entries, double horseshoe_scale) {
  require_positive(horseshoe_scale, "horseshoe scale");
  const double n = static_cast<double>(free_entries.value().size());
  return ad::add_scalar(
      ad::sum(ad::log_horseshoe_kernel(free_entries, horseshoe_scale, kHorseshoeMinAbs)),
      n * horseshoe_constant(horseshoe_scale));
}

double log_prior_sigma(double log_sigma, double prior_mean, double prior_std) {
  require_positive(prior_std, "sigma prior std");
  const double u = (log_sigma - prior_mean) / prior_std;
  return -0.5 * u * u - std::log(prior_std * std::sqrt(2.0 * std::numbers::pi));
}

ad::Var log_prior_sigma(ad::Var log_sigma, double prior_mean, double prior_std) {
  require_positive(prior_std, "sigma prior std");
  ad::Var u = ad::scale(ad::add_scalar(log_sigma, -prior_mean), 1.0 / prior_std);
  return ad::add_scalar(ad::scale(ad::sum_squares(u), -0.5),
                        -std::log(prior_std * std::sqrt(2.0 * std::numbers::pi)));
}

namespace {

ad::Var log_prior_edges(ad::Var free, std::size_t d, const PriorConfig& prior) {
  if (prior.edge_prior == EdgePrior::horseshoe) {
    return log_prior_l(free, prior.resolved_horseshoe_scale(d));
  }
  const double s = prior.edge_gaussian_std;
  require_positive(s, "edge prior std");
  const double n = static_cast<double>(free.value().size());
  return ad::add_scalar(ad::scale(ad::sum_squares(free), -0.5 / (s * s)),
                        -n * std::log(s * std::sqrt(2.0 * std::numbers::pi)));
}

}  // namespace

ad::Var kl_q_lsigma(ad::Var mean, ad::Var log_std, ad::Var draw, std::size_t d,
                    const PriorConfig& prior) {
  const std::size_t k = q_size(d);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  ad::Var standardized = (draw - mean) * ad::exp(ad::neg(log_std));
  ad::Var log_q = ad::add_scalar(ad::scale(ad::sum_squares(standardized), -0.5) - ad::sum(log_std),
                                 -0.5 * static_cast<double>(k) * log_2pi);
  ad::Var log_p_l = log_prior_edges(ad::slice(draw, 0, k - 1), d, prior);
  ad::Var log_p_s = log_prior_sigma(ad::slice(draw, k - 1, 1), prior.sigma_mean, prior.sigma_std);
  return log_q - log_p_l - log_p_s;
}

double kl_q_lsigma(const Matrix& mean, const Matrix& log_std, const Matrix& draw, std::size_t d,
                   const PriorConfig& prior) {
  ad::Tape tape;
  Matrix m = mean, s = log_std, x = draw;
  m.reshape(1, m.size());
  s.reshape(1, s.size());
  x.reshape(1, x.size());
  return kl_q_lsigma(tape.constant(std::move(m)), tape.constant(std::move(s)),
                     tape.constant(std::move(x)), d, prior)
      .value()[0];
}

}  // namespace lscm::posterior
