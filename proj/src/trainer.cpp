#include "lscm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "lscm/dataset_io.hpp"
#include "lscm/errors.hpp"

namespace lscm::train {

using nlohmann::json;

std::string mode_name(Mode mode) {
  return mode == Mode::fixed_ordering ? "fixed_ordering" : "learn_permutation";
}

Mode parse_mode(const std::string& name) {
  if (name == "fixed_ordering") return Mode::fixed_ordering;
  if (name == "learn_permutation") return Mode::learn_permutation;
  throw ConfigError("unknown mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (sinkhorn_iters < 1) throw ConfigError("sinkhorn_iters must be at least 1");
  if (!(edge_threshold > 0.0)) throw ConfigError("edge_threshold must be positive");
  if (perm_kl_coef < 0.0) throw ConfigError("perm_kl_coef must be nonnegative");
  if (!(prior.sigma_std > 0.0)) throw ConfigError("sigma prior std must be positive");
  if (!(prior.edge_gaussian_std > 0.0)) throw ConfigError("edge prior std must be positive");
  if (!(q_mean_init_std >= 0.0)) throw ConfigError("q_mean_init_std must be nonnegative");
  if (decoder_hidden == 0 || logit_hidden == 0) throw ConfigError("hidden widths must be positive");
}

namespace {

json config_json(const TrainConfig& c, bool with_schedule) {
  json j;
  if (with_schedule) {
    j["epochs"] = c.epochs;
    j["eval_interval"] = c.eval_interval;
  }
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["mode"] = mode_name(c.mode);
  j["seed"] = c.seed;
  j["tau"] = c.tau;
  j["sinkhorn_iters"] = c.sinkhorn_iters;
  j["perm_kl_coef"] = c.perm_kl_coef;
  j["edge_prior"] = c.prior.edge_prior == posterior::EdgePrior::horseshoe ? "horseshoe" : "gaussian";
  j["horseshoe_scale"] = c.prior.horseshoe_scale;
  j["edge_gaussian_std"] = c.prior.edge_gaussian_std;
  j["sigma_prior_mean"] = c.prior.sigma_mean;
  j["sigma_prior_std"] = c.prior.sigma_std;
  j["edge_threshold"] = c.edge_threshold;
  j["decoder"] = decoder::kind_name(c.decoder);
  j["decoder_hidden"] = c.decoder_hidden;
  j["logit_hidden"] = c.logit_hidden;
  j["clamp_interventions"] = c.clamp_interventions;
  j["q_mean_init_std"] = c.q_mean_init_std;
  j["q_log_std_init"] = c.q_log_std_init;
  j["log_noise_init"] = c.log_noise_init;
  j["ordering"] = c.ordering ? json(c.ordering->indices()) : json(nullptr);
  return j;
}

Matrix gaussian_row(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(1, n);
  for (auto& v : m.flat()) v = normal(rng);
  return m;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = normal(rng);
  return m;
}

scm::Permutation fixed_ordering(const TrainConfig& config, std::size_t d) {
  if (!config.ordering) return scm::Permutation::identity(d);
  if (config.ordering->size() != d) throw ConfigError("ordering length does not match d");
  return *config.ordering;
}

struct Batch {
  Matrix x;
  Matrix masks;
  Matrix values;
  double scale = 1.0;  // N / B
};

std::shared_ptr<const Batch> make_batch(const synth::Dataset& data,
                                         const std::vector<std::size_t>& rows) {
  auto b = std::make_shared<Batch>();
  if (rows.size() == data.size()) {
    b->x = data.x;
    b->masks = data.masks;
    b->values = data.intervention_values;
    return b;
  }
  b->x = Matrix(rows.size(), data.obs_dim());
  b->masks = Matrix(rows.size(), data.d());
  b->values = Matrix(rows.size(), data.d());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data.x.row(rows[i]).data(), data.obs_dim(), b->x.row(i).data());
    std::copy_n(data.masks.row(rows[i]).data(), data.d(), b->masks.row(i).data());
    std::copy_n(data.intervention_values.row(rows[i]).data(), data.d(), b->values.row(i).data());
  }
  b->scale = static_cast<double>(data.size()) / static_cast<double>(rows.size());
  return b;
}

std::string param_norms(const ad::ParamStore& params) {
  std::ostringstream out;
  for (const auto& [name, m] : params.entries()) {
    double s = 0.0;
    for (double v : m.flat()) s += v * v;
    out << " " << name << "=" << std::sqrt(s);
  }
  return out.str();
}

ModelDraw draw_from_flat(const TrainConfig& config, const TrainState& state, const Matrix& flat,
                         const Matrix* gumbel) {
  const std::size_t d = state.d;
  const std::size_t k = posterior::q_size(d);
  Matrix zeros(1, k);
  auto lsd = posterior::sample_l_sigma(flat, zeros, zeros.flat(), d);
  ModelDraw out;
  out.lower = lsd.lower;
  out.noise = lsd.noise;
  if (config.mode == Mode::fixed_ordering) {
    out.perm = fixed_ordering(config, d);
  } else {
    const Matrix logits = posterior::logit_mlp(flat, state.params, d);
    const Matrix g = gumbel != nullptr ? *gumbel : Matrix(d, d);
    out.perm = posterior::hungarian(
        posterior::gumbel_sinkhorn(logits, config.tau, config.sinkhorn_iters, g));
  }
  out.w = scm::compose_w(out.perm, out.lower);
  return out;
}

}  // namespace

json TrainConfig::to_json() const { return config_json(*this, true); }

std::string TrainConfig::hash() const { return io::hex64(io::fnv1a(config_json(*this, false).dump())); }

TrainState init_state(const TrainConfig& config, std::size_t d, std::size_t obs_dim) {
  config.validate();
  if (d == 0 || obs_dim == 0) throw ArgumentError("init_state: empty dimensions");
  if (config.mode == Mode::fixed_ordering) (void)fixed_ordering(config, d);
  TrainState s;
  s.d = d;
  s.obs_dim = obs_dim;
  s.rng.seed(config.seed);
  const std::size_t k = posterior::q_size(d);
  Matrix mean = gaussian_row(k, s.rng) * config.q_mean_init_std;
  s.params.add("q.mean", std::move(mean));
  s.params.add("q.log_std", Matrix(1, k, config.q_log_std_init));
  if (config.mode == Mode::learn_permutation) {
    posterior::init_logit_net(s.params, d, s.rng, config.logit_hidden);
  }
  decoder::init_params(s.params, config.decoder, d, obs_dim, s.rng, config.log_noise_init,
                       config.decoder_hidden);
  s.adam = ad::adam_init(s.params);
  return s;
}

ElboNoise draw_noise(const TrainConfig& config, std::size_t d, std::size_t n_rows,
                     std::mt19937_64& rng) {
  ElboNoise n;
  n.rows.resize(n_rows);
  std::iota(n.rows.begin(), n.rows.end(), 0);
  if (config.batch_size > 0 && config.batch_size < n_rows) {
    std::shuffle(n.rows.begin(), n.rows.end(), rng);
    n.rows.resize(config.batch_size);
    std::sort(n.rows.begin(), n.rows.end());
  }
  n.q = gaussian_row(posterior::q_size(d), rng);
  if (config.mode == Mode::learn_permutation) n.gumbel = posterior::sample_gumbel(d, rng);
  n.latent = gaussian_matrix(n.rows.size(), d, rng);
  return n;
}

ad::LossProgram elbo_program(const TrainConfig& config, const synth::Dataset& data,
                             const ElboNoise& noise) {
  const std::size_t d = data.d();
  if (noise.latent.rows() != noise.rows.size() || noise.latent.cols() != d) {
    throw ArgumentError("elbo_program: latent noise shape");
  }
  auto batch = make_batch(data, noise.rows);
  const scm::Permutation ordering =
      config.mode == Mode::fixed_ordering ? fixed_ordering(config, d) : scm::Permutation{};
  return [config, batch, noise, ordering, d](ad::Tape& tape, const ad::ParamVars& vars) {
    auto draw = posterior::sample_l_sigma(vars["q.mean"], vars["q.log_std"], noise.q, d);
    ad::Var p;
    ad::Var perm_term;
    if (config.mode == Mode::fixed_ordering) {
      p = tape.constant(ordering.matrix());
    } else {
      ad::Var logits = posterior::logit_mlp(draw.flat, vars, d);
      ad::Var soft =
          posterior::gumbel_sinkhorn(logits, config.tau, config.sinkhorn_iters, noise.gumbel);
      const scm::Permutation hard = posterior::hungarian(soft.value());
      p = posterior::straight_through(soft, hard);
      perm_term = ad::scale(posterior::permutation_kl_surrogate(logits, hard), config.perm_kl_coef);
    }
    ad::Var w = ad::matmul(ad::matmul(ad::transpose(p), ad::transpose(draw.lower)), p);
    ad::Var z = ad::ancestral_sample(w, draw.log_sigma, noise.latent, batch->masks,
                                     config.clamp_interventions ? &batch->values : nullptr);
    ad::Var mean = decoder::decode(z, vars, config.decoder);
    ad::Var ll = decoder::log_likelihood(mean, batch->x, vars["dec.log_noise"]);
    ad::Var kl = posterior::kl_q_lsigma(vars["q.mean"], vars["q.log_std"], draw.flat, d,
                                        config.prior);
    ad::Var elbo = ad::scale(ll, batch->scale) - kl;
    if (perm_term.valid()) elbo = elbo - perm_term;
    return elbo;
  };
}

StepResult elbo_step(const TrainConfig& config, TrainState& state, const synth::Dataset& data) {
  if (data.d() != state.d || data.obs_dim() != state.obs_dim) {
    throw DataError("dataset shape does not match the trained model");
  }
  const ElboNoise noise = draw_noise(config, state.d, data.size(), state.rng);
  auto eval = ad::grad(elbo_program(config, data, noise), state.params);
  if (!std::isfinite(eval.value)) {
    throw NumericalError("non-finite ELBO at epoch " + std::to_string(state.epoch) +
                         "; parameter norms:" + param_norms(state.params));
  }
  return {eval.value, std::move(eval.grads)};
}

History train(const TrainConfig& config, TrainState& state, const synth::Dataset& data,
              const EvalHook& hook) {
  config.validate();
  History h;
  while (state.epoch < config.epochs) {
    try {
      StepResult r = elbo_step(config, state, data);
      ad::adam_step(state.params, r.grads, state.adam, config.lr, ad::Direction::ascend);
      ++state.epoch;
      state.elbo_trace.push_back(r.elbo);
      h.elbo.emplace_back(state.epoch, r.elbo);
    } catch (const NumericalError& e) {
      h.diverged = true;
      h.message = e.what();
      break;
    }
    if (hook && config.eval_interval > 0 && state.epoch % config.eval_interval == 0 &&
        state.epoch < config.epochs) {
      h.evaluations.push_back(hook(state));
    }
  }
  if (hook) h.evaluations.push_back(hook(state));
  return h;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

json store_json(const ad::ParamStore& s) {
  json j = json::array();
  for (const auto& [name, m] : s.entries()) j.push_back({{"name", name}, {"value", io::matrix_to_json(m)}});
  return j;
}

ad::ParamStore store_from_json(const json& j) {
  ad::ParamStore s;
  for (const auto& e : j) s.add(e.at("name").get<std::string>(), io::matrix_from_json(e.at("value")));
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     const TrainState& state) {
  json j;
  j["format"] = "lscm-checkpoint-1";
  j["config_hash"] = config.hash();
  j["config"] = config.to_json();
  j["d"] = state.d;
  j["D"] = state.obs_dim;
  j["epoch"] = state.epoch;
  j["params"] = store_json(state.params);
  j["adam"] = {{"step", state.adam.step}, {"m", store_json(state.adam.m)}, {"v", store_json(state.adam.v)}};
  std::ostringstream rng;
  rng << state.rng;
  j["rng"] = rng.str();
  j["elbo_trace"] = state.elbo_trace;
  const auto tmp = path.string() + ".tmp";
  io::write_text(tmp, j.dump() + "\n");
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config) {
  const json j = io::read_json(path);
  try {
    if (j.at("format") != "lscm-checkpoint-1") throw CheckpointError("unknown checkpoint format");
    const std::string h = j.at("config_hash").get<std::string>();
    if (h != config.hash()) {
      throw CheckpointError("config hash mismatch: checkpoint " + h + ", current " + config.hash());
    }
    TrainState s;
    s.d = j.at("d").get<std::size_t>();
    s.obs_dim = j.at("D").get<std::size_t>();
    s.epoch = j.at("epoch").get<std::uint64_t>();
    s.params = store_from_json(j.at("params"));
    s.adam.step = j.at("adam").at("step").get<std::uint64_t>();
    s.adam.m = store_from_json(j.at("adam").at("m"));
    s.adam.v = store_from_json(j.at("adam").at("v"));
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng;
    if (!rng) throw CheckpointError("corrupt RNG state");
    s.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
    const TrainState fresh = init_state(config, s.d, s.obs_dim);
    if (!s.params.same_layout(fresh.params) || !s.adam.m.same_layout(fresh.params) ||
        !s.adam.v.same_layout(fresh.params)) {
      throw CheckpointError("parameter layout does not match the config");
    }
    if (!s.params.all_finite()) throw CheckpointError("non-finite parameters in checkpoint");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
}

// ---- reading the learned model ---------------------------------------------

ModelDraw sample_model(const TrainConfig& config, const TrainState& state, std::mt19937_64& rng) {
  const std::size_t k = posterior::q_size(state.d);
  const Matrix eps = gaussian_row(k, rng);
  auto lsd = posterior::sample_l_sigma(state.params.at("q.mean"), state.params.at("q.log_std"),
                                       eps.flat(), state.d);
  if (config.mode == Mode::learn_permutation) {
    const Matrix g = posterior::sample_gumbel(state.d, rng);
    return draw_from_flat(config, state, lsd.flat, &g);
  }
  return draw_from_flat(config, state, lsd.flat, nullptr);
}

ModelDraw mean_model(const TrainConfig& config, const TrainState& state) {
  return draw_from_flat(config, state, state.params.at("q.mean"), nullptr);
}

Matrix mean_latents(const ModelDraw& model, const Matrix& masks, const Matrix* clamp_values,
                    std::size_t k, std::mt19937_64& rng) {
  if (k == 0) throw ArgumentError("mean_latents: need at least one sample");
  Matrix acc(masks.rows(), masks.cols());
  for (std::size_t s = 0; s < k; ++s) {
    const Matrix eps = gaussian_matrix(masks.rows(), masks.cols(), rng);
    acc = acc + scm::ancestral_sample_rows(model.w, model.noise, eps, masks, clamp_values);
  }
  return acc * (1.0 / static_cast<double>(k));
}

Matrix decode(const TrainConfig& config, const TrainState& state, const Matrix& z) {
  return decoder::decode(z, state.params, config.decoder);
}

InterventionalImages sample_interventional_images(const TrainConfig& config,
                                                  const TrainState& state,
                                                  const scm::InterventionMask& mask,
                                                  std::size_t n, std::mt19937_64& rng,
                                                  const std::vector<double>* values) {
  const std::size_t d = state.d;
  if (mask.size() != d) throw ArgumentError("sample_interventional_images: mask length");
  if (values != nullptr && values->size() != d) {
    throw ArgumentError("sample_interventional_images: value length");
  }
  if (n == 0) throw ArgumentError("sample_interventional_images: n must be positive");
  const ModelDraw model = mean_model(config, state);
  Matrix masks(n, d), clamp(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      masks(r, i) = mask[i];
      if (values != nullptr && mask[i] != 0) clamp(r, i) = (*values)[i];
    }
  const Matrix eps = gaussian_matrix(n, d, rng);
  const Matrix z =
      scm::ancestral_sample_rows(model.w, model.noise, eps, masks, values ? &clamp : nullptr);
  InterventionalImages out;
  out.samples = decode(config, state, z);
  out.mean = Matrix(1, out.samples.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < out.samples.cols(); ++c) out.mean[c] += out.samples(r, c);
  out.mean = out.mean * (1.0 / static_cast<double>(n));
  return out;
}

TrainState ground_truth_state(const TrainConfig& config, const synth::GroundTruth& gt) {
  const auto& proj = gt.projection;
  if (config.mode != Mode::fixed_ordering) {
    throw ArgumentError("ground_truth_state: needs fixed-ordering mode");
  }
  if (config.ordering && !(*config.ordering == gt.scm.perm)) {
    throw ArgumentError("ground_truth_state: ordering differs from the ground truth");
  }
  const bool linear = proj.kind == synth::ProjectionKind::linear && config.decoder == decoder::Kind::linear;
  const bool mlp = proj.kind == synth::ProjectionKind::mlp3 && config.decoder == decoder::Kind::mlp3 &&
                   config.decoder_hidden == synth::kGeneratorHidden;
  if (!linear && !mlp) throw ArgumentError("ground_truth_state: decoder cannot express projection");

  TrainConfig c = config;
  c.ordering = gt.scm.perm;
  TrainState s = init_state(c, gt.d(), gt.obs_dim());
  Matrix& mean = s.params.at("q.mean");
  std::size_t idx = 0;
  for (std::size_t r = 1; r < gt.d(); ++r)
    for (std::size_t col = 0; col < r; ++col) mean[idx++] = gt.scm.lower(r, col);
  mean[idx] = gt.scm.noise.log_sigma;
  s.params.at("q.log_std").fill(-20.0);
  if (linear) {
    s.params.at("dec.w0") = proj.linear;
    s.params.at("dec.b0").fill(0.0);
  } else {
    for (std::size_t l = 0; l < 3; ++l) {
      s.params.at("dec.w" + std::to_string(l)) = proj.mlp_w[l];
      s.params.at("dec.b" + std::to_string(l)) = proj.mlp_b[l];
    }
  }
  s.adam = ad::adam_init(s.params);
  return s;
}

}  // namespace lscm::train
