#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

#include "doctest.h"
#include "lscm/dataset_io.hpp"
#include "lscm/errors.hpp"
#include "lscm/metrics.hpp"
#include "lscm/trainer.hpp"

using namespace lscm;
namespace fs = std::filesystem;
using train::Mode;
using train::TrainConfig;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct Problem {
  synth::GroundTruth gt;
  synth::Dataset data;
};

Problem make_problem(std::size_t d, std::size_t obs_dim, synth::ProjectionKind kind,
                     std::size_t n_obs, std::size_t n_sets, std::size_t per_set,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  synth::GroundTruthConfig gc;
  gc.d = d;
  gc.obs_dim = obs_dim;
  gc.projection = kind;
  Problem p;
  p.gt = synth::sample_ground_truth(gc, rng);
  const auto plan = synth::sample_intervention_plan(d, n_sets, per_set, false, rng);
  p.data = synth::generate_dataset(p.gt, n_obs, plan, rng);
  return p;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lscm_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double log_normal(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -0.5 * u * u - std::log(sd) - 0.5 * kLog2Pi;
}

}  // namespace

TEST_CASE("two-node ELBO by hand") {
  // rows: one observational, one with node 0 intervened to 1.5
  synth::Dataset data;
  data.x = Matrix(2, 2);
  data.x(0, 0) = 0.3, data.x(0, 1) = -0.7;
  data.x(1, 0) = 1.1, data.x(1, 1) = 0.4;
  data.masks = Matrix(2, 2);
  data.masks(1, 0) = 1;
  data.intervention_values = Matrix(2, 2);
  data.intervention_values(1, 0) = 1.5;
  data.z_true = Matrix(2, 2);
  data.n_obs = 1;

  for (bool clamp : {true, false}) {
    CAPTURE(clamp);
    TrainConfig c;
    c.clamp_interventions = clamp;
    auto s = train::init_state(c, 2, 2);
    const double m_l = 0.8, m_s = -1.2, ls_l = -0.5, ls_s = -2.0;
    s.params.at("q.mean")[0] = m_l, s.params.at("q.mean")[1] = m_s;
    s.params.at("q.log_std")[0] = ls_l, s.params.at("q.log_std")[1] = ls_s;
    Matrix w0(2, 2);
    w0(0, 0) = 1.0, w0(0, 1) = -0.5, w0(1, 0) = 0.25, w0(1, 1) = 2.0;
    s.params.at("dec.w0") = w0;
    s.params.at("dec.b0")[0] = 0.1, s.params.at("dec.b0")[1] = -0.2;
    s.params.at("dec.log_noise")[0] = -0.3;

    train::ElboNoise n;
    n.rows = {0, 1};
    n.q = Matrix(1, 2);
    n.q[0] = 0.4, n.q[1] = -1.1;
    n.latent = Matrix(2, 2);
    n.latent(0, 0) = 0.9, n.latent(0, 1) = -0.6, n.latent(1, 0) = 0.2, n.latent(1, 1) = 1.3;

    const double l = m_l + std::exp(ls_l) * n.q[0];
    const double log_sigma = m_s + std::exp(ls_s) * n.q[1];
    const double sigma = std::exp(log_sigma);
    double ll = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      const double z0 = (r == 1 && clamp) ? 1.5 : sigma * n.latent(r, 0);
      const double z1 = l * z0 + sigma * n.latent(r, 1);
      for (std::size_t j = 0; j < 2; ++j) {
        const double mean = z0 * w0(0, j) + z1 * w0(1, j) + s.params.at("dec.b0")[j];
        ll += log_normal(data.x(r, j), mean, std::exp(-0.3));
      }
    }
    const double log_q = log_normal(l, m_l, std::exp(ls_l)) + log_normal(log_sigma, m_s, std::exp(ls_s));
    const double hs = 1.0 / std::sqrt(2.0);
    const double log_p_l = std::log(std::log1p(2.0 * hs * hs / (l * l))) - std::log(hs) -
                           0.5 * std::log(2.0 * std::pow(std::numbers::pi, 3));
    const double log_p_s = log_normal(log_sigma, 0.0, 1.0);
    const double expected = ll - (log_q - log_p_l - log_p_s);

    const double got = ad::evaluate(train::elbo_program(c, data, n), s.params);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("minibatch scales the likelihood by N / B") {
  auto p = make_problem(3, 6, synth::ProjectionKind::linear, 20, 2, 10, 4);
  TrainConfig full, half;
  half.batch_size = 20;
  auto s = train::init_state(full, 3, 6);
  std::mt19937_64 rng(9);
  const auto nh = train::draw_noise(half, 3, p.data.size(), rng);
  REQUIRE(nh.rows.size() == 20);
  // the same rows twice over the full-batch program: likelihood doubled
  synth::Dataset sub;
  sub.x = Matrix(20, 6), sub.masks = Matrix(20, 3), sub.intervention_values = Matrix(20, 3);
  sub.z_true = Matrix(20, 3);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 6; ++j) sub.x(i, j) = p.data.x(nh.rows[i], j);
    for (std::size_t j = 0; j < 3; ++j) {
      sub.masks(i, j) = p.data.masks(nh.rows[i], j);
      sub.intervention_values(i, j) = p.data.intervention_values(nh.rows[i], j);
    }
  }
  train::ElboNoise nf = nh;
  std::iota(nf.rows.begin(), nf.rows.end(), 0);
  const double e_batch = ad::evaluate(train::elbo_program(half, p.data, nh), s.params);
  const double e_sub = ad::evaluate(train::elbo_program(full, sub, nf), s.params);
  // e_batch = 2 ll - kl and e_sub = ll - kl, so the difference is ll
  const auto draw = posterior::sample_l_sigma(s.params.at("q.mean"), s.params.at("q.log_std"),
                                              nh.q.flat(), 3);
  const Matrix w = scm::compose_w(scm::Permutation::identity(3), draw.lower);
  const Matrix z = scm::ancestral_sample_rows(w, draw.noise, nh.latent, sub.masks, &sub.intervention_values);
  const Matrix mean = decoder::decode(z, s.params, decoder::Kind::linear);
  const double ll = decoder::log_likelihood(sub.x.flat(), mean.flat(), s.params.at("dec.log_noise")[0]);
  CHECK(e_batch - e_sub == doctest::Approx(ll).epsilon(1e-10));
}

TEST_CASE("fixed-ordering ELBO gradient matches finite differences") {
  for (auto kind : {decoder::Kind::linear, decoder::Kind::mlp3}) {
    for (bool clamp : {true, false}) {
      CAPTURE(decoder::kind_name(kind));
      CAPTURE(clamp);
      auto p = make_problem(3, 8, synth::ProjectionKind::linear, 2, 2, 1, 11);
      REQUIRE(p.data.size() == 4);
      TrainConfig c;
      c.decoder = kind;
      c.decoder_hidden = 6;
      c.clamp_interventions = clamp;
      c.ordering = p.gt.scm.perm;
      c.q_mean_init_std = 0.7;
      auto s = train::init_state(c, 3, 8);
      std::mt19937_64 rng(3);
      const auto noise = train::draw_noise(c, 3, p.data.size(), rng);
      ad::GradCheckOptions opt;
      opt.abs_floor = 1e-4;
      const auto rep = ad::check_gradients(train::elbo_program(c, p.data, noise), s.params, 1e-4,
                                           1e-3, opt);
      CAPTURE(rep.worst_param);
      CAPTURE(rep.max_rel_error);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("learned mode: forward value and decoder gradient") {
  auto p = make_problem(4, 8, synth::ProjectionKind::linear, 3, 2, 2, 12);
  TrainConfig c;
  c.mode = Mode::learn_permutation;
  c.logit_hidden = 8;
  auto s = train::init_state(c, 4, 8);
  CHECK(s.params.contains("logit.w0"));
  std::mt19937_64 rng(5);
  const auto noise = train::draw_noise(c, 4, p.data.size(), rng);
  REQUIRE(noise.gumbel.rows() == 4);

  // the straight-through forward value is the hard permutation: the ELBO equals
  // the fixed-mode ELBO under that ordering, minus the permutation surrogate
  const auto draw = posterior::sample_l_sigma(s.params.at("q.mean"), s.params.at("q.log_std"),
                                              noise.q.flat(), 4);
  const Matrix logits = posterior::logit_mlp(draw.flat, s.params, 4);
  const auto hard = posterior::hungarian(posterior::gumbel_sinkhorn(logits, 1.0, 20, noise.gumbel));
  TrainConfig fixed = c;
  fixed.mode = Mode::fixed_ordering;
  fixed.ordering = hard;
  ad::Tape tape;
  const double surrogate =
      posterior::permutation_kl_surrogate(tape.constant(logits), hard).value()[0];
  const double learned = ad::evaluate(train::elbo_program(c, p.data, noise), s.params);
  const double fixed_value = ad::evaluate(train::elbo_program(fixed, p.data, noise), s.params);
  CHECK(learned == doctest::Approx(fixed_value - surrogate).epsilon(1e-12));

  // decoder parameters do not pass through the straight-through estimator, so
  // their gradient is exact
  const auto program = train::elbo_program(c, p.data, noise);
  const auto g = ad::grad(program, s.params);
  double worst = 0.0;
  const double h = 1e-5;
  for (const char* name : {"dec.w0", "dec.b0", "dec.log_noise"}) {
    for (std::size_t i = 0; i < s.params.at(name).size(); ++i) {
      auto plus = s.params, minus = s.params;
      plus.at(name)[i] += h;
      minus.at(name)[i] -= h;
      const double num = (ad::evaluate(program, plus) - ad::evaluate(program, minus)) / (2 * h);
      const double ana = g.grads.at(name)[i];
      worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-4}));
    }
  }
  CHECK(worst < 1e-5);
  for (double v : g.grads.at("logit.w0").flat()) CHECK(std::isfinite(v));
}

TEST_CASE("fixed mode without an ordering uses the identity") {
  auto p = make_problem(3, 5, synth::ProjectionKind::linear, 10, 1, 5, 13);
  TrainConfig none, ident;
  ident.ordering = scm::Permutation::identity(3);
  auto s = train::init_state(none, 3, 5);
  std::mt19937_64 rng(1);
  const auto noise = train::draw_noise(none, 3, p.data.size(), rng);
  CHECK(noise.gumbel.size() == 0);
  CHECK(ad::evaluate(train::elbo_program(none, p.data, noise), s.params) ==
        ad::evaluate(train::elbo_program(ident, p.data, noise), s.params));
  CHECK(train::mean_model(none, s).perm == scm::Permutation::identity(3));
  TrainConfig bad;
  bad.ordering = scm::Permutation::identity(4);
  CHECK_THROWS_AS(train::init_state(bad, 3, 5), ConfigError);
}

TEST_CASE("training loop") {
  auto p = make_problem(4, 10, synth::ProjectionKind::linear, 100, 4, 20, 14);
  TrainConfig c;
  c.ordering = p.gt.scm.perm;

  SUBCASE("zero epochs leaves the state alone") {
    c.epochs = 0;
    auto s = train::init_state(c, 4, 10);
    const auto before = s.params;
    int calls = 0;
    const auto h = train::train(c, s, p.data, [&](const train::TrainState&) {
      ++calls;
      return nlohmann::json::object();
    });
    CHECK(s.params == before);
    CHECK(s.epoch == 0);
    CHECK(h.elbo.empty());
    CHECK(calls == 1);
  }

  SUBCASE("finite trace, hook cadence, improvement") {
    c.epochs = 200;
    c.eval_interval = 50;
    auto s = train::init_state(c, 4, 10);
    std::vector<std::uint64_t> seen;
    const auto h = train::train(c, s, p.data, [&](const train::TrainState& st) {
      seen.push_back(st.epoch);
      return nlohmann::json{{"epoch", st.epoch}};
    });
    CHECK_FALSE(h.diverged);
    REQUIRE(h.elbo.size() == 200);
    for (const auto& [e, v] : h.elbo) CHECK(std::isfinite(v));
    CHECK(seen == std::vector<std::uint64_t>{50, 100, 150, 200});
    CHECK(s.epoch == 200);
    CHECK(s.adam.step == 200);
    double first = 0, last = 0;
    for (int i = 0; i < 20; ++i) first += h.elbo[i].second, last += h.elbo[180 + i].second;
    CHECK(last > first);
  }

  SUBCASE("determinism") {
    c.epochs = 60;
    auto a = train::init_state(c, 4, 10), b = train::init_state(c, 4, 10);
    train::train(c, a, p.data);
    train::train(c, b, p.data);
    CHECK(a.params == b.params);
    CHECK(a.elbo_trace == b.elbo_trace);
    TrainConfig other = c;
    other.seed = 1;
    auto o = train::init_state(other, 4, 10);
    train::train(other, o, p.data);
    CHECK_FALSE(o.params == a.params);
  }

  SUBCASE("shape mismatch") {
    auto s = train::init_state(c, 4, 9);
    CHECK_THROWS_AS(train::elbo_step(c, s, p.data), DataError);
  }

  SUBCASE("divergence is reported") {
    c.epochs = 5;
    auto s = train::init_state(c, 4, 10);
    s.params.at("dec.log_noise")[0] = -1e6;  // precision overflows
    const auto h = train::train(c, s, p.data);
    CHECK(h.diverged);
    CHECK(h.message.find("non-finite ELBO") != std::string::npos);
    CHECK(s.epoch == 0);
  }
}

TEST_CASE("checkpoints") {
  auto p = make_problem(4, 10, synth::ProjectionKind::linear, 60, 3, 20, 15);
  const auto dir = scratch("ckpt");
  for (Mode mode : {Mode::fixed_ordering, Mode::learn_permutation}) {
    CAPTURE(train::mode_name(mode));
    TrainConfig c;
    c.mode = mode;
    c.epochs = 80;
    c.batch_size = 50;

    auto straight = train::init_state(c, 4, 10);
    train::train(c, straight, p.data);

    TrainConfig first = c;
    first.epochs = 30;
    auto part = train::init_state(first, 4, 10);
    train::train(first, part, p.data);
    const auto path = dir / "state.json";
    train::save_checkpoint(path, first, part);

    auto loaded = train::load_checkpoint(path, first);
    CHECK(loaded.params == part.params);
    CHECK(loaded.adam.m == part.adam.m);
    CHECK(loaded.adam.v == part.adam.v);
    CHECK(loaded.adam.step == part.adam.step);
    CHECK(loaded.epoch == 30);
    CHECK(loaded.rng == part.rng);
    CHECK(loaded.elbo_trace == part.elbo_trace);

    // more epochs is the same trajectory
    auto resumed = train::load_checkpoint(path, c);
    train::train(c, resumed, p.data);
    CHECK(resumed.params == straight.params);
    CHECK(resumed.elbo_trace == straight.elbo_trace);

    TrainConfig changed = c;
    changed.lr = 0.001;
    CHECK_THROWS_AS(train::load_checkpoint(path, changed), CheckpointError);
    TrainConfig reseeded = c;
    reseeded.seed = 42;
    CHECK_THROWS_AS(train::load_checkpoint(path, reseeded), CheckpointError);
  }
  io::write_text(dir / "junk.json", "{\"format\": 3}");
  CHECK_THROWS_AS(train::load_checkpoint(dir / "junk.json", TrainConfig{}), CheckpointError);
  CHECK_THROWS(train::load_checkpoint(dir / "missing.json", TrainConfig{}));
}

TEST_CASE("ground-truth state is a perfect model") {
  for (auto kind : {synth::ProjectionKind::linear, synth::ProjectionKind::mlp3}) {
    CAPTURE(synth::projection_name(kind));
    auto p = make_problem(5, 20, kind, 300, 5, 40, 16);
    TrainConfig c;
    c.decoder = kind == synth::ProjectionKind::linear ? decoder::Kind::linear : decoder::Kind::mlp3;
    c.decoder_hidden = synth::kGeneratorHidden;
    c.ordering = p.gt.scm.perm;
    const auto s = train::ground_truth_state(c, p.gt);
    const auto m = train::mean_model(c, s);
    CHECK(max_abs_diff(m.w, p.gt.weighted_adjacency()) < 1e-12);

    eval::EvalConfig ec;
    ec.posterior_samples = 20;
    const auto r = eval::evaluate(c, s, p.gt, &p.data, ec);
    CHECK(r.e_shd == 0.0);
    REQUIRE(r.obs_kl);
    CHECK(*r.obs_kl <= 1e-8);
    REQUIRE(r.mcc);
    CHECK(*r.mcc >= 0.99);
    CHECK(r.l_mse < 1e-12);
  }
  auto p = make_problem(3, 6, synth::ProjectionKind::linear, 10, 1, 5, 17);
  TrainConfig learned;
  learned.mode = Mode::learn_permutation;
  CHECK_THROWS_AS(train::ground_truth_state(learned, p.gt), ArgumentError);
  TrainConfig wrong;
  wrong.decoder = decoder::Kind::mlp3;
  CHECK_THROWS_AS(train::ground_truth_state(wrong, p.gt), ArgumentError);
}

TEST_CASE("interventional images") {
  auto p = make_problem(4, 12, synth::ProjectionKind::linear, 10, 1, 5, 18);
  TrainConfig c;
  c.ordering = p.gt.scm.perm;
  const auto s = train::ground_truth_state(c, p.gt);

  // exact mean under the decoder: propagate E[z] in topological order
  scm::InterventionMask mask = {0, 1, 0, 0};
  const std::vector<double> values = {0.0, 1.7, 0.0, 0.0};
  const Matrix w = scm::mutate_for_intervention(p.gt.weighted_adjacency(), mask);
  const auto order = scm::topological_order(w);
  REQUIRE(order);
  Matrix ez(1, 4);
  for (std::size_t i : *order) {
    if (mask[i]) {
      ez[i] = values[i];
      continue;
    }
    for (std::size_t j = 0; j < 4; ++j) ez[i] += ez[j] * w(j, i);
  }
  const Matrix exact = synth::project(ez, p.gt.projection);

  std::mt19937_64 rng(2);
  double err_small = 0.0, err_big = 0.0;
  const int reps = 8;
  for (int rep = 0; rep < reps; ++rep) {
    err_small += max_abs_diff(
        train::sample_interventional_images(c, s, mask, 400, rng, &values).mean, exact);
    err_big += max_abs_diff(
        train::sample_interventional_images(c, s, mask, 40000, rng, &values).mean, exact);
  }
  // 100x the samples: a tenth of the error, with slack
  CHECK(err_big < 0.25 * err_small);
  const auto big = train::sample_interventional_images(c, s, mask, 40000, rng, &values);
  CHECK(big.samples.rows() == 40000);
  CHECK(big.samples.cols() == 12);
  CHECK(max_abs_diff(big.mean, exact) < 0.05);

  // without values the intervened node draws from its own noise with mean zero
  Matrix ez0 = ez;
  ez0.fill(0.0);
  const auto free = train::sample_interventional_images(c, s, mask, 40000, rng);
  CHECK(max_abs_diff(free.mean, synth::project(ez0, p.gt.projection)) < 0.05);

  CHECK_THROWS_AS(train::sample_interventional_images(c, s, {1, 0}, 10, rng), ArgumentError);
  CHECK_THROWS_AS(train::sample_interventional_images(c, s, mask, 0, rng), ArgumentError);
}

TEST_CASE("config hash ignores the schedule only") {
  TrainConfig a, b;
  b.epochs = 17;
  b.eval_interval = 3;
  CHECK(a.hash() == b.hash());
  b.tau = 0.5;
  CHECK(a.hash() != b.hash());
  TrainConfig bad;
  bad.lr = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(train::parse_mode("learn_permutation") == Mode::learn_permutation);
  CHECK_THROWS_AS(train::parse_mode("greedy"), ConfigError);
}

TEST_CASE("one node, one row") {
  // no edges: reconstruction of a single latent minus the sigma terms
  synth::Dataset data;
  data.x = Matrix(1, 2);
  data.x[0] = 0.4, data.x[1] = -0.9;
  data.masks = Matrix(1, 1);
  data.intervention_values = Matrix(1, 1);
  data.z_true = Matrix(1, 1);
  data.n_obs = 1;
  TrainConfig c;
  auto s = train::init_state(c, 1, 2);
  s.params.at("q.mean")[0] = -0.7;
  s.params.at("q.log_std")[0] = -1.5;
  s.params.at("dec.w0")[0] = 1.3, s.params.at("dec.w0")[1] = -0.4;
  s.params.at("dec.b0")[0] = 0.05, s.params.at("dec.b0")[1] = 0.0;
  s.params.at("dec.log_noise")[0] = 0.2;
  train::ElboNoise n;
  n.rows = {0};
  n.q = Matrix(1, 1, 0.6);
  n.latent = Matrix(1, 1, -1.4);

  const double log_sigma = -0.7 + std::exp(-1.5) * 0.6;
  const double z = std::exp(log_sigma) * -1.4;
  const double ll = log_normal(0.4, 1.3 * z + 0.05, std::exp(0.2)) + log_normal(-0.9, -0.4 * z, std::exp(0.2));
  const double expected = ll - (log_normal(log_sigma, -0.7, std::exp(-1.5)) - log_normal(log_sigma, 0.0, 1.0));
  CHECK(ad::evaluate(train::elbo_program(c, data, n), s.params) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ground truth is a local optimum of the expected ELBO") {
  auto p = make_problem(3, 8, synth::ProjectionKind::linear, 100, 3, 50, 19);
  TrainConfig c;
  c.ordering = p.gt.scm.perm;
  auto s = train::ground_truth_state(c, p.gt);
  s.params.at("dec.log_noise")[0] = std::log(0.1);
  auto average = [&](const ad::ParamStore& params) {
    std::mt19937_64 rng(7);  // common random numbers across candidates
    double acc = 0;
    for (int k = 0; k < 200; ++k)
      acc += ad::evaluate(train::elbo_program(c, p.data, train::draw_noise(c, 3, p.data.size(), rng)), params);
    return acc / 200;
  };
  const double at_gt = average(s.params);
  for (double a : {0.95, 1.05}) {
    auto q = s.params;
    q.at("dec.w0") = q.at("dec.w0") * a;
    CHECK(average(q) < at_gt);
  }
  auto shifted = s.params;
  shifted.at("dec.b0").fill(0.05);
  CHECK(average(shifted) < at_gt);
  auto edge = s.params;
  edge.at("q.mean")[0] += 0.1;
  CHECK(average(edge) < at_gt);
}
