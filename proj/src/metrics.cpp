#include "lscm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lscm/errors.hpp"
#include "lscm/kernels.hpp"
#include "lscm/posterior.hpp"
#include "lscm/scm.hpp"

namespace lscm::eval {
namespace {

void require_graph_pair(const Matrix& a, const Matrix& gt) {
  if (gt.rows() != gt.cols() || !a.same_shape(gt)) {
    throw ArgumentError("graph shape " + shape_string(a) + " vs ground truth " + shape_string(gt));
  }
}

bool on(const Matrix& g, std::size_t i, std::size_t j) { return g(i, j) != 0.0; }

// Off-diagonal (score, label) pairs.
std::vector<std::pair<double, bool>> scored_pairs(const Matrix& scores, const Matrix& gt) {
  require_graph_pair(scores, gt);
  std::vector<std::pair<double, bool>> out;
  for (std::size_t i = 0; i < gt.rows(); ++i)
    for (std::size_t j = 0; j < gt.cols(); ++j)
      if (i != j) out.emplace_back(scores(i, j), on(gt, i, j));
  return out;
}

std::optional<double> opt(double v) { return v; }

}  // namespace

double shd(const Matrix& graph, const Matrix& gt) {
  require_graph_pair(graph, gt);
  double total = 0.0;
  for (std::size_t i = 0; i < gt.rows(); ++i) {
    for (std::size_t j = i + 1; j < gt.cols(); ++j) {
      const bool same = on(graph, i, j) == on(gt, i, j) && on(graph, j, i) == on(gt, j, i);
      if (!same) total += 1.0;
    }
  }
  return total;
}

double expected_shd(const std::vector<Matrix>& graphs, const Matrix& gt) {
  if (graphs.empty()) throw ArgumentError("expected_shd: no samples");
  double s = 0.0;
  for (const auto& g : graphs) s += shd(g, gt);
  return s / static_cast<double>(graphs.size());
}

double skeleton_shd(const std::vector<Matrix>& graphs, const Matrix& gt) {
  if (graphs.empty()) throw ArgumentError("skeleton_shd: no samples");
  double s = 0.0;
  for (const auto& g : graphs) {
    require_graph_pair(g, gt);
    for (std::size_t i = 0; i < gt.rows(); ++i)
      for (std::size_t j = i + 1; j < gt.cols(); ++j) {
        const bool a = on(g, i, j) || on(g, j, i);
        const bool b = on(gt, i, j) || on(gt, j, i);
        if (a != b) s += 1.0;
      }
  }
  return s / static_cast<double>(graphs.size());
}

std::optional<double> auroc(const Matrix& scores, const Matrix& gt) {
  auto pairs = scored_pairs(scores, gt);
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].first == pairs[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (pairs[t].second) {
        rank_sum += midrank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::optional<double> auprc(const Matrix& scores, const Matrix& gt) {
  auto pairs = scored_pairs(scores, gt);
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const double pos = static_cast<double>(
      std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.second; }));
  if (pos == 0.0 || pos == static_cast<double>(pairs.size())) return std::nullopt;
  double tp = 0.0, seen = 0.0, area = 0.0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    double new_tp = 0.0;
    while (j < pairs.size() && pairs[j].first == pairs[i].first) {
      if (pairs[j].second) new_tp += 1.0;
      ++j;
    }
    tp += new_tp;
    seen += static_cast<double>(j - i);
    area += (new_tp / pos) * (tp / seen);
    i = j;
  }
  return area;
}

double mcc(const Matrix& z_true, const Matrix& z_pred, bool match) {
  if (!z_true.same_shape(z_pred)) throw ArgumentError("mcc: shape mismatch");
  const std::size_t n = z_true.rows(), d = z_true.cols();
  if (n < 2) throw ArgumentError("mcc: need at least two rows");
  auto centred = [&](const Matrix& z) {
    Matrix c = z;
    std::vector<double> norm(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += z(r, j);
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        c(r, j) -= mean;
        ss += c(r, j) * c(r, j);
      }
      norm[j] = std::sqrt(ss);
    }
    return std::pair{c, norm};
  };
  const auto [a, na] = centred(z_true);
  const auto [b, nb] = centred(z_pred);
  Matrix corr(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (na[i] == 0.0 || nb[j] == 0.0) continue;  // zero variance: correlation 0
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += a(r, i) * b(r, j);
      corr(i, j) = std::abs(s / (na[i] * nb[j]));
    }
  const scm::Permutation assign =
      match ? posterior::hungarian(corr) : scm::Permutation::identity(d);
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += corr(i, assign.node_at(i));
  return total / static_cast<double>(d);
}

double edge_weight_mse(const std::vector<Matrix>& w_samples, const Matrix& gt_w) {
  if (w_samples.empty()) throw ArgumentError("edge_weight_mse: no samples");
  double total = 0.0;
  for (const auto& w : w_samples) {
    require_graph_pair(w, gt_w);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - gt_w[i]) * (w[i] - gt_w[i]);
    total += s / static_cast<double>(w.size());
  }
  return total / static_cast<double>(w_samples.size());
}

Confusion confusion(const Matrix& graph, const Matrix& gt) {
  require_graph_pair(graph, gt);
  Confusion c;
  for (std::size_t i = 0; i < gt.rows(); ++i)
    for (std::size_t j = 0; j < gt.cols(); ++j) {
      if (i == j) continue;
      const bool p = on(graph, i, j), t = on(gt, i, j);
      if (p && t) c.tp += 1;
      else if (p) c.fp += 1;
      else if (t) c.fn += 1;
      else c.tn += 1;
    }
  return c;
}

namespace {

void fill_confusion(MetricsReport& r, const Confusion& c) {
  r.tp = c.tp;
  r.fp = c.fp;
  r.tn = c.tn;
  r.fn = c.fn;
  r.tpr = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  r.fpr = c.fp + c.tn > 0 ? c.fp / (c.fp + c.tn) : 0.0;
  r.precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  r.recall = r.tpr;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

Matrix support(const Matrix& w) {
  Matrix g(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = w[i] != 0.0 ? 1.0 : 0.0;
  return g;
}

}  // namespace

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "e_shd", "shd_c", "auroc", "auprc_g", "auprc_w", "mcc", "l_mse", "x_mse", "obs_kl",
      "tp",    "fp",    "tn",    "fn",      "tpr",     "fpr", "precision", "recall", "f1"};
  return names;
}

nlohmann::json MetricsReport::to_json() const {
  auto o = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["e_shd"] = e_shd;
  j["shd_c"] = shd_c;
  j["auroc"] = o(auroc);
  j["auprc_g"] = o(auprc_g);
  j["auprc_w"] = o(auprc_w);
  j["mcc"] = o(mcc);
  j["l_mse"] = l_mse;
  j["x_mse"] = o(x_mse);
  j["obs_kl"] = o(obs_kl);
  j["tp"] = tp;
  j["fp"] = fp;
  j["tn"] = tn;
  j["fn"] = fn;
  j["tpr"] = tpr;
  j["fpr"] = fpr;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  return j;
}

MetricsReport null_graph_baseline(const synth::GroundTruth& gt) {
  const Matrix gt_w = gt.weighted_adjacency();
  const Matrix gt_g = support(gt_w);
  const Matrix empty(gt.d(), gt.d());
  MetricsReport r;
  r.e_shd = shd(empty, gt_g);
  r.shd_c = skeleton_shd({empty}, gt_g);
  r.auroc = auroc(empty, gt_g);
  r.auprc_g = auprc(empty, gt_g);
  r.auprc_w = r.auprc_g;
  r.l_mse = edge_weight_mse({empty}, gt_w);
  r.obs_kl = scm::gaussian_kl(scm::observational_covariance(empty, gt.scm.noise),
                              scm::observational_covariance(gt_w, gt.scm.noise));
  fill_confusion(r, confusion(empty, gt_g));
  return r;
}

MetricsReport evaluate(const train::TrainConfig& config, const train::TrainState& state,
                       const synth::GroundTruth& gt, const synth::Dataset* data,
                       const EvalConfig& eval, const std::vector<Matrix>* w_samples) {
  const std::size_t d = gt.d();
  if (state.d != d) throw ArgumentError("evaluate: model and ground truth differ in d");
  std::mt19937_64 rng(eval.seed);
  const Matrix gt_w = gt.weighted_adjacency();
  const Matrix gt_g = support(gt_w);

  std::vector<Matrix> drawn;
  if (w_samples == nullptr) {
    drawn = posterior_w_samples(config, state, eval.posterior_samples, rng);
    w_samples = &drawn;
  }
  if (w_samples->empty()) throw ArgumentError("evaluate: need posterior samples");
  const std::vector<Matrix>& ws = *w_samples;
  std::vector<Matrix> graphs;
  Matrix probs(d, d), mean_w(d, d);
  for (const auto& w : ws) {
    if (w.rows() != d || w.cols() != d) throw ArgumentError("evaluate: posterior sample shape");
    graphs.push_back(scm::binarize(w, config.edge_threshold));
    probs = probs + graphs.back();
    mean_w = mean_w + w;
  }
  const double inv = 1.0 / static_cast<double>(ws.size());
  probs = probs * inv;
  mean_w = mean_w * inv;
  Matrix abs_w = mean_w;
  for (auto& v : abs_w.flat()) v = std::abs(v);

  MetricsReport r;
  r.e_shd = expected_shd(graphs, gt_g);
  r.shd_c = skeleton_shd(graphs, gt_g);
  r.auroc = auroc(probs, gt_g);
  r.auprc_g = auprc(probs, gt_g);
  r.auprc_w = auprc(abs_w, gt_g);
  r.l_mse = edge_weight_mse(ws, gt_w);
  try {
    const scm::NoiseScale sigma{state.params.at("q.mean")[posterior::q_size(d) - 1]};
    r.obs_kl = scm::gaussian_kl(scm::observational_covariance(mean_w, sigma),
                                scm::observational_covariance(gt_w, gt.scm.noise));
  } catch (const Error&) {
    r.obs_kl = std::nullopt;
  }
  Matrix hard(d, d);
  for (std::size_t i = 0; i < probs.size(); ++i) hard[i] = probs[i] > 0.5 ? 1.0 : 0.0;
  fill_confusion(r, confusion(hard, gt_g));

  if (data != nullptr) {
    const bool match =
        eval.match_latents.value_or(config.mode == train::Mode::learn_permutation);
    const auto model = train::mean_model(config, state);
    const Matrix z = train::mean_latents(model, data->masks, &data->intervention_values,
                                         eval.latent_samples, rng);
    r.mcc = opt(mcc(data->z_true, z, match));
    const Matrix x_hat = train::decode(config, state, z);
    double s = 0.0;
    for (std::size_t i = 0; i < x_hat.size(); ++i) s += (x_hat[i] - data->x[i]) * (x_hat[i] - data->x[i]);
    r.x_mse = s / static_cast<double>(x_hat.size());
  }
  return r;
}

std::vector<Matrix> posterior_w_samples(const train::TrainConfig& config,
                                        const train::TrainState& state, std::size_t n,
                                        std::mt19937_64& rng) {
  std::vector<Matrix> ws;
  ws.reserve(n);
  for (std::size_t s = 0; s < n; ++s) ws.push_back(train::sample_model(config, state, rng).w);
  return ws;
}

std::vector<InterventionComparison> compare_interventions(
    const train::TrainConfig& config, const train::TrainState& state,
    const synth::GroundTruth& gt, const std::vector<scm::InterventionMask>& masks, std::size_t n,
    std::mt19937_64& rng, double intervention_std) {
  const std::size_t d = gt.d();
  if (state.d != d || state.obs_dim != gt.obs_dim()) {
    throw ArgumentError("compare_interventions: model and ground truth shapes differ");
  }
  if (n == 0) throw ArgumentError("compare_interventions: n must be positive");
  std::normal_distribution<double> value(0.0, intervention_std);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Matrix gt_w = gt.weighted_adjacency();
  std::vector<InterventionComparison> out;
  for (const auto& mask : masks) {
    if (mask.size() != d) throw ArgumentError("compare_interventions: mask length");
    InterventionComparison c;
    c.mask = mask;
    c.values.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      if (mask[i] != 0) c.values[i] = value(rng);

    Matrix m(n, d), v(n, d), eps(n, d);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < d; ++i) {
        m(r, i) = mask[i];
        v(r, i) = c.values[i];
      }
    for (auto& e : eps.flat()) e = normal(rng);
    const Matrix x = synth::project(scm::ancestral_sample_rows(gt_w, gt.scm.noise, eps, m, &v),
                                    gt.projection);
    c.gt_mean = Matrix(1, x.cols());
    for (std::size_t r = 0; r < n; ++r)
      kernels::axpy(x.cols(), 1.0 / static_cast<double>(n), x.row(r).data(), c.gt_mean.data());

    c.model_mean = train::sample_interventional_images(config, state, mask, n, rng, &c.values).mean;
    c.abs_diff = Matrix(1, x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) c.abs_diff[j] = std::abs(c.gt_mean[j] - c.model_mean[j]);
    if (gt.projection.kind == synth::ProjectionKind::blocks) {
      c.block_error = synth::block_intensities(c.abs_diff, gt.projection.geometry);
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace lscm::eval
