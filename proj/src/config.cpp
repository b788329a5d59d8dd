#include "lscm/config.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "lscm/dataset_io.hpp"
#include "lscm/errors.hpp"

namespace lscm::config {

using nlohmann::json;

namespace {

template <class T>
T get(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("config key '" + key + "' must be finite");
  return x;
}

struct Parsed {
  ExperimentConfig c;
  bool decoder_set = false;
  bool obs_dim_set = false;
};

using Setter = std::function<void(Parsed&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"d", [](Parsed& p, const json& v, const std::string& k) { p.c.data.d = get_count(v, k); }},
      {"D",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.data.obs_dim = get_count(v, k);
         p.obs_dim_set = true;
       }},
      {"degree",
       [](Parsed& p, const json& v, const std::string& k) { p.c.data.expected_degree = get_real(v, k); }},
      {"projection",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.data.projection = synth::parse_projection(get<std::string>(v, k));
       }},
      {"n_obs", [](Parsed& p, const json& v, const std::string& k) { p.c.data.n_obs = get_count(v, k); }},
      {"n_sets", [](Parsed& p, const json& v, const std::string& k) { p.c.data.n_sets = get_count(v, k); }},
      {"samples_per_set",
       [](Parsed& p, const json& v, const std::string& k) { p.c.data.samples_per_set = get_count(v, k); }},
      {"single_node",
       [](Parsed& p, const json& v, const std::string& k) { p.c.data.single_node = get<bool>(v, k); }},
      {"sigma", [](Parsed& p, const json& v, const std::string& k) { p.c.data.sigma = get_real(v, k); }},
      {"intervention_std",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.data.intervention_std = get_real(v, k);
       }},
      {"epochs", [](Parsed& p, const json& v, const std::string& k) { p.c.train.epochs = get_count(v, k); }},
      {"lr", [](Parsed& p, const json& v, const std::string& k) { p.c.train.lr = get_real(v, k); }},
      {"batch_size",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.batch_size = get_count(v, k); }},
      {"mode",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.train.mode = train::parse_mode(get<std::string>(v, k));
       }},
      {"tau", [](Parsed& p, const json& v, const std::string& k) { p.c.train.tau = get_real(v, k); }},
      {"sinkhorn_iters",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.train.sinkhorn_iters = static_cast<int>(get_count(v, k));
       }},
      {"perm_kl_coef",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.perm_kl_coef = get_real(v, k); }},
      {"edge_prior",
       [](Parsed& p, const json& v, const std::string& k) {
         const auto s = get<std::string>(v, k);
         if (s == "horseshoe") p.c.train.prior.edge_prior = posterior::EdgePrior::horseshoe;
         else if (s == "gaussian") p.c.train.prior.edge_prior = posterior::EdgePrior::gaussian;
         else throw ConfigError("edge_prior must be 'horseshoe' or 'gaussian'");
       }},
      {"horseshoe_scale",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.train.prior.horseshoe_scale = get_real(v, k);
       }},
      {"edge_gaussian_std",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.train.prior.edge_gaussian_std = get_real(v, k);
       }},
      {"sigma_prior_mean",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.prior.sigma_mean = get_real(v, k); }},
      {"sigma_prior_std",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.prior.sigma_std = get_real(v, k); }},
      {"edge_threshold",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.edge_threshold = get_real(v, k); }},
      {"decoder",
       [](Parsed& p, const json& v, const std::string& k) {
         const auto s = get<std::string>(v, k);
         if (s == "auto") return;
         p.c.train.decoder = decoder::parse_kind(s);
         p.decoder_set = true;
       }},
      {"decoder_hidden",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.decoder_hidden = get_count(v, k); }},
      {"logit_hidden",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.logit_hidden = get_count(v, k); }},
      {"clamp_interventions",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.train.clamp_interventions = get<bool>(v, k);
       }},
      {"q_mean_init_std",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.q_mean_init_std = get_real(v, k); }},
      {"q_log_std_init",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.q_log_std_init = get_real(v, k); }},
      {"log_noise_init",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.log_noise_init = get_real(v, k); }},
      {"eval_interval",
       [](Parsed& p, const json& v, const std::string& k) { p.c.train.eval_interval = get_count(v, k); }},
      {"seeds",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.seeds = get<std::vector<std::uint64_t>>(v, k);
       }},
      {"posterior_samples",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.eval.posterior_samples = get_count(v, k);
       }},
      {"latent_samples",
       [](Parsed& p, const json& v, const std::string& k) { p.c.eval.latent_samples = get_count(v, k); }},
      {"metric_seed",
       [](Parsed& p, const json& v, const std::string& k) { p.c.eval.seed = get<std::uint64_t>(v, k); }},
      {"match_latents",
       [](Parsed& p, const json& v, const std::string& k) {
         if (v.is_string() && v.get<std::string>() == "auto") {
           p.c.eval.match_latents.reset();
         } else {
           p.c.eval.match_latents = get<bool>(v, k);
         }
       }},
      {"unseen_sets",
       [](Parsed& p, const json& v, const std::string& k) { p.c.unseen_sets = get_count(v, k); }},
      {"unseen_samples",
       [](Parsed& p, const json& v, const std::string& k) { p.c.unseen_samples = get_count(v, k); }},
      {"ablation_sets",
       [](Parsed& p, const json& v, const std::string& k) {
         p.c.ablation_sets = get<std::vector<std::size_t>>(v, k);
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void ExperimentConfig::validate() const {
  if (data.d < 2) throw ConfigError("d must be at least 2");
  if (data.d > data.obs_dim) {
    throw ConfigError("d = " + std::to_string(data.d) + " exceeds D = " + std::to_string(data.obs_dim));
  }
  if (data.projection == synth::ProjectionKind::blocks) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(data.obs_dim))));
    if (side * side != data.obs_dim) throw ConfigError("blocks projection needs a square D");
  }
  if (!(data.expected_degree > 0.0)) throw ConfigError("degree must be positive");
  if (!(data.sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(data.intervention_std > 0.0)) throw ConfigError("intervention_std must be positive");
  if (data.n_obs + data.n_sets * data.samples_per_set == 0) throw ConfigError("dataset would be empty");
  if (train.epochs < 1) throw ConfigError("epochs must be at least 1");
  train.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (eval.posterior_samples == 0 || eval.latent_samples == 0) {
    throw ConfigError("posterior_samples and latent_samples must be positive");
  }
  for (std::size_t n : ablation_sets)
    if (n == 0) throw ConfigError("ablation_sets entries must be positive");
}

json ExperimentConfig::to_json() const {
  json j = train.to_json();
  j.erase("seed");
  j.erase("ordering");
  j["d"] = data.d;
  j["D"] = data.obs_dim;
  j["degree"] = data.expected_degree;
  j["projection"] = synth::projection_name(data.projection);
  j["n_obs"] = data.n_obs;
  j["n_sets"] = data.n_sets;
  j["samples_per_set"] = data.samples_per_set;
  j["single_node"] = data.single_node;
  j["sigma"] = data.sigma;
  j["intervention_std"] = data.intervention_std;
  j["seeds"] = seeds;
  j["posterior_samples"] = eval.posterior_samples;
  j["latent_samples"] = eval.latent_samples;
  j["metric_seed"] = eval.seed;
  j["match_latents"] = eval.match_latents ? json(*eval.match_latents) : json("auto");
  j["unseen_sets"] = unseen_sets;
  j["unseen_samples"] = unseen_samples;
  j["ablation_sets"] = ablation_sets;
  return j;
}

ExperimentConfig parse(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  Parsed p;
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(p, value, key);
  }
  if (!p.decoder_set) {
    p.c.train.decoder = p.c.data.projection == synth::ProjectionKind::linear ? decoder::Kind::linear
                                                                             : decoder::Kind::mlp3;
  }
  if (!p.obs_dim_set && p.c.data.projection == synth::ProjectionKind::blocks) p.c.data.obs_dim = 1024;
  p.c.validate();
  return p.c;
}

ExperimentConfig load(const std::filesystem::path& path) {
  try {
    return parse(io::read_json(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  // splitmix64 finaliser over the seed mixed with the purpose hash
  std::uint64_t z = seed ^ io::fnv1a(purpose);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace lscm::config
