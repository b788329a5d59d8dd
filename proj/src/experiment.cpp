#include "lscm/experiment.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "lscm/dataset_io.hpp"
#include "lscm/errors.hpp"

namespace lscm::exp {

namespace {

constexpr const char* kManifestFormat = "lscm-manifest-1";

std::string config_hash(const config::ExperimentConfig& c) {
  return io::hex64(io::fnv1a(c.to_json().dump()));
}

// Resuming may extend the epoch budget, so it is left out here.
std::string resume_hash(const config::ExperimentConfig& c) {
  json j = c.to_json();
  j.erase("epochs");
  j.erase("eval_interval");
  return io::hex64(io::fnv1a(j.dump()));
}

bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
}

// Refuses to touch existing results unless forced; forced runs start clean.
void prepare_out(const fs::path& out, bool force, bool allow_existing = false) {
  if (out.empty()) throw ArgumentError("--out is required");
  if (non_empty_dir(out) && !allow_existing) {
    if (!force) {
      throw IoError("output directory " + out.string() + " is not empty; pass --force to overwrite");
    }
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

json read_manifest(const fs::path& root) {
  const fs::path p = root / "manifest.json";
  if (!fs::exists(p)) throw DataError("no manifest.json under " + root.string());
  json m = io::read_json(p);
  if (m.value("format", "") != kManifestFormat) throw DataError(p.string() + ": unknown format");
  return m;
}

json make_manifest(const std::string& kind, const config::ExperimentConfig& c,
                   const std::vector<std::uint64_t>& seeds) {
  return {{"format", kManifestFormat},
          {"kind", kind},
          {"config", c.to_json()},
          {"config_hash", config_hash(c)},
          {"resume_hash", resume_hash(c)},
          {"seeds", seeds}};
}

config::ExperimentConfig resolve_config(const std::optional<config::ExperimentConfig>& given,
                                        const json& manifest) {
  if (given) return *given;
  return config::parse(manifest.at("config"));
}

std::vector<std::uint64_t> resolve_seeds(const CommandOptions& o,
                                         const config::ExperimentConfig& c) {
  auto seeds = o.seeds.value_or(c.seeds);
  if (seeds.empty()) throw ArgumentError("no seeds");
  return seeds;
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::string mask_string(const scm::InterventionMask& m) {
  std::string s;
  for (auto v : m) s.push_back(v != 0 ? '1' : '0');
  return s;
}

json samples_to_json(const std::vector<Matrix>& ws) {
  json a = json::array();
  for (const auto& w : ws) a.push_back(io::matrix_to_json(w));
  return {{"w", a}};
}

std::vector<Matrix> samples_from_json(const json& j) {
  std::vector<Matrix> ws;
  for (const auto& e : j.at("w")) ws.push_back(io::matrix_from_json(e));
  return ws;
}

void append_line(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::app);
  if (!f) throw IoError("cannot append to " + p.string());
  f << j.dump() << '\n';
}

// Keeps only trace records at or before `epoch`.
void truncate_trace(const fs::path& p, std::uint64_t epoch) {
  if (!fs::exists(p)) return;
  std::ifstream in(p);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) break;
    if (j.value("epoch", std::uint64_t{0}) <= epoch) kept += line + "\n";
  }
  in.close();
  io::write_text(p, kept);
}

json report_or_null(const std::optional<eval::MetricsReport>& r) {
  return r ? r->to_json() : json(nullptr);
}

}  // namespace

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// ---- data and runs -----------------------------------------------------------

SeedData make_seed_data(const config::DataSpec& spec, std::uint64_t seed,
                        std::optional<std::size_t> n_sets) {
  SeedData s;
  s.seed = seed;
  synth::GroundTruthConfig gc;
  gc.d = spec.d;
  gc.obs_dim = spec.obs_dim;
  gc.expected_degree = spec.expected_degree;
  gc.projection = spec.projection;
  gc.log_sigma = std::log(spec.sigma);
  std::mt19937_64 gt_rng(config::derive_seed(seed, "ground_truth"));
  s.gt = synth::sample_ground_truth(gc, gt_rng);

  const std::size_t sets = n_sets.value_or(spec.n_sets);
  if (sets > 0) {
    std::mt19937_64 plan_rng(config::derive_seed(seed, "plan"));
    s.plan = synth::sample_intervention_plan(spec.d, sets, spec.samples_per_set, spec.single_node,
                                             plan_rng);
  }
  std::mt19937_64 data_rng(config::derive_seed(seed, "data"));
  s.data = synth::generate_dataset(s.gt, spec.n_obs, s.plan, data_rng, spec.intervention_std);
  return s;
}

train::TrainConfig train_config_for(const config::ExperimentConfig& c, std::uint64_t seed,
                                    const synth::GroundTruth* gt) {
  train::TrainConfig tc = c.train;
  tc.seed = config::derive_seed(seed, "train");
  if (tc.mode == train::Mode::fixed_ordering && gt != nullptr) tc.ordering = gt->scm.perm;
  return tc;
}

eval::EvalConfig eval_config_for(const config::ExperimentConfig& c, std::uint64_t seed) {
  eval::EvalConfig e = c.eval;
  e.seed = config::derive_seed(seed, "eval:" + std::to_string(c.eval.seed));
  return e;
}

RunResult run_seed(const config::ExperimentConfig& c, std::uint64_t seed,
                   const synth::Dataset& data, const synth::GroundTruth* gt,
                   const RunOptions& options) {
  RunResult r;
  r.seed = seed;
  r.config = train_config_for(c, seed, gt);
  const auto ev = eval_config_for(c, seed);

  if (options.resume && !options.checkpoint.empty() && fs::exists(options.checkpoint)) {
    r.state = train::load_checkpoint(options.checkpoint, r.config);
    if (r.state.d != data.d() || r.state.obs_dim != data.obs_dim()) {
      throw CheckpointError("checkpoint shape does not match the dataset");
    }
    r.resumed_from = r.state.epoch;
  } else {
    r.state = train::init_state(r.config, data.d(), data.obs_dim());
  }

  const auto t0 = std::chrono::steady_clock::now();
  train::EvalHook hook = [&](const train::TrainState& s) -> json {
    json rec = {{"epoch", s.epoch},
                {"elbo", s.elbo_trace.empty() ? json(nullptr) : json(s.elbo_trace.back())}};
    if (gt != nullptr && options.periodic_metrics) {
      rec["metrics"] = eval::evaluate(r.config, s, *gt, &data, ev).to_json();
    }
    if (!options.checkpoint.empty()) train::save_checkpoint(options.checkpoint, r.config, s);
    if (options.on_eval) options.on_eval(rec);
    return rec;
  };
  const bool need_hook = options.periodic_metrics || !options.checkpoint.empty() ||
                         static_cast<bool>(options.on_eval);
  r.history = train::train(r.config, r.state, data, need_hook ? hook : train::EvalHook{});
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (gt != nullptr && !r.history.diverged) {
    r.report = eval::evaluate(r.config, r.state, *gt, &data, ev);
    r.null_graph = eval::null_graph_baseline(*gt);
  } else if (gt != nullptr) {
    r.null_graph = eval::null_graph_baseline(*gt);
  }
  return r;
}

UnseenResult unseen_interventions(const config::ExperimentConfig& c,
                                  const train::TrainConfig& tc, const train::TrainState& state,
                                  const synth::GroundTruth& gt, const synth::Dataset& data,
                                  std::uint64_t seed, std::size_t n_sets, std::size_t n) {
  if (n_sets == 0) throw ArgumentError("need at least one unseen intervention set");
  std::mt19937_64 rng(config::derive_seed(seed, "unseen"));
  auto exclude = synth::distinct_masks(data);
  const auto plan =
      synth::sample_intervention_plan(data.d(), n_sets, 1, c.data.single_node, rng, exclude);
  std::vector<scm::InterventionMask> masks;
  for (const auto& set : plan) masks.push_back(set.mask);
  UnseenResult out;
  out.unseen = eval::compare_interventions(tc, state, gt, masks, n, rng, c.data.intervention_std);
  out.observational = eval::compare_interventions(tc, state, gt, {scm::InterventionMask(data.d(), 0)},
                                                  n, rng, c.data.intervention_std)
                          .front();
  return out;
}

double worst_error(const std::vector<eval::InterventionComparison>& rows) {
  double worst = 0.0;
  for (const auto& r : rows) {
    const Matrix& m = r.block_error ? *r.block_error : r.abs_diff;
    for (double v : m.flat()) worst = std::max(worst, v);
  }
  return worst;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::optional<Stats> summarize(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  Stats s;
  s.n = values.size();
  s.median = median(values);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

json aggregate(const std::vector<json>& reports) {
  json out = json::object();
  for (const auto& name : eval::metric_names()) {
    std::vector<double> v;
    for (const auto& r : reports)
      if (r.is_object() && r.contains(name) && r.at(name).is_number()) v.push_back(r.at(name).get<double>());
    const auto s = summarize(v);
    if (!s) {
      out[name] = nullptr;
      continue;
    }
    out[name] = {{"median", s->median}, {"mean", s->mean}, {"min", s->min}, {"max", s->max}, {"n", s->n}};
  }
  return out;
}

// ---- worker processes -------------------------------------------------------

void run_jobs(const std::vector<std::function<void()>>& tasks, std::size_t jobs) {
  if (jobs <= 1 || tasks.size() <= 1) {
    for (const auto& t : tasks) t();
    return;
  }
  std::size_t next = 0, running = 0, failed = 0;
  std::cout.flush();
  std::cerr.flush();
  while (next < tasks.size() || running > 0) {
    while (running < jobs && next < tasks.size()) {
      const pid_t pid = fork();
      if (pid < 0) throw IoError("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          tasks[next]();
        } catch (const Error& e) {
          std::cerr << "error: " << e.error_class() << ": " << e.what() << "\n";
          code = 3;
        } catch (const std::exception& e) {
          std::cerr << "error: internal_error: " << e.what() << "\n";
          code = 4;
        }
        std::cout.flush();
        std::cerr.flush();
        _exit(code);
      }
      ++next;
      ++running;
    }
    int status = 0;
    if (wait(&status) < 0) throw IoError("wait failed");
    --running;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failed;
  }
  if (failed > 0) throw Error("worker_error", std::to_string(failed) + " worker(s) failed");
}

// ---- commands ---------------------------------------------------------------

void cmd_generate(const config::ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  const auto seeds = resolve_seeds(o, c);
  prepare_out(o.out, o.force);
  std::vector<std::function<void()>> tasks;
  for (auto seed : seeds) {
    tasks.push_back([&c, &o, seed] {
      const auto s = make_seed_data(c.data, seed);
      json meta = {{"seed", seed}, {"plan", io::plan_to_json(s.plan)}};
      io::write_dataset(o.out / seed_dir_name(seed), s.data, &s.gt, meta);
      std::cout << "generated " << seed_dir_name(seed) << ": " << s.data.size() << " rows\n";
    });
  }
  run_jobs(tasks, o.jobs);
  io::write_json(o.out / "manifest.json", make_manifest("dataset", c, seeds));
}

void cmd_train(const std::optional<config::ExperimentConfig>& given, const CommandOptions& o) {
  if (o.data.empty()) throw ArgumentError("--data is required");
  const json data_manifest = read_manifest(o.data);
  const auto c = resolve_config(given, data_manifest);
  const auto seeds = resolve_seeds(o, c);
  const fs::path out = o.out;
  if (o.resume && fs::exists(out / "manifest.json")) {
    const json m = read_manifest(out);
    if (m.value("resume_hash", "") != resume_hash(c)) {
      throw CheckpointError("run directory was written under a different config");
    }
  }
  prepare_out(out, o.force, o.resume);
  json manifest = make_manifest("run", c, seeds);
  manifest["data"] = fs::absolute(o.data).string();
  io::write_json(out / "manifest.json", manifest);

  std::vector<std::function<void()>> tasks;
  for (auto seed : seeds) {
    tasks.push_back([&, seed] {
      const auto loaded = io::read_dataset(o.data / seed_dir_name(seed));
      const synth::GroundTruth* gt = loaded.gt ? &*loaded.gt : nullptr;
      const fs::path dir = out / seed_dir_name(seed);
      fs::create_directories(dir);
      RunOptions ro;
      ro.checkpoint = dir / "checkpoint.json";
      ro.resume = o.resume;
      const fs::path trace = dir / "metrics.jsonl";
      if (o.resume && fs::exists(ro.checkpoint)) {
        truncate_trace(trace, io::read_json(ro.checkpoint).at("epoch").get<std::uint64_t>());
      } else if (fs::exists(trace)) {
        fs::remove(trace);
      }
      ro.on_eval = [&trace](const json& rec) { append_line(trace, rec); };
      auto r = run_seed(c, seed, loaded.data, gt, ro);

      std::mt19937_64 prng(config::derive_seed(seed, "posterior"));
      const auto ws = eval::posterior_w_samples(r.config, r.state, c.eval.posterior_samples, prng);
      io::write_json(dir / "posterior_samples.json", samples_to_json(ws));
      if (gt != nullptr && !r.history.diverged) {
        r.report = eval::evaluate(r.config, r.state, *gt, &loaded.data, eval_config_for(c, seed), &ws);
      }
      json summary = {{"seed", seed},
                      {"config_hash", config_hash(c)},
                      {"epochs", r.state.epoch},
                      {"resumed_from", r.resumed_from},
                      {"seconds", r.seconds},
                      {"diverged", r.history.diverged},
                      {"message", r.history.message},
                      {"final_elbo", r.state.elbo_trace.empty() ? json(nullptr)
                                                                : json(r.state.elbo_trace.back())},
                      {"metrics", report_or_null(r.report)},
                      {"null_graph", report_or_null(r.null_graph)}};
      if (gt == nullptr) summary["notice"] = "no ground truth: metrics omitted";
      io::write_json(dir / "summary.json", summary);
      std::cout << seed_dir_name(seed) << ": " << r.state.epoch << " epochs in " << fmt(r.seconds)
                << " s";
      if (r.report) {
        std::cout << ", E-SHD " << fmt(r.report->e_shd) << ", AUROC " << fmt(r.report->auroc)
                  << ", MCC " << fmt(r.report->mcc);
      }
      if (r.history.diverged) std::cout << ", diverged: " << r.history.message;
      std::cout << "\n";
    });
  }
  run_jobs(tasks, o.jobs);

  std::vector<json> model, null_graph;
  std::vector<double> seconds;
  for (auto seed : seeds) {
    const json s = io::read_json(out / seed_dir_name(seed) / "summary.json");
    model.push_back(s.at("metrics"));
    null_graph.push_back(s.at("null_graph"));
    seconds.push_back(s.at("seconds").get<double>());
  }
  const auto t = summarize(seconds);
  io::write_json(out / "aggregate.json",
                 {{"seeds", seeds},
                  {"metrics", aggregate(model)},
                  {"null_graph", aggregate(null_graph)},
                  {"seconds", {{"median", t->median}, {"mean", t->mean}, {"max", t->max}}}});
}

void cmd_eval(const std::optional<config::ExperimentConfig>& given, const CommandOptions& o) {
  if (o.run.empty()) throw ArgumentError("--run is required");
  const json run_manifest = read_manifest(o.run);
  const auto c = resolve_config(given, run_manifest);
  const auto seeds = resolve_seeds(o, c);
  const fs::path data_root = o.data.empty() ? fs::path(run_manifest.at("data").get<std::string>()) : o.data;
  const fs::path out = o.out.empty() ? o.run / "eval" : o.out;
  prepare_out(out, o.force);

  std::vector<std::function<void()>> tasks;
  for (auto seed : seeds) {
    tasks.push_back([&, seed] {
      const auto loaded = io::read_dataset(data_root / seed_dir_name(seed));
      const synth::GroundTruth* gt = loaded.gt ? &*loaded.gt : nullptr;
      const fs::path run_dir = o.run / seed_dir_name(seed);
      const auto tc = train_config_for(c, seed, gt);
      const auto state = train::load_checkpoint(run_dir / "checkpoint.json", tc);
      json result = {{"seed", seed}, {"epoch", state.epoch}};
      if (gt == nullptr) {
        result["notice"] = "no ground truth: structure, parameter and latent metrics omitted";
        result["model"] = nullptr;
        result["null_graph"] = nullptr;
        std::cerr << "notice: " << seed_dir_name(seed) << " has no ground truth\n";
      } else {
        std::vector<Matrix> ws;
        const fs::path sp = run_dir / "posterior_samples.json";
        if (fs::exists(sp)) ws = samples_from_json(io::read_json(sp));
        const auto report = eval::evaluate(tc, state, *gt, &loaded.data, eval_config_for(c, seed),
                                           ws.empty() ? nullptr : &ws);
        result["model"] = report.to_json();
        result["null_graph"] = eval::null_graph_baseline(*gt).to_json();
      }
      io::write_json(out / (seed_dir_name(seed) + ".json"), result);
    });
  }
  run_jobs(tasks, o.jobs);

  std::ostringstream csv;
  csv << "seed,row";
  for (const auto& n : eval::metric_names()) csv << ',' << n;
  csv << '\n';
  std::vector<json> model, null_graph;
  for (auto seed : seeds) {
    const json r = io::read_json(out / (seed_dir_name(seed) + ".json"));
    for (const char* row : {"model", "null_graph"}) {
      const json& m = r.at(row);
      if (m.is_null()) continue;
      (std::string(row) == "model" ? model : null_graph).push_back(m);
      csv << seed << ',' << row;
      for (const auto& n : eval::metric_names()) {
        csv << ',';
        if (m.at(n).is_number()) csv << fmt(m.at(n).get<double>());
      }
      csv << '\n';
    }
  }
  io::write_text(out / "eval.csv", csv.str());
  io::write_json(out / "aggregate.json",
                 {{"seeds", seeds}, {"metrics", aggregate(model)}, {"null_graph", aggregate(null_graph)}});
}

void cmd_sample_interventions(const std::optional<config::ExperimentConfig>& given,
                              const CommandOptions& o) {
  if (o.run.empty()) throw ArgumentError("--run is required");
  const json run_manifest = read_manifest(o.run);
  const auto c = resolve_config(given, run_manifest);
  const auto seeds = resolve_seeds(o, c);
  const fs::path data_root = o.data.empty() ? fs::path(run_manifest.at("data").get<std::string>()) : o.data;
  prepare_out(o.out, o.force);

  std::vector<std::function<void()>> tasks;
  for (auto seed : seeds) {
    tasks.push_back([&, seed] {
      const auto loaded = io::read_dataset(data_root / seed_dir_name(seed));
      if (!loaded.gt) throw DataError(seed_dir_name(seed) + ": ground truth required");
      const auto& gt = *loaded.gt;
      const auto tc = train_config_for(c, seed, &gt);
      const auto state = train::load_checkpoint(o.run / seed_dir_name(seed) / "checkpoint.json", tc);
      const auto res = unseen_interventions(c, tc, state, gt, loaded.data, seed, c.unseen_sets,
                                            c.unseen_samples);
      const fs::path dir = o.out / seed_dir_name(seed);
      fs::create_directories(dir);

      const std::size_t D = gt.obs_dim();
      std::ostringstream table;
      table << "index,mask,row";
      for (std::size_t j = 0; j < D; ++j) table << ",x" << j;
      table << '\n';
      std::ostringstream summary;
      summary << "index,mask,mean_abs_diff,max_abs_diff";
      const bool blocks = gt.projection.kind == synth::ProjectionKind::blocks;
      if (blocks)
        for (std::size_t i = 0; i < gt.d(); ++i) summary << ",block" << i;
      summary << '\n';

      auto emit = [&](const std::string& index, const eval::InterventionComparison& cmp) {
        const std::string m = mask_string(cmp.mask);
        const std::pair<const char*, const Matrix*> rows[] = {
            {"gt_mean", &cmp.gt_mean}, {"model_mean", &cmp.model_mean}, {"abs_diff", &cmp.abs_diff}};
        for (const auto& [name, mat] : rows) {
          table << index << ',' << m << ',' << name;
          for (double v : mat->flat()) table << ',' << fmt(v);
          table << '\n';
        }
        double sum = 0.0, worst = 0.0;
        for (double v : cmp.abs_diff.flat()) {
          sum += v;
          worst = std::max(worst, v);
        }
        summary << index << ',' << m << ',' << fmt(sum / static_cast<double>(D)) << ',' << fmt(worst);
        if (cmp.block_error)
          for (double v : cmp.block_error->flat()) summary << ',' << fmt(v);
        summary << '\n';
        if (blocks) {
          const auto& g = gt.projection.geometry;
          io::write_pgm(dir / ("gt_" + index + ".pgm"), cmp.gt_mean.flat(), g.height, g.width);
          io::write_pgm(dir / ("model_" + index + ".pgm"), cmp.model_mean.flat(), g.height, g.width);
        }
      };
      for (std::size_t k = 0; k < res.unseen.size(); ++k) emit(std::to_string(k), res.unseen[k]);
      io::write_text(dir / "comparisons.csv", table.str());
      io::write_text(dir / "summary.csv", summary.str());

      table.str("");
      summary.str("");
      table << "index,mask,row";
      for (std::size_t j = 0; j < D; ++j) table << ",x" << j;
      table << '\n';
      summary << "index,mask,mean_abs_diff,max_abs_diff";
      if (blocks)
        for (std::size_t i = 0; i < gt.d(); ++i) summary << ",block" << i;
      summary << '\n';
      emit("observational", res.observational);
      io::write_text(dir / "observational.csv", table.str());
      io::write_text(dir / "observational_summary.csv", summary.str());
      std::cout << seed_dir_name(seed) << ": worst error over " << res.unseen.size()
                << " unseen masks " << fmt(worst_error(res.unseen)) << "\n";
    });
  }
  run_jobs(tasks, o.jobs);
  json manifest = make_manifest("interventions", c, seeds);
  manifest["run"] = fs::absolute(o.run).string();
  io::write_json(o.out / "manifest.json", manifest);
}

void cmd_ablate_interventions(const config::ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  const auto seeds = resolve_seeds(o, c);
  if (c.ablation_sets.empty()) throw ConfigError("ablation_sets is empty");
  prepare_out(o.out, o.force);
  const fs::path parts = o.out / "parts";
  fs::create_directories(parts);

  std::vector<std::function<void()>> tasks;
  for (auto seed : seeds) {
    for (auto n_sets : c.ablation_sets) {
      tasks.push_back([&, seed, n_sets] {
        const auto s = make_seed_data(c.data, seed, n_sets);
        RunOptions ro;
        ro.periodic_metrics = false;
        const auto r = run_seed(c, seed, s.data, &s.gt, ro);
        json rec = {{"seed", seed},
                    {"n_sets", n_sets},
                    {"rows", s.data.size()},
                    {"seconds", r.seconds},
                    {"diverged", r.history.diverged},
                    {"metrics", report_or_null(r.report)},
                    {"null_graph", report_or_null(r.null_graph)}};
        io::write_json(parts / (seed_dir_name(seed) + "_sets_" + std::to_string(n_sets) + ".json"), rec);
        std::cout << seed_dir_name(seed) << " sets " << n_sets << ": "
                  << (r.report ? "E-SHD " + fmt(r.report->e_shd) : std::string("diverged")) << "\n";
      });
    }
  }
  run_jobs(tasks, o.jobs);

  std::ostringstream csv;
  csv << "n_sets,runs";
  for (const auto& n : eval::metric_names()) csv << ",median_" << n;
  csv << '\n';
  std::string lines;
  for (auto n_sets : c.ablation_sets) {
    std::vector<json> reports;
    for (auto seed : seeds) {
      const json rec =
          io::read_json(parts / (seed_dir_name(seed) + "_sets_" + std::to_string(n_sets) + ".json"));
      lines += rec.dump() + "\n";
      reports.push_back(rec.at("metrics"));
    }
    const json agg = aggregate(reports);
    csv << n_sets << ',' << reports.size();
    for (const auto& n : eval::metric_names()) {
      csv << ',';
      if (!agg.at(n).is_null()) csv << fmt(agg.at(n).at("median").get<double>());
    }
    csv << '\n';
  }
  io::write_text(o.out / "runs.jsonl", lines);
  io::write_text(o.out / "table.csv", csv.str());
  fs::remove_all(parts);
  io::write_json(o.out / "manifest.json", make_manifest("ablation", c, seeds));
}

}  // namespace lscm::exp
