#pragma once

// Experiment harness shared by the CLI verbs and the acceptance runner. Every
// artifact is a function of (config, seed): data, training and evaluation
// streams are derived from the run seed by purpose.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lscm/config.hpp"
#include "lscm/metrics.hpp"
#include "lscm/synth.hpp"
#include "lscm/trainer.hpp"

namespace lscm::exp {

namespace fs = std::filesystem;
using nlohmann::json;

struct SeedData {
  std::uint64_t seed = 0;
  synth::GroundTruth gt;
  synth::InterventionPlan plan;
  synth::Dataset data;
};

// n_sets overrides spec.n_sets. Plans are prefix-consistent: the first k sets
// of a larger plan equal the plan drawn with k sets.
SeedData make_seed_data(const config::DataSpec& spec, std::uint64_t seed,
                        std::optional<std::size_t> n_sets = std::nullopt);

// Per-seed training config. In fixed-ordering mode the ordering is the ground
// truth's when one is given, identity otherwise.
train::TrainConfig train_config_for(const config::ExperimentConfig& c, std::uint64_t seed,
                                    const synth::GroundTruth* gt);
eval::EvalConfig eval_config_for(const config::ExperimentConfig& c, std::uint64_t seed);

struct RunOptions {
  fs::path checkpoint;  // empty: no checkpoints written
  bool resume = false;
  bool periodic_metrics = true;  // full report at every eval interval
  std::function<void(const json&)> on_eval;  // one call per trace record
};

struct RunResult {
  std::uint64_t seed = 0;
  train::TrainConfig config;
  train::TrainState state;
  train::History history;
  std::optional<eval::MetricsReport> report;      // needs ground truth
  std::optional<eval::MetricsReport> null_graph;  // needs ground truth
  double seconds = 0.0;
  std::uint64_t resumed_from = 0;
};

RunResult run_seed(const config::ExperimentConfig& c, std::uint64_t seed,
                   const synth::Dataset& data, const synth::GroundTruth* gt,
                   const RunOptions& options = {});

struct UnseenResult {
  std::vector<eval::InterventionComparison> unseen;
  eval::InterventionComparison observational;  // empty mask, sanity row
};

// n_sets fresh masks that do not occur in `data`, each compared over n samples.
UnseenResult unseen_interventions(const config::ExperimentConfig& c,
                                  const train::TrainConfig& tc, const train::TrainState& state,
                                  const synth::GroundTruth& gt, const synth::Dataset& data,
                                  std::uint64_t seed, std::size_t n_sets, std::size_t n);

// Largest per-block error over all masks, or the largest coordinate error
// when the observations are not block images.
double worst_error(const std::vector<eval::InterventionComparison>& rows);

struct Stats {
  double median = 0, mean = 0, min = 0, max = 0;
  std::size_t n = 0;
};
std::optional<Stats> summarize(std::vector<double> values);
double median(std::vector<double> values);

// {metric: {median, mean, min, max, n}} over MetricsReport JSON objects;
// null entries are skipped.
json aggregate(const std::vector<json>& reports);

// ---- commands ---------------------------------------------------------------

struct CommandOptions {
  fs::path out;
  fs::path data;  // generated dataset root (train, eval, ablate)
  fs::path run;   // training run root (eval, sample-interventions)
  std::optional<std::vector<std::uint64_t>> seeds;
  std::size_t jobs = 1;
  bool force = false;
  bool resume = false;
};

// Writes out/seed_<s>/ datasets and out/manifest.json.
void cmd_generate(const config::ExperimentConfig& c, const CommandOptions& o);
// Without a config the dataset manifest's config is used.
void cmd_train(const std::optional<config::ExperimentConfig>& c, const CommandOptions& o);
void cmd_eval(const std::optional<config::ExperimentConfig>& c, const CommandOptions& o);
void cmd_sample_interventions(const std::optional<config::ExperimentConfig>& c,
                              const CommandOptions& o);
// Generates, trains and evaluates per (seed, set count) under out/.
void cmd_ablate_interventions(const config::ExperimentConfig& c, const CommandOptions& o);

// Runs tasks in up to `jobs` forked workers (inline when jobs <= 1). Throws
// after all workers finish if any failed.
void run_jobs(const std::vector<std::function<void()>>& tasks, std::size_t jobs);

std::string seed_dir_name(std::uint64_t seed);

}  // namespace lscm::exp
