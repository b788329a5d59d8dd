#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lscm/config.hpp"
#include "lscm/errors.hpp"
#include "lscm/experiment.hpp"
#include "lscm/runtime.hpp"

namespace {

struct Args {
  std::string config;
  std::string out;
  std::string data;
  std::string run;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  bool force = false;
  bool resume = false;
};

void common(CLI::App* cmd, Args& a) {
  cmd->add_option("--config", a.config, "flat JSON config file");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--seed,--seeds", a.seeds, "seed list, overrides the config's")->delimiter(',');
  cmd->add_option("--jobs", a.jobs, "worker processes")->check(CLI::PositiveNumber);
  cmd->add_flag("--force", a.force, "overwrite a non-empty output directory");
}

lscm::exp::CommandOptions options(const Args& a) {
  lscm::exp::CommandOptions o;
  o.out = a.out;
  o.data = a.data;
  o.run = a.run;
  if (!a.seeds.empty()) o.seeds = a.seeds;
  o.jobs = a.jobs;
  o.force = a.force;
  o.resume = a.resume;
  return o;
}

std::optional<lscm::config::ExperimentConfig> maybe_config(const Args& a) {
  if (a.config.empty()) return std::nullopt;
  return lscm::config::load(a.config);
}

lscm::config::ExperimentConfig config_or_default(const Args& a) {
  return a.config.empty() ? lscm::config::parse(nlohmann::json::object()) : lscm::config::load(a.config);
}

}  // namespace

int main(int argc, char** argv) {
  lscm::tune_allocator();
  CLI::App app{"Bayesian latent causal discovery experiments"};
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("generate", "sample ground truths and datasets per seed");
  common(gen, a);
  gen->callback([&] { lscm::exp::cmd_generate(config_or_default(a), options(a)); });

  auto* tr = app.add_subcommand("train", "train one model per seed on generated data");
  common(tr, a);
  tr->add_option("--data", a.data, "dataset root written by generate")->required();
  tr->add_flag("--resume", a.resume, "continue from existing checkpoints");
  tr->callback([&] { lscm::exp::cmd_train(maybe_config(a), options(a)); });

  auto* ev = app.add_subcommand("eval", "full metric report and null-graph baseline");
  common(ev, a);
  ev->add_option("--run", a.run, "run root written by train")->required();
  ev->add_option("--data", a.data, "dataset root, defaults to the run's");
  ev->callback([&] { lscm::exp::cmd_eval(maybe_config(a), options(a)); });

  auto* si = app.add_subcommand("sample-interventions", "compare unseen-intervention means");
  common(si, a);
  si->add_option("--run", a.run, "run root written by train")->required();
  si->add_option("--data", a.data, "dataset root, defaults to the run's");
  si->callback([&] { lscm::exp::cmd_sample_interventions(maybe_config(a), options(a)); });

  auto* ab = app.add_subcommand("ablate-interventions", "metrics against the number of intervention sets");
  common(ab, a);
  ab->callback([&] { lscm::exp::cmd_ablate_interventions(config_or_default(a), options(a)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage_error: " << e.what() << "\n";
    return 2;
  } catch (const lscm::Error& e) {
    std::cerr << "error: " << e.error_class() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal_error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
