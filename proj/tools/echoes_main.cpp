// echoes: synthetic-bias debiasing lab.
//
//   echoes generate --config cfg.json [--out DIR] [--seed S]
//   echoes train    --config cfg.json [--out DIR] [--seed S] [--method M] [--jobs N]
//   echoes sweep    --config cfg.json [--out DIR] [--seed S] [--jobs N]
//   echoes evaluate --out DIR
//
// Exit code 0 on success; nonzero with a message on stderr for any rejection.
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "echoes/harness.hpp"
#include "echoes/kernels.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string method;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string backend = "auto";
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_method) {
  cmd->add_option("--config", flags.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", flags.seed, "base seed (overrides config)");
  cmd->add_option("--jobs", flags.jobs, "parallel runs (overrides config)");
  cmd->add_option("--backend", flags.backend,
                  "kernel backend: auto, scalar, avx2, neon");
  if (with_method) {
    cmd->add_option("--method", flags.method,
                    "restrict runs to one method "
                    "(vanilla, echoes, lff, jtt, groupdro)");
  }
}

void select_backend(const std::string& name) {
  using echoes::kernels::Backend;
  if (name == "auto") {
    echoes::kernels::ops();  // trigger default selection
    return;
  }
  Backend backend;
  if (name == "scalar") {
    backend = Backend::Scalar;
  } else if (name == "avx2") {
    backend = Backend::Avx2;
  } else if (name == "neon") {
    backend = Backend::Neon;
  } else {
    throw std::runtime_error("unknown backend: " + name);
  }
  if (!echoes::kernels::set_backend(backend)) {
    throw std::runtime_error("backend not supported on this host: " + name);
  }
}

echoes::harness::ExperimentConfig load_with_overrides(const CommonFlags& flags) {
  auto config = echoes::harness::load_config(flags.config_path);
  echoes::harness::CliOverrides overrides;
  if (!flags.method.empty()) {
    overrides.method = flags.method;
  }
  if (!flags.out_dir.empty()) {
    overrides.output_dir = flags.out_dir;
  }
  overrides.seed = flags.seed;
  overrides.jobs = flags.jobs;
  echoes::harness::apply_overrides(config, overrides);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"echoes: biased-model / target-model debiasing lab"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, sweep_flags;
  std::string eval_out;
  std::string eval_backend = "auto";

  CLI::App* generate = app.add_subcommand("generate", "write dataset CSVs");
  add_common(generate, gen_flags, false);
  CLI::App* train = app.add_subcommand("train", "run training + evaluation");
  add_common(train, train_flags, true);
  CLI::App* sweep = app.add_subcommand("sweep", "run a parameter sweep");
  add_common(sweep, sweep_flags, false);
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "rebuild summary.csv from metrics JSONs");
  evaluate->add_option("--out", eval_out, "output directory to summarize")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      select_backend(gen_flags.backend);
      echoes::harness::cmd_generate(load_with_overrides(gen_flags));
    } else if (train->parsed()) {
      select_backend(train_flags.backend);
      echoes::harness::cmd_train(load_with_overrides(train_flags));
    } else if (sweep->parsed()) {
      select_backend(sweep_flags.backend);
      echoes::harness::cmd_sweep(load_with_overrides(sweep_flags));
    } else if (evaluate->parsed()) {
      select_backend(eval_backend);
      echoes::harness::cmd_evaluate(eval_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
