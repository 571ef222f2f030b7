#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "warpbench/cli.hpp"
#include "warpbench/error.hpp"
#include "warpbench/serve.hpp"
#include "warpbench/version.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "experiment config (JSON)")->required();
  cmd->add_option("--output", a.output, "artifact directory override");
  cmd->add_option("--seed", a.seed, "master seed override");
  cmd->add_option("--workers", a.workers, "tuning/evaluation worker threads");
}

// Progress goes to stderr: stdout stays clean for the final artifact path
// (and for JSON-RPC when serving over stdio).
void print_event(const warpbench::PipelineEvent& ev) {
  std::fprintf(stderr, "[%s] %s\n", ev.stage.c_str(), ev.payload.dump().c_str());
}

int run_pipeline_command(const std::string& kind, const CommonArgs& args,
                         bool quiet) {
  using namespace warpbench;
  ExperimentConfig cfg = parse_config(args.config);
  PipelineOptions opts;
  if (!args.output.empty()) opts.output_dir = args.output;
  if (args.seed) opts.seed = *args.seed;
  if (args.workers) opts.workers = *args.workers;
  if (!quiet) opts.hook = print_event;

  PipelineResult res = kind == "train"    ? run_train_pipeline(cfg, opts)
                       : kind == "design" ? run_design_pipeline(cfg, opts)
                                          : run_eval_pipeline(cfg, opts);

  for (const ModelOutcome& oc : res.models) {
    if (oc.ok) {
      std::fprintf(stderr, "model %s: ok\n", oc.name.c_str());
    } else {
      std::fprintf(stderr, "model %s: FAILED (%s)\n", oc.name.c_str(),
                   oc.error.c_str());
    }
  }
  std::fprintf(stdout, "artifacts written to %s\n", res.run_dir.c_str());
  return res.all_failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warpbench: single-node recommender experimentation engine"};
  app.set_version_flag("--version", warpbench::kEngineVersion);
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress progress events");

  CommonArgs train_args, design_args, eval_args;
  CLI::App* train =
      app.add_subcommand("train", "full pipeline with hyperparameter search");
  add_common(train, train_args);
  CLI::App* design =
      app.add_subcommand("design", "fixed configs only, no search");
  add_common(design, design_args);
  CLI::App* eval =
      app.add_subcommand("eval", "evaluate pre-trained checkpoints");
  add_common(eval, eval_args);

  std::string serve_config;
  bool mcp = false;
  CLI::App* serve = app.add_subcommand("serve", "serve loaded checkpoints");
  serve->add_option("--config", serve_config, "serving config (JSON)")
      ->required();
  serve->add_flag("--mcp", mcp,
                  "speak JSON-RPC on stdio instead of binding REST");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return run_pipeline_command("train", train_args, quiet);
    if (design->parsed()) {
      return run_pipeline_command("design", design_args, quiet);
    }
    if (eval->parsed()) return run_pipeline_command("eval", eval_args, quiet);

    warpbench::ServeConfig cfg = warpbench::parse_serve_config(serve_config);
    warpbench::ModelRegistry registry = warpbench::ModelRegistry::load(cfg);
    if (mcp) {
      return warpbench::run_mcp_stdio(registry, cfg, std::cin, std::cout);
    }
    return warpbench::serve_rest(registry, cfg);
  } catch (const warpbench::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
