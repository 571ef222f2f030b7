#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpbench/eval.hpp"
#include "warpbench/ingest.hpp"
#include "warpbench/models.hpp"
#include "warpbench/prep.hpp"
#include "warpbench/report.hpp"
#include "warpbench/tune.hpp"

namespace warpbench {

// Declarative experiment description. One JSON file drives all three
// pipelines. Parsing is strict: unknown keys are rejected, and every
// error message carries the dotted path of the offending key.

struct DatasetBlock {
  std::string path;
  FileSchema schema;
  ParseMode parse_mode = ParseMode::Strict;
  DedupPolicy dedup = DedupPolicy::KeepLastByTimestamp;
};

struct ModelBlock {
  std::string name;    // unique label; defaults to the family tag
  std::string family;
  bool fixed = false;  // declared via "hyperparameters" instead of "search"
  // Fixed configs are stored as one-point spaces so every model runs
  // through the same study machinery.
  SearchSpace search;
  std::string checkpoint;  // eval-pipeline input; empty elsewhere
};

struct TuningBlock {
  StudyConfig::Search search = StudyConfig::Search::Grid;
  StudyConfig::Scheduler scheduler = StudyConfig::Scheduler::Fifo;
  std::size_t n_random = 0;  // required when search == Random
  std::size_t workers = 1;
  std::size_t eta = 2;
  // Epoch budget ladder for iterative families; non-iterative families
  // always run a single full fit.
  std::size_t min_budget = 1;
  std::size_t max_budget = 1;
  MetricDirection direction = MetricDirection::Maximize;
  std::string metric = "nDCG";
  std::size_t cutoff = 10;
  double trial_timeout_seconds = 86400.0;
  std::size_t early_stop_patience = 0;  // 0 disables
  double early_stop_min_delta = 0.0;
  std::size_t max_trials = 0;  // 0 = no cap
};

struct EvaluationBlock {
  std::vector<std::size_t> cutoffs{10};
  bool exposure = true;
  double head_fraction = 0.8;
  std::optional<double> min_rating;  // relevance threshold on test ratings
  bool filter_seen = true;
  std::vector<std::string> tests;  // "t" | "wilcoxon" | "mann-whitney"
  std::string correction = "none";  // "none" | "bonferroni" | "bh"
};

struct ReportingBlock {
  std::string output_dir = "warpbench-run";
  PowerModel power;
  double carbon_intensity = 0.475;  // kg CO2eq per kWh
  bool write_checkpoints = true;
  bool write_recommendations = true;
};

struct ExperimentConfig {
  DatasetBlock dataset;
  std::vector<FilterSpec> filters;
  SplitSpec split;
  std::vector<ModelBlock> models;
  TuningBlock tuning;
  EvaluationBlock evaluation;
  ReportingBlock reporting;
  std::uint64_t seed = 0;  // mandatory in the file; every RNG derives from it

  void validate() const;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Normalized echo of a parsed config; re-parsing it yields the same
// config. Ordered so search-parameter declaration order survives the
// round trip. Written into every run directory as config.json.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

// Stage-boundary callback. Stages appear in lifecycle order: ingest,
// filter, split, trial-start/trial-end (from study workers, serialized),
// evaluate, write.
struct PipelineEvent {
  std::string stage;
  nlohmann::json payload;
};

using EventHook = std::function<void(const PipelineEvent&)>;

struct PipelineOptions {
  std::optional<std::string> output_dir;  // overrides reporting.output_dir
  std::optional<std::uint64_t> seed;      // overrides the config seed
  std::optional<std::size_t> workers;     // overrides tuning.workers
  EventHook hook;
};

// Bridges the study loop to real model training: each call fits the
// trial's config on `train` (iterative families at the call's cumulative
// epoch budget, retrained from scratch; others once, with the metric
// cached across rungs) and scores the tuning metric on the held-out
// split. Safe for concurrent calls on distinct trials.
class ModelTrialRunner : public TrialRunner {
 public:
  struct Setup {
    std::string model_name;
    std::string family;
    DatasetPtr train;
    const RelevanceJudgments* judgments = nullptr;
    std::vector<UserIndex> eval_users;  // users with nonempty relevance
    std::string metric = "nDCG";
    std::size_t cutoff = 10;
    bool filter_seen = true;
    EventHook hook;  // trial-start / trial-end emission; may be empty
  };

  explicit ModelTrialRunner(Setup setup) : s_(std::move(setup)) {}
  TrialStep run_to(const TrialWork& work) override;

 private:
  double evaluate(const TrainedModel& m) const;

  Setup s_;
  std::mutex mu_;
  std::unordered_map<std::size_t, double> cached_;  // non-iterative trials
};

struct ModelOutcome {
  std::string name;
  std::string family;
  bool ok = false;
  std::string error;  // set when !ok
  StudyResult study;  // train/design pipelines
  nlohmann::json best_config = nlohmann::json::object();
  std::uint64_t best_seed = 0;
  // Test-split evaluation of the winning model; `system` holds the
  // exposure metrics when enabled.
  MetricReport metrics;
  RecommendationList recommendations;
};

struct PipelineResult {
  std::string run_dir;
  std::vector<ModelOutcome> models;
  nlohmann::json significance;  // null unless >= 2 models and tests configured
  RunManifest manifest;
  double wall_seconds = 0.0;
  bool all_failed = false;  // every model cell failed -> exit code 2
};

// Full lifecycle: ingest, filter, split, one study per model, test-split
// evaluation of each winner, pairwise significance tests, artifacts.
// A failing model records its error and the run continues.
PipelineResult run_train_pipeline(const ExperimentConfig& cfg,
                                  const PipelineOptions& opts = {});

// Train lifecycle without search: every model must declare fixed
// hyperparameters and runs exactly once (a one-point study).
PipelineResult run_design_pipeline(const ExperimentConfig& cfg,
                                   const PipelineOptions& opts = {});

// Loads one checkpoint per model, regenerates recommendations on the
// configured test split, evaluates and writes reports. Never trains.
// A checkpoint whose ID maps differ from the configured dataset's is a
// hard error.
PipelineResult run_eval_pipeline(const ExperimentConfig& cfg,
                                 const PipelineOptions& opts = {});

}  // namespace warpbench
