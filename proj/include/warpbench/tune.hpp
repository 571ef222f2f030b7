#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpbench/error.hpp"
#include "warpbench/models.hpp"

namespace warpbench {

// Search-space declaration. Declaration order matters for grid
// enumeration: the first declared parameter varies slowest.
struct ParamDomain {
  enum class Kind { Categorical, IntRange, RealRange };
  std::string name;
  Kind kind = Kind::Categorical;

  std::vector<nlohmann::json> values;       // Categorical
  std::int64_t int_lo = 0, int_hi = 0;      // IntRange, inclusive
  double real_lo = 0.0, real_hi = 0.0;      // RealRange
  bool log_scale = false;

  static ParamDomain categorical(std::string name,
                                 std::vector<nlohmann::json> values);
  static ParamDomain int_range(std::string name, std::int64_t lo,
                               std::int64_t hi);
  static ParamDomain real_range(std::string name, double lo, double hi,
                                bool log_scale = false);
};

struct SearchSpace {
  std::string family;
  std::vector<ParamDomain> params;

  void validate() const;
};

// Cartesian product in declaration order (last parameter fastest).
// Real ranges are not enumerable and are rejected.
std::vector<ModelConfig> expand_grid(const SearchSpace& space);

// n independent draws; log-scale reals are uniform in the log domain.
std::vector<ModelConfig> sample_random(const SearchSpace& space, std::size_t n,
                                       std::uint64_t seed);

enum class MetricDirection { Maximize, Minimize };

struct AshaConfig {
  std::size_t eta = 2;
  std::size_t min_budget = 1;  // r0, epochs
  std::size_t max_budget = 1;  // R, epochs
  MetricDirection direction = MetricDirection::Maximize;

  void validate() const;
  // r0 * eta^r capped at R; the final entry is exactly R (completion rung).
  std::vector<std::size_t> rung_budgets() const;
};

enum class TrialStatus {
  Pending,
  Running,
  StoppedByScheduler,
  StoppedEarly,
  Completed,
  Failed,
  TimeLimitExceeded,
};

const char* to_string(TrialStatus s);

struct Trial {
  std::size_t trial_id = 0;
  ModelConfig config;
  std::uint64_t seed = 0;
  TrialStatus status = TrialStatus::Pending;
  // (cumulative epoch budget, validation metric), one entry per rung eval
  std::vector<std::pair<std::size_t, double>> history;
  double wall_seconds = 0.0;
  std::size_t epochs_consumed = 0;
  std::string error;
};

nlohmann::json trial_to_json(const Trial& t);

enum class AshaAction { Promote, Stop, Continue };

// Asynchronous decision for a trial that just recorded `value` at `rung`.
// rung_records[rung] must already include `value`. k = floor(n_r / eta);
// k == 0 promotes optimistically; otherwise promote iff the value is
// within the top k recorded so far (direction-aware).
AshaAction asha_decide(const std::vector<std::vector<double>>& rung_records,
                       std::size_t rung, double value, const AshaConfig& cfg);

// True iff the series shows no improvement > min_delta over the running
// best for `patience` consecutive evaluations.
bool early_stop(const std::vector<double>& history, std::size_t patience,
                double min_delta,
                MetricDirection direction = MetricDirection::Maximize);

// One scheduler decision, logged for post-hoc replay validation.
struct AshaDecision {
  std::size_t trial_id = 0;
  std::size_t rung = 0;
  double value = 0.0;
  std::size_t n_r = 0;  // records at the rung when deciding, incl. this one
  std::size_t k = 0;    // promotion slots floor(n_r / eta)
  AshaAction action = AshaAction::Stop;
};

struct TrialWork {
  std::size_t trial_id = 0;
  ModelConfig config;
  std::uint64_t seed = 0;
  std::size_t target_epochs = 0;  // cumulative budget to reach
  std::chrono::steady_clock::time_point deadline;
};

struct TrialStep {
  double metric = 0.0;
  std::size_t epochs_consumed = 0;  // executed by this call
  bool hit_deadline = false;
};

// Runs one trial up to a cumulative epoch budget and reports the
// validation metric there. Implementations may resume from their own
// cached state or retrain from scratch; epochs_consumed reflects actual
// work. Honoring `deadline` between epochs is cooperative; the study also
// enforces it after the fact. Must be thread-safe across distinct trials.
class TrialRunner {
 public:
  virtual ~TrialRunner() = default;
  virtual TrialStep run_to(const TrialWork& work) = 0;
};

struct StudyConfig {
  enum class Search { Grid, Random };
  enum class Scheduler { Fifo, Asha };

  Search search = Search::Grid;
  Scheduler scheduler = Scheduler::Fifo;
  std::size_t n_random = 0;  // draw count for random search
  std::size_t workers = 1;
  AshaConfig asha;  // budgets/direction apply to fifo too (max_budget = R)
  double trial_timeout_seconds = 86400.0;
  std::size_t early_stop_patience = 0;  // 0 disables
  double early_stop_min_delta = 0.0;
  std::size_t max_trials = 0;  // 0 = no cap; caps the config list
  std::uint64_t seed = 0;

  void validate() const;
};

struct StudyResult {
  std::vector<Trial> trials;
  bool has_best = false;
  std::size_t best_trial_id = 0;  // ties by lowest id
  double best_value = 0.0;
  double total_wall_seconds = 0.0;
  std::size_t total_epochs = 0;
  std::vector<AshaDecision> decisions;
};

// Executes the study on a bounded worker pool. Throws when the expansion
// yields no trials or every trial raised an error; timeouts and scheduler
// stops are reported in statuses, not exceptions. For fifo+grid the result
// is independent of worker count.
StudyResult run_study(const SearchSpace& space, const StudyConfig& cfg,
                      TrialRunner& runner);

// Re-checks every logged decision against the promotion rule. Returns
// true when the whole log is consistent.
bool validate_asha_log(const std::vector<AshaDecision>& log,
                       const AshaConfig& cfg);

}  // namespace warpbench
