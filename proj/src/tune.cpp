#include "warpbench/tune.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <limits>
#include <mutex>
#include <thread>
#include <tuple>

#include "warpbench/rng.hpp"

namespace warpbench {

ParamDomain ParamDomain::categorical(std::string name,
                                     std::vector<nlohmann::json> values) {
  ParamDomain d;
  d.name = std::move(name);
  d.kind = Kind::Categorical;
  d.values = std::move(values);
  return d;
}

ParamDomain ParamDomain::int_range(std::string name, std::int64_t lo,
                                   std::int64_t hi) {
  ParamDomain d;
  d.name = std::move(name);
  d.kind = Kind::IntRange;
  d.int_lo = lo;
  d.int_hi = hi;
  return d;
}

ParamDomain ParamDomain::real_range(std::string name, double lo, double hi,
                                    bool log_scale) {
  ParamDomain d;
  d.name = std::move(name);
  d.kind = Kind::RealRange;
  d.real_lo = lo;
  d.real_hi = hi;
  d.log_scale = log_scale;
  return d;
}

void SearchSpace::validate() const {
  if (family.empty()) throw ConfigError("search space: missing model family");
  for (const ParamDomain& p : params) {
    if (p.name.empty()) throw ConfigError("search space: unnamed parameter");
    switch (p.kind) {
      case ParamDomain::Kind::Categorical:
        if (p.values.empty()) {
          throw ConfigError("search space: parameter '" + p.name +
                            "' has no values");
        }
        break;
      case ParamDomain::Kind::IntRange:
        if (p.int_lo > p.int_hi) {
          throw ConfigError("search space: parameter '" + p.name +
                            "' has an empty integer range");
        }
        break;
      case ParamDomain::Kind::RealRange:
        if (!(p.real_lo <= p.real_hi) || !std::isfinite(p.real_lo) ||
            !std::isfinite(p.real_hi)) {
          throw ConfigError("search space: parameter '" + p.name +
                            "' has an invalid real range");
        }
        if (p.log_scale && !(p.real_lo > 0.0)) {
          throw ConfigError("search space: parameter '" + p.name +
                            "' log-scale bounds must be > 0");
        }
        break;
    }
  }
}

namespace {

std::vector<nlohmann::json> enumerate_domain(const ParamDomain& p) {
  if (p.kind == ParamDomain::Kind::Categorical) return p.values;
  if (p.kind == ParamDomain::Kind::IntRange) {
    std::vector<nlohmann::json> out;
    for (std::int64_t v = p.int_lo; v <= p.int_hi; ++v) out.push_back(v);
    return out;
  }
  throw ConfigError("grid search: parameter '" + p.name +
                    "' is a real range; grids need enumerable domains");
}

}  // namespace

std::vector<ModelConfig> expand_grid(const SearchSpace& space) {
  space.validate();
  std::vector<std::vector<nlohmann::json>> domains;
  for (const ParamDomain& p : space.params) {
    domains.push_back(enumerate_domain(p));
  }

  std::vector<ModelConfig> out;
  std::vector<std::size_t> odo(domains.size(), 0);
  while (true) {
    ModelConfig cfg;
    cfg.family = space.family;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      cfg.hyperparameters[space.params[i].name] = domains[i][odo[i]];
    }
    out.push_back(std::move(cfg));

    // odometer: last declared parameter varies fastest
    std::size_t i = domains.size();
    while (i > 0) {
      --i;
      if (++odo[i] < domains[i].size()) break;
      odo[i] = 0;
      if (i == 0) return out;
    }
    if (domains.empty()) return out;
  }
}

std::vector<ModelConfig> sample_random(const SearchSpace& space, std::size_t n,
                                       std::uint64_t seed) {
  space.validate();
  std::vector<ModelConfig> out;
  out.reserve(n);
  for (std::size_t d = 0; d < n; ++d) {
    Rng rng(derive_seed(seed, "draw", d));
    ModelConfig cfg;
    cfg.family = space.family;
    for (const ParamDomain& p : space.params) {
      switch (p.kind) {
        case ParamDomain::Kind::Categorical:
          cfg.hyperparameters[p.name] =
              p.values[rng.bounded(p.values.size())];
          break;
        case ParamDomain::Kind::IntRange: {
          std::uint64_t span =
              static_cast<std::uint64_t>(p.int_hi - p.int_lo) + 1;
          cfg.hyperparameters[p.name] =
              p.int_lo + static_cast<std::int64_t>(rng.bounded(span));
          break;
        }
        case ParamDomain::Kind::RealRange:
          if (p.log_scale) {
            cfg.hyperparameters[p.name] = std::exp(
                rng.uniform(std::log(p.real_lo), std::log(p.real_hi)));
          } else {
            cfg.hyperparameters[p.name] = rng.uniform(p.real_lo, p.real_hi);
          }
          break;
      }
    }
    out.push_back(std::move(cfg));
  }
  return out;
}

void AshaConfig::validate() const {
  if (eta < 2) throw ConfigError("asha: eta must be >= 2");
  if (min_budget < 1) throw ConfigError("asha: min budget must be >= 1");
  if (min_budget > max_budget) {
    throw ConfigError("asha: min budget must be <= max budget");
  }
}

std::vector<std::size_t> AshaConfig::rung_budgets() const {
  validate();
  std::vector<std::size_t> budgets;
  std::size_t b = min_budget;
  while (b < max_budget) {
    budgets.push_back(b);
    if (b > max_budget / eta) break;  // next multiply would overflow past R
    b *= eta;
  }
  budgets.push_back(max_budget);
  return budgets;
}

const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::Pending: return "pending";
    case TrialStatus::Running: return "running";
    case TrialStatus::StoppedByScheduler: return "stopped-by-scheduler";
    case TrialStatus::StoppedEarly: return "stopped-early";
    case TrialStatus::Completed: return "completed";
    case TrialStatus::Failed: return "failed";
    case TrialStatus::TimeLimitExceeded: return "time-limit-exceeded";
  }
  return "unknown";
}

nlohmann::json trial_to_json(const Trial& t) {
  nlohmann::json j;
  j["trial_id"] = t.trial_id;
  j["family"] = t.config.family;
  j["hyperparameters"] = t.config.hyperparameters;
  j["seed"] = t.seed;
  j["status"] = to_string(t.status);
  nlohmann::json hist = nlohmann::json::array();
  for (auto& [budget, value] : t.history) {
    hist.push_back({{"epochs", budget}, {"value", value}});
  }
  j["history"] = hist;
  j["wall_seconds"] = t.wall_seconds;
  j["epochs_consumed"] = t.epochs_consumed;
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

AshaAction asha_decide(const std::vector<std::vector<double>>& rung_records,
                       std::size_t rung, double value, const AshaConfig& cfg) {
  cfg.validate();
  if (rung >= rung_records.size()) {
    throw ConfigError("asha_decide: rung out of range");
  }
  const std::vector<double>& recorded = rung_records[rung];
  std::size_t n_r = recorded.size();
  std::size_t k = n_r / cfg.eta;
  if (k == 0) return AshaAction::Promote;  // optimistic first promotions

  std::vector<double> sorted = recorded;
  bool maximize = cfg.direction == MetricDirection::Maximize;
  std::sort(sorted.begin(), sorted.end(), [&](double a, double b) {
    return maximize ? a > b : a < b;
  });
  double threshold = sorted[k - 1];
  bool within = maximize ? value >= threshold : value <= threshold;
  return within ? AshaAction::Promote : AshaAction::Stop;
}

bool early_stop(const std::vector<double>& history, std::size_t patience,
                double min_delta, MetricDirection direction) {
  if (patience == 0) return false;
  bool maximize = direction == MetricDirection::Maximize;
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  bool first = true;
  for (double v : history) {
    bool improved = first || (maximize ? v > best + min_delta
                                       : v < best - min_delta);
    first = false;
    if (improved) {
      best = v;
      stale = 0;
    } else {
      ++stale;
    }
  }
  return stale >= patience;
}

void StudyConfig::validate() const {
  if (workers < 1) throw ConfigError("study: workers must be >= 1");
  if (search == Search::Random && n_random == 0) {
    throw ConfigError("study: random search needs a draw count");
  }
  if (!(trial_timeout_seconds > 0.0)) {
    throw ConfigError("study: trial timeout must be > 0");
  }
  asha.validate();
}

namespace {

// Shared scheduler state; every member is guarded by its mutex.
struct Scheduler {
  std::mutex mu;
  std::condition_variable cv;

  std::vector<Trial>* trials = nullptr;
  std::vector<std::vector<double>> rung_records;
  std::vector<AshaDecision> decisions;
  // (trial, rung) units ready to run; promotions go to the front so deep
  // trials finish before fresh ones start (async no-idle order)
  std::deque<std::pair<std::size_t, std::size_t>> ready;
  std::size_t next_fresh = 0;
  std::size_t n_trials = 0;
  std::size_t running = 0;
  std::size_t total_epochs = 0;
  bool use_asha = false;
};

}  // namespace

StudyResult run_study(const SearchSpace& space, const StudyConfig& cfg,
                      TrialRunner& runner) {
  cfg.validate();
  auto t_start = std::chrono::steady_clock::now();

  std::vector<ModelConfig> configs =
      cfg.search == StudyConfig::Search::Grid
          ? expand_grid(space)
          : sample_random(space, cfg.n_random,
                          derive_seed(cfg.seed, "search", 0));
  if (cfg.max_trials > 0 && configs.size() > cfg.max_trials) {
    configs.resize(cfg.max_trials);
  }
  if (configs.empty()) {
    throw ConfigError("study: the search expands to zero trials");
  }

  StudyResult result;
  result.trials.resize(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Trial& t = result.trials[i];
    t.trial_id = i;
    t.config = std::move(configs[i]);
    t.seed = derive_seed(cfg.seed, "trial", i);
    t.status = TrialStatus::Pending;
  }

  const std::vector<std::size_t> budgets =
      cfg.scheduler == StudyConfig::Scheduler::Asha
          ? cfg.asha.rung_budgets()
          : std::vector<std::size_t>{cfg.asha.max_budget};
  const std::size_t last_rung = budgets.size() - 1;

  Scheduler sched;
  sched.trials = &result.trials;
  sched.rung_records.resize(budgets.size());
  sched.n_trials = result.trials.size();
  sched.use_asha = cfg.scheduler == StudyConfig::Scheduler::Asha;

  auto worker = [&]() {
    std::unique_lock<std::mutex> lock(sched.mu);
    while (true) {
      if (sched.ready.empty() && sched.next_fresh >= sched.n_trials &&
          sched.running == 0) {
        sched.cv.notify_all();
        return;
      }
      if (sched.ready.empty() && sched.next_fresh >= sched.n_trials) {
        sched.cv.wait(lock);
        continue;
      }

      std::size_t trial_id, rung;
      if (!sched.ready.empty()) {
        std::tie(trial_id, rung) = sched.ready.front();
        sched.ready.pop_front();
      } else {
        trial_id = sched.next_fresh++;
        rung = 0;
      }
      Trial& trial = (*sched.trials)[trial_id];
      trial.status = TrialStatus::Running;
      sched.running++;

      TrialWork work;
      work.trial_id = trial_id;
      work.config = trial.config;
      work.seed = trial.seed;
      work.target_epochs = budgets[rung];
      auto trial_deadline =
          std::chrono::steady_clock::now() +
          std::chrono::duration<double>(
              std::max(0.0, cfg.trial_timeout_seconds - trial.wall_seconds));
      work.deadline = std::chrono::time_point_cast<
          std::chrono::steady_clock::duration>(trial_deadline);

      lock.unlock();
      TrialStep step;
      std::string error;
      auto t0 = std::chrono::steady_clock::now();
      try {
        step = runner.run_to(work);
      } catch (const std::exception& e) {
        error = e.what();
      }
      double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      lock.lock();

      sched.running--;
      trial.wall_seconds += elapsed;
      trial.epochs_consumed += step.epochs_consumed;
      sched.total_epochs += step.epochs_consumed;

      if (!error.empty()) {
        trial.status = TrialStatus::Failed;
        trial.error = error;
      } else if (step.hit_deadline ||
                 trial.wall_seconds > cfg.trial_timeout_seconds) {
        trial.status = TrialStatus::TimeLimitExceeded;
      } else {
        trial.history.emplace_back(budgets[rung], step.metric);
        sched.rung_records[rung].push_back(step.metric);

        std::vector<double> series;
        series.reserve(trial.history.size());
        for (auto& [b, v] : trial.history) series.push_back(v);

        if (rung == last_rung) {
          trial.status = TrialStatus::Completed;
        } else if (cfg.early_stop_patience > 0 &&
                   early_stop(series, cfg.early_stop_patience,
                              cfg.early_stop_min_delta,
                              cfg.asha.direction)) {
          trial.status = TrialStatus::StoppedEarly;
        } else if (sched.use_asha) {
          AshaDecision d;
          d.trial_id = trial_id;
          d.rung = rung;
          d.value = step.metric;
          d.n_r = sched.rung_records[rung].size();
          d.k = d.n_r / cfg.asha.eta;
          d.action =
              asha_decide(sched.rung_records, rung, step.metric, cfg.asha);
          sched.decisions.push_back(d);
          if (d.action == AshaAction::Promote) {
            trial.status = TrialStatus::Pending;
            sched.ready.emplace_front(trial_id, rung + 1);
          } else {
            trial.status = TrialStatus::StoppedByScheduler;
          }
        } else {
          trial.status = TrialStatus::Completed;  // fifo runs straight to R
        }
      }
      sched.cv.notify_all();
    }
  };

  std::size_t n_workers = std::min(cfg.workers, result.trials.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  result.decisions = std::move(sched.decisions);
  result.total_epochs = sched.total_epochs;

  bool maximize = cfg.asha.direction == MetricDirection::Maximize;
  std::size_t n_failed = 0;
  for (const Trial& t : result.trials) {
    if (t.status == TrialStatus::Failed) {
      n_failed++;
      continue;
    }
    if (t.status != TrialStatus::Completed || t.history.empty()) continue;
    double v = t.history.back().second;
    bool better = !result.has_best ||
                  (maximize ? v > result.best_value : v < result.best_value);
    if (better) {
      result.has_best = true;
      result.best_value = v;
      result.best_trial_id = t.trial_id;
    }
  }
  if (n_failed == result.trials.size()) {
    throw ModelError("study: every trial failed; first error: " +
                     result.trials.front().error);
  }

  result.total_wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

bool validate_asha_log(const std::vector<AshaDecision>& log,
                       const AshaConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<double>> records(cfg.rung_budgets().size());
  bool maximize = cfg.direction == MetricDirection::Maximize;
  for (const AshaDecision& d : log) {
    if (d.rung >= records.size()) return false;
    records[d.rung].push_back(d.value);
    if (records[d.rung].size() != d.n_r) return false;
    std::size_t k = d.n_r / cfg.eta;
    if (k != d.k) return false;

    AshaAction expected;
    if (k == 0) {
      expected = AshaAction::Promote;
    } else {
      std::vector<double> sorted = records[d.rung];
      std::sort(sorted.begin(), sorted.end(), [&](double a, double b) {
        return maximize ? a > b : a < b;
      });
      bool within = maximize ? d.value >= sorted[k - 1]
                             : d.value <= sorted[k - 1];
      expected = within ? AshaAction::Promote : AshaAction::Stop;
    }
    if (d.action != expected) return false;
  }
  return true;
}

}  // namespace warpbench
