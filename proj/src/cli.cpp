#include "warpbench/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <memory>
#include <sstream>
#include <string_view>
#include <utility>

#include "warpbench/rng.hpp"
#include "warpbench/version.hpp"

namespace warpbench {

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void fail_at(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

std::string sub(const std::string& where, const std::string& key) {
  return where + "." + key;
}

std::string at_index(const std::string& where, std::size_t i) {
  return where + "[" + std::to_string(i) + "]";
}

void require_object(const ojson& j, const std::string& where) {
  if (!j.is_object()) fail_at(where, "expected an object");
}

const ojson* find_key(const ojson& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &it.value();
}

const ojson& require_key(const ojson& j, const char* key,
                         const std::string& where) {
  const ojson* v = find_key(j, key);
  if (!v) fail_at(where, std::string("missing required key \"") + key + "\"");
  return *v;
}

void reject_unknown(const ojson& j, const std::string& where,
                    std::initializer_list<std::string_view> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      fail_at(where, "unknown key \"" + it.key() + "\"");
    }
  }
}

std::string get_string(const ojson& j, const std::string& where) {
  if (!j.is_string()) fail_at(where, "expected a string");
  return j.get<std::string>();
}

bool get_bool(const ojson& j, const std::string& where) {
  if (!j.is_boolean()) fail_at(where, "expected a boolean");
  return j.get<bool>();
}

double get_number(const ojson& j, const std::string& where) {
  if (!j.is_number()) fail_at(where, "expected a number");
  return j.get<double>();
}

std::uint64_t get_uint(const ojson& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(j.get<std::int64_t>());
  }
  fail_at(where, "expected a non-negative integer");
}

std::size_t get_size(const ojson& j, const std::string& where) {
  return static_cast<std::size_t>(get_uint(j, where));
}

std::int64_t get_int(const ojson& j, const std::string& where) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) {
    fail_at(where, "expected an integer");
  }
  return j.get<std::int64_t>();
}

nlohmann::json to_plain(const ojson& j) {
  return nlohmann::json::parse(j.dump());
}

template <typename T>
T pick(const ojson& j, const std::string& where,
       std::initializer_list<std::pair<std::string_view, T>> table) {
  const std::string v = get_string(j, where);
  for (const auto& entry : table) {
    if (entry.first == v) return entry.second;
  }
  std::string options;
  for (const auto& entry : table) {
    if (!options.empty()) options += ", ";
    options += "\"" + std::string(entry.first) + "\"";
  }
  fail_at(where, "invalid value \"" + v + "\" (expected one of " + options + ")");
}

constexpr const char* kFamilies[] = {"mostpop", "random", "itemknn",
                                     "userknn", "ease",   "bprmf"};
constexpr const char* kMetrics[] = {"Precision", "Recall", "HitRate",
                                    "MRR",       "MAP",    "nDCG"};
constexpr const char* kTests[] = {"t", "wilcoxon", "mann-whitney"};

bool known_family(const std::string& f) {
  for (const char* k : kFamilies) {
    if (f == k) return true;
  }
  return false;
}

bool known_metric(const std::string& m) {
  for (const char* k : kMetrics) {
    if (m == k) return true;
  }
  return false;
}

bool known_test(const std::string& t) {
  for (const char* k : kTests) {
    if (t == k) return true;
  }
  return false;
}

// Model names become artifact file names, so keep them path-safe.
bool safe_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

DatasetBlock parse_dataset(const ojson& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where, {"path", "schema", "parse_mode", "dedup"});
  DatasetBlock b;
  b.path = get_string(require_key(j, "path", where), sub(where, "path"));
  if (b.path.empty()) fail_at(sub(where, "path"), "path must be non-empty");
  if (const ojson* s = find_key(j, "schema")) {
    const std::string sw = sub(where, "schema");
    require_object(*s, sw);
    reject_unknown(*s, sw, {"columns", "separator", "header"});
    if (const ojson* c = find_key(*s, "columns")) {
      const std::string cw = sub(sw, "columns");
      if (!c->is_array() || c->empty()) {
        fail_at(cw, "expected a non-empty array of column names");
      }
      b.schema.columns.clear();
      for (std::size_t i = 0; i < c->size(); ++i) {
        b.schema.columns.push_back(get_string((*c)[i], at_index(cw, i)));
      }
    }
    if (const ojson* sep = find_key(*s, "separator")) {
      b.schema.separator = get_string(*sep, sub(sw, "separator"));
    }
    if (const ojson* h = find_key(*s, "header")) {
      b.schema.header = get_bool(*h, sub(sw, "header"));
    }
    try {
      b.schema.validate();
    } catch (const std::exception& e) {
      fail_at(sw, e.what());
    }
  }
  if (const ojson* m = find_key(j, "parse_mode")) {
    b.parse_mode = pick<ParseMode>(*m, sub(where, "parse_mode"),
                                   {{"strict", ParseMode::Strict},
                                    {"lenient", ParseMode::Lenient}});
  }
  if (const ojson* d = find_key(j, "dedup")) {
    b.dedup =
        pick<DedupPolicy>(*d, sub(where, "dedup"),
                          {{"keep-last", DedupPolicy::KeepLastByTimestamp},
                           {"keep-first", DedupPolicy::KeepFirst},
                           {"error", DedupPolicy::Error}});
  }
  return b;
}

FilterSpec parse_filter(const ojson& j, const std::string& where) {
  require_object(j, where);
  const std::string kind =
      get_string(require_key(j, "kind", where), sub(where, "kind"));
  FilterSpec f;
  if (kind == "rating-threshold") {
    reject_unknown(j, where, {"kind", "mode", "theta"});
    f.kind = FilterSpec::Kind::RatingThreshold;
    if (const ojson* m = find_key(j, "mode")) {
      f.mode = pick<RatingThresholdMode>(
          *m, sub(where, "mode"),
          {{"global", RatingThresholdMode::Global},
           {"user-mean", RatingThresholdMode::UserMean},
           {"item-mean", RatingThresholdMode::ItemMean}});
    }
    if (f.mode == RatingThresholdMode::Global) {
      f.theta = get_number(require_key(j, "theta", where), sub(where, "theta"));
    } else if (find_key(j, "theta")) {
      fail_at(sub(where, "theta"), "theta applies only to the global mode");
    }
  } else if (kind == "k-core") {
    reject_unknown(j, where, {"kind", "k"});
    f.kind = FilterSpec::Kind::KCore;
    f.k = get_size(require_key(j, "k", where), sub(where, "k"));
    if (f.k < 1) fail_at(sub(where, "k"), "k must be >= 1");
  } else if (kind == "cold-entity") {
    reject_unknown(j, where, {"kind", "min_user", "min_item"});
    f.kind = FilterSpec::Kind::ColdEntity;
    if (const ojson* v = find_key(j, "min_user")) {
      f.min_user = get_size(*v, sub(where, "min_user"));
    }
    if (const ojson* v = find_key(j, "min_item")) {
      f.min_item = get_size(*v, sub(where, "min_item"));
    }
  } else {
    fail_at(sub(where, "kind"), "unknown filter kind \"" + kind + "\"");
  }
  return f;
}

SplitSpec parse_split(const ojson& j, const std::string& where) {
  require_object(j, where);
  const std::string strategy =
      get_string(require_key(j, "strategy", where), sub(where, "strategy"));
  SplitSpec s;
  auto parse_mode_key = [&]() {
    if (const ojson* m = find_key(j, "mode")) {
      s.mode = pick<SplitMode>(*m, sub(where, "mode"),
                               {{"random", SplitMode::Random},
                                {"temporal", SplitMode::Temporal}});
    }
  };
  if (strategy == "holdout") {
    reject_unknown(j, where, {"strategy", "mode", "ratio"});
    s.strategy = SplitStrategy::Holdout;
    const ojson& r = require_key(j, "ratio", where);
    const std::string rw = sub(where, "ratio");
    if (!r.is_array()) fail_at(rw, "expected an array of fractions");
    s.ratio.clear();
    for (std::size_t i = 0; i < r.size(); ++i) {
      s.ratio.push_back(get_number(r[i], at_index(rw, i)));
    }
    parse_mode_key();
  } else if (strategy == "leave-k-out") {
    reject_unknown(j, where, {"strategy", "mode", "k", "with_validation"});
    s.strategy = SplitStrategy::LeaveKOut;
    if (const ojson* k = find_key(j, "k")) s.k = get_size(*k, sub(where, "k"));
    if (const ojson* w = find_key(j, "with_validation")) {
      s.with_validation = get_bool(*w, sub(where, "with_validation"));
    }
    parse_mode_key();
  } else if (strategy == "fixed-timestamp") {
    reject_unknown(j, where, {"strategy", "timestamp"});
    s.strategy = SplitStrategy::FixedTimestamp;
    s.timestamp =
        get_int(require_key(j, "timestamp", where), sub(where, "timestamp"));
  } else {
    fail_at(sub(where, "strategy"),
            "unknown split strategy \"" + strategy + "\"");
  }
  try {
    s.validate();
  } catch (const std::exception& e) {
    fail_at(where, e.what());
  }
  return s;
}

ParamDomain parse_domain(const std::string& name, const ojson& j,
                         const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where, {"grid", "range", "scale"});
  const ojson* grid = find_key(j, "grid");
  const ojson* range = find_key(j, "range");
  if ((grid != nullptr) == (range != nullptr)) {
    fail_at(where, "declare exactly one of \"grid\" or \"range\"");
  }
  if (grid) {
    if (find_key(j, "scale")) {
      fail_at(sub(where, "scale"), "scale applies only to ranges");
    }
    const std::string gw = sub(where, "grid");
    if (!grid->is_array() || grid->empty()) {
      fail_at(gw, "expected a non-empty array");
    }
    std::vector<nlohmann::json> values;
    for (const auto& v : *grid) values.push_back(to_plain(v));
    return ParamDomain::categorical(name, std::move(values));
  }
  const std::string rw = sub(where, "range");
  if (!range->is_array() || range->size() != 2) fail_at(rw, "expected [lo, hi]");
  bool log_scale = false;
  bool has_scale = false;
  if (const ojson* sc = find_key(j, "scale")) {
    const std::string v = get_string(*sc, sub(where, "scale"));
    if (v == "log") {
      log_scale = true;
    } else if (v != "linear") {
      fail_at(sub(where, "scale"), "expected \"linear\" or \"log\"");
    }
    has_scale = true;
  }
  const ojson& lo = (*range)[0];
  const ojson& hi = (*range)[1];
  const bool integral = (lo.is_number_integer() || lo.is_number_unsigned()) &&
                        (hi.is_number_integer() || hi.is_number_unsigned());
  if (integral && !has_scale) {
    const std::int64_t l = get_int(lo, at_index(rw, 0));
    const std::int64_t h = get_int(hi, at_index(rw, 1));
    if (l > h) fail_at(rw, "lo must be <= hi");
    return ParamDomain::int_range(name, l, h);
  }
  const double l = get_number(lo, at_index(rw, 0));
  const double h = get_number(hi, at_index(rw, 1));
  if (!(l <= h)) fail_at(rw, "lo must be <= hi");
  if (log_scale && !(l > 0.0)) fail_at(rw, "log scale requires lo > 0");
  return ParamDomain::real_range(name, l, h, log_scale);
}

ModelBlock parse_model(const ojson& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"name", "family", "hyperparameters", "search", "checkpoint"});
  ModelBlock b;
  b.family = get_string(require_key(j, "family", where), sub(where, "family"));
  if (!known_family(b.family)) {
    fail_at(sub(where, "family"), "unknown model family \"" + b.family + "\"");
  }
  b.name = b.family;
  if (const ojson* n = find_key(j, "name")) {
    b.name = get_string(*n, sub(where, "name"));
  }
  if (!safe_name(b.name)) {
    fail_at(sub(where, "name"),
            "model names must match [A-Za-z0-9._-]+ (they become file names)");
  }
  if (const ojson* c = find_key(j, "checkpoint")) {
    b.checkpoint = get_string(*c, sub(where, "checkpoint"));
  }
  const ojson* hp = find_key(j, "hyperparameters");
  const ojson* search = find_key(j, "search");
  if ((hp != nullptr) == (search != nullptr)) {
    fail_at(where, "declare exactly one of \"hyperparameters\" or \"search\"");
  }
  b.search.family = b.family;
  if (hp) {
    const std::string hw = sub(where, "hyperparameters");
    require_object(*hp, hw);
    b.fixed = true;
    for (auto it = hp->begin(); it != hp->end(); ++it) {
      b.search.params.push_back(
          ParamDomain::categorical(it.key(), {to_plain(it.value())}));
    }
    try {
      ModelConfig probe{b.family, to_plain(*hp)};
      probe.validate();
    } catch (const std::exception& e) {
      fail_at(hw, e.what());
    }
  } else {
    const std::string sw = sub(where, "search");
    require_object(*search, sw);
    if (search->empty()) fail_at(sw, "search must declare at least one parameter");
    for (auto it = search->begin(); it != search->end(); ++it) {
      if (b.family == "bprmf" && it.key() == "epochs") {
        fail_at(sub(sw, "epochs"),
                "epochs is budget-controlled; set tuning.max_budget instead");
      }
      b.search.params.push_back(
          parse_domain(it.key(), it.value(), sub(sw, it.key())));
    }
    try {
      b.search.validate();
    } catch (const std::exception& e) {
      fail_at(sw, e.what());
    }
  }
  return b;
}

TuningBlock parse_tuning(const ojson& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where,
                 {"search", "scheduler", "n_random", "workers", "eta",
                  "min_budget", "max_budget", "direction", "metric", "cutoff",
                  "trial_timeout_seconds", "early_stop_patience",
                  "early_stop_min_delta", "max_trials"});
  TuningBlock b;
  if (const ojson* v = find_key(j, "search")) {
    b.search = pick<StudyConfig::Search>(*v, sub(where, "search"),
                                         {{"grid", StudyConfig::Search::Grid},
                                          {"random", StudyConfig::Search::Random}});
  }
  if (const ojson* v = find_key(j, "scheduler")) {
    b.scheduler =
        pick<StudyConfig::Scheduler>(*v, sub(where, "scheduler"),
                                     {{"fifo", StudyConfig::Scheduler::Fifo},
                                      {"asha", StudyConfig::Scheduler::Asha}});
  }
  if (const ojson* v = find_key(j, "n_random")) {
    b.n_random = get_size(*v, sub(where, "n_random"));
  }
  if (b.search == StudyConfig::Search::Random && b.n_random == 0) {
    fail_at(where, "random search requires n_random >= 1");
  }
  if (const ojson* v = find_key(j, "workers")) {
    b.workers = get_size(*v, sub(where, "workers"));
    if (b.workers < 1) fail_at(sub(where, "workers"), "workers must be >= 1");
  }
  if (const ojson* v = find_key(j, "eta")) {
    b.eta = get_size(*v, sub(where, "eta"));
    if (b.eta < 2) fail_at(sub(where, "eta"), "eta must be >= 2");
  }
  if (const ojson* v = find_key(j, "min_budget")) {
    b.min_budget = get_size(*v, sub(where, "min_budget"));
    if (b.min_budget < 1) fail_at(sub(where, "min_budget"), "must be >= 1");
  }
  if (const ojson* v = find_key(j, "max_budget")) {
    b.max_budget = get_size(*v, sub(where, "max_budget"));
  }
  if (b.max_budget < b.min_budget) b.max_budget = b.min_budget;
  if (const ojson* v = find_key(j, "direction")) {
    b.direction = pick<MetricDirection>(*v, sub(where, "direction"),
                                        {{"maximize", MetricDirection::Maximize},
                                         {"minimize", MetricDirection::Minimize}});
  }
  if (const ojson* v = find_key(j, "metric")) {
    b.metric = get_string(*v, sub(where, "metric"));
    if (!known_metric(b.metric)) {
      fail_at(sub(where, "metric"), "unknown metric \"" + b.metric + "\"");
    }
  }
  if (const ojson* v = find_key(j, "cutoff")) {
    b.cutoff = get_size(*v, sub(where, "cutoff"));
    if (b.cutoff < 1) fail_at(sub(where, "cutoff"), "cutoff must be >= 1");
  }
  if (const ojson* v = find_key(j, "trial_timeout_seconds")) {
    b.trial_timeout_seconds = get_number(*v, sub(where, "trial_timeout_seconds"));
    if (!(b.trial_timeout_seconds > 0.0)) {
      fail_at(sub(where, "trial_timeout_seconds"), "must be > 0");
    }
  }
  if (const ojson* v = find_key(j, "early_stop_patience")) {
    b.early_stop_patience = get_size(*v, sub(where, "early_stop_patience"));
  }
  if (const ojson* v = find_key(j, "early_stop_min_delta")) {
    b.early_stop_min_delta = get_number(*v, sub(where, "early_stop_min_delta"));
    if (b.early_stop_min_delta < 0.0) {
      fail_at(sub(where, "early_stop_min_delta"), "must be >= 0");
    }
  }
  if (const ojson* v = find_key(j, "max_trials")) {
    b.max_trials = get_size(*v, sub(where, "max_trials"));
  }
  return b;
}

EvaluationBlock parse_evaluation(const ojson& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where, {"cutoffs", "exposure", "head_fraction",
                            "min_rating", "filter_seen", "tests", "correction"});
  EvaluationBlock b;
  if (const ojson* c = find_key(j, "cutoffs")) {
    const std::string cw = sub(where, "cutoffs");
    if (!c->is_array() || c->empty()) fail_at(cw, "expected a non-empty array");
    b.cutoffs.clear();
    for (std::size_t i = 0; i < c->size(); ++i) {
      const std::size_t v = get_size((*c)[i], at_index(cw, i));
      if (v < 1) fail_at(at_index(cw, i), "cutoffs must be >= 1");
      if (std::find(b.cutoffs.begin(), b.cutoffs.end(), v) != b.cutoffs.end()) {
        fail_at(at_index(cw, i), "duplicate cutoff");
      }
      b.cutoffs.push_back(v);
    }
  }
  if (const ojson* v = find_key(j, "exposure")) {
    b.exposure = get_bool(*v, sub(where, "exposure"));
  }
  if (const ojson* v = find_key(j, "head_fraction")) {
    b.head_fraction = get_number(*v, sub(where, "head_fraction"));
    if (!(b.head_fraction > 0.0 && b.head_fraction <= 1.0)) {
      fail_at(sub(where, "head_fraction"), "must be in (0, 1]");
    }
  }
  if (const ojson* v = find_key(j, "min_rating")) {
    b.min_rating = get_number(*v, sub(where, "min_rating"));
  }
  if (const ojson* v = find_key(j, "filter_seen")) {
    b.filter_seen = get_bool(*v, sub(where, "filter_seen"));
  }
  if (const ojson* t = find_key(j, "tests")) {
    const std::string tw = sub(where, "tests");
    if (!t->is_array()) fail_at(tw, "expected an array");
    for (std::size_t i = 0; i < t->size(); ++i) {
      const std::string v = get_string((*t)[i], at_index(tw, i));
      if (!known_test(v)) fail_at(at_index(tw, i), "unknown test \"" + v + "\"");
      if (std::find(b.tests.begin(), b.tests.end(), v) != b.tests.end()) {
        fail_at(at_index(tw, i), "duplicate test");
      }
      b.tests.push_back(v);
    }
  }
  if (const ojson* v = find_key(j, "correction")) {
    const std::string c = get_string(*v, sub(where, "correction"));
    if (c != "none" && c != "bonferroni" && c != "bh") {
      fail_at(sub(where, "correction"), "expected \"none\", \"bonferroni\" or \"bh\"");
    }
    b.correction = c;
  }
  return b;
}

ReportingBlock parse_reporting(const ojson& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, where, {"output_dir", "power", "carbon_intensity",
                            "checkpoints", "recommendations"});
  ReportingBlock b;
  if (const ojson* v = find_key(j, "output_dir")) {
    b.output_dir = get_string(*v, sub(where, "output_dir"));
    if (b.output_dir.empty()) {
      fail_at(sub(where, "output_dir"), "must be non-empty");
    }
  }
  if (const ojson* p = find_key(j, "power")) {
    const std::string pw = sub(where, "power");
    require_object(*p, pw);
    reject_unknown(*p, pw, {"cpu_tdp_w", "gpu_tdp_w", "ram_w_per_gb"});
    if (const ojson* v = find_key(*p, "cpu_tdp_w")) {
      b.power.cpu_tdp_w = get_number(*v, sub(pw, "cpu_tdp_w"));
    }
    if (const ojson* v = find_key(*p, "gpu_tdp_w")) {
      b.power.gpu_tdp_w = get_number(*v, sub(pw, "gpu_tdp_w"));
    }
    if (const ojson* v = find_key(*p, "ram_w_per_gb")) {
      b.power.ram_w_per_gb = get_number(*v, sub(pw, "ram_w_per_gb"));
    }
    if (b.power.cpu_tdp_w < 0 || b.power.gpu_tdp_w < 0 ||
        b.power.ram_w_per_gb < 0) {
      fail_at(pw, "power figures must be >= 0");
    }
  }
  if (const ojson* v = find_key(j, "carbon_intensity")) {
    b.carbon_intensity = get_number(*v, sub(where, "carbon_intensity"));
    if (b.carbon_intensity < 0.0) {
      fail_at(sub(where, "carbon_intensity"), "must be >= 0");
    }
  }
  if (const ojson* v = find_key(j, "checkpoints")) {
    b.write_checkpoints = get_bool(*v, sub(where, "checkpoints"));
  }
  if (const ojson* v = find_key(j, "recommendations")) {
    b.write_recommendations = get_bool(*v, sub(where, "recommendations"));
  }
  return b;
}

ExperimentConfig parse_root(const ojson& j) {
  const std::string where = "config";
  require_object(j, where);
  reject_unknown(j, where, {"dataset", "filters", "split", "models", "tuning",
                            "evaluation", "reporting", "seed"});
  ExperimentConfig cfg;
  cfg.dataset = parse_dataset(require_key(j, "dataset", where), "dataset");
  if (const ojson* f = find_key(j, "filters")) {
    if (!f->is_array()) fail_at("filters", "expected an array");
    for (std::size_t i = 0; i < f->size(); ++i) {
      cfg.filters.push_back(parse_filter((*f)[i], at_index("filters", i)));
    }
  }
  cfg.split = parse_split(require_key(j, "split", where), "split");
  const ojson& models = require_key(j, "models", where);
  if (!models.is_array() || models.empty()) {
    fail_at("models", "expected a non-empty array");
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    cfg.models.push_back(parse_model(models[i], at_index("models", i)));
    for (std::size_t k = 0; k + 1 < cfg.models.size(); ++k) {
      if (cfg.models[k].name == cfg.models.back().name) {
        fail_at(sub(at_index("models", i), "name"),
                "duplicate model name \"" + cfg.models.back().name + "\"");
      }
    }
  }
  if (const ojson* t = find_key(j, "tuning")) {
    cfg.tuning = parse_tuning(*t, "tuning");
  }
  if (const ojson* e = find_key(j, "evaluation")) {
    cfg.evaluation = parse_evaluation(*e, "evaluation");
  }
  if (const ojson* r = find_key(j, "reporting")) {
    cfg.reporting = parse_reporting(*r, "reporting");
  }
  cfg.seed = get_uint(require_key(j, "seed", where), "seed");
  return cfg;
}

const char* filter_kind_name(const FilterSpec& f) {
  switch (f.kind) {
    case FilterSpec::Kind::RatingThreshold:
      return "rating-threshold";
    case FilterSpec::Kind::KCore:
      return "k-core";
    case FilterSpec::Kind::ColdEntity:
      return "cold-entity";
  }
  return "?";
}

const char* threshold_mode_name(RatingThresholdMode m) {
  switch (m) {
    case RatingThresholdMode::Global:
      return "global";
    case RatingThresholdMode::UserMean:
      return "user-mean";
    case RatingThresholdMode::ItemMean:
      return "item-mean";
  }
  return "?";
}

const char* strategy_name(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::Holdout:
      return "holdout";
    case SplitStrategy::LeaveKOut:
      return "leave-k-out";
    case SplitStrategy::FixedTimestamp:
      return "fixed-timestamp";
    case SplitStrategy::KFold:
      return "k-fold";
  }
  return "?";
}

ojson domain_to_json(const ParamDomain& d) {
  ojson o = ojson::object();
  switch (d.kind) {
    case ParamDomain::Kind::Categorical: {
      ojson arr = ojson::array();
      for (const nlohmann::json& v : d.values) {
        arr.push_back(ojson::parse(v.dump()));
      }
      o["grid"] = std::move(arr);
      break;
    }
    case ParamDomain::Kind::IntRange:
      o["range"] = ojson::array({d.int_lo, d.int_hi});
      break;
    case ParamDomain::Kind::RealRange:
      o["range"] = ojson::array({d.real_lo, d.real_hi});
      o["scale"] = d.log_scale ? "log" : "linear";
      break;
  }
  return o;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.path.empty()) {
    throw ConfigError("dataset.path: must be non-empty");
  }
  try {
    dataset.schema.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("dataset.schema: ") + e.what());
  }
  split.validate();
  if (models.empty()) {
    throw ConfigError("models: at least one model is required");
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    const ModelBlock& m = models[i];
    const std::string where = at_index("models", i);
    if (!known_family(m.family)) {
      throw ConfigError(sub(where, "family") + ": unknown model family \"" +
                        m.family + "\"");
    }
    if (!safe_name(m.name)) {
      throw ConfigError(sub(where, "name") +
                        ": model names must match [A-Za-z0-9._-]+");
    }
    for (std::size_t k = i + 1; k < models.size(); ++k) {
      if (models[k].name == m.name) {
        throw ConfigError(sub(at_index("models", k), "name") +
                          ": duplicate model name \"" + m.name + "\"");
      }
    }
    try {
      m.search.validate();
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!m.fixed && m.family == "bprmf") {
      for (const ParamDomain& p : m.search.params) {
        if (p.name == "epochs") {
          throw ConfigError(sub(where, "search") +
                            ".epochs: epochs is budget-controlled; set "
                            "tuning.max_budget instead");
        }
      }
    }
  }
  if (tuning.workers < 1) throw ConfigError("tuning.workers: must be >= 1");
  if (tuning.eta < 2) throw ConfigError("tuning.eta: must be >= 2");
  if (tuning.min_budget < 1) throw ConfigError("tuning.min_budget: must be >= 1");
  if (tuning.max_budget < tuning.min_budget) {
    throw ConfigError("tuning.max_budget: must be >= tuning.min_budget");
  }
  if (tuning.search == StudyConfig::Search::Random && tuning.n_random == 0) {
    throw ConfigError("tuning.n_random: random search requires n_random >= 1");
  }
  if (!known_metric(tuning.metric)) {
    throw ConfigError("tuning.metric: unknown metric \"" + tuning.metric + "\"");
  }
  if (tuning.cutoff < 1) throw ConfigError("tuning.cutoff: must be >= 1");
  if (!(tuning.trial_timeout_seconds > 0.0)) {
    throw ConfigError("tuning.trial_timeout_seconds: must be > 0");
  }
  if (evaluation.cutoffs.empty()) {
    throw ConfigError("evaluation.cutoffs: at least one cutoff is required");
  }
  for (std::size_t c : evaluation.cutoffs) {
    if (c < 1) throw ConfigError("evaluation.cutoffs: cutoffs must be >= 1");
  }
  if (!(evaluation.head_fraction > 0.0 && evaluation.head_fraction <= 1.0)) {
    throw ConfigError("evaluation.head_fraction: must be in (0, 1]");
  }
  for (const std::string& t : evaluation.tests) {
    if (!known_test(t)) {
      throw ConfigError("evaluation.tests: unknown test \"" + t + "\"");
    }
  }
  if (evaluation.correction != "none" && evaluation.correction != "bonferroni" &&
      evaluation.correction != "bh") {
    throw ConfigError("evaluation.correction: expected \"none\", \"bonferroni\" or \"bh\"");
  }
  if (reporting.output_dir.empty()) {
    throw ConfigError("reporting.output_dir: must be non-empty");
  }
  if (reporting.power.cpu_tdp_w < 0 || reporting.power.gpu_tdp_w < 0 ||
      reporting.power.ram_w_per_gb < 0 || reporting.carbon_intensity < 0) {
    throw ConfigError("reporting: power and intensity figures must be >= 0");
  }
}

ExperimentConfig parse_config_text(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_root(j);
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  ojson root = ojson::object();

  ojson ds = ojson::object();
  ds["path"] = cfg.dataset.path;
  ojson schema = ojson::object();
  schema["columns"] = cfg.dataset.schema.columns;
  schema["separator"] = cfg.dataset.schema.separator;
  schema["header"] = cfg.dataset.schema.header;
  ds["schema"] = std::move(schema);
  ds["parse_mode"] =
      cfg.dataset.parse_mode == ParseMode::Strict ? "strict" : "lenient";
  ds["dedup"] = cfg.dataset.dedup == DedupPolicy::KeepLastByTimestamp
                    ? "keep-last"
                    : cfg.dataset.dedup == DedupPolicy::KeepFirst ? "keep-first"
                                                                  : "error";
  root["dataset"] = std::move(ds);

  if (!cfg.filters.empty()) {
    ojson filters = ojson::array();
    for (const FilterSpec& f : cfg.filters) {
      ojson o = ojson::object();
      o["kind"] = filter_kind_name(f);
      switch (f.kind) {
        case FilterSpec::Kind::RatingThreshold:
          o["mode"] = threshold_mode_name(f.mode);
          if (f.mode == RatingThresholdMode::Global) o["theta"] = f.theta;
          break;
        case FilterSpec::Kind::KCore:
          o["k"] = f.k;
          break;
        case FilterSpec::Kind::ColdEntity:
          o["min_user"] = f.min_user;
          o["min_item"] = f.min_item;
          break;
      }
      filters.push_back(std::move(o));
    }
    root["filters"] = std::move(filters);
  }

  ojson split = ojson::object();
  split["strategy"] = strategy_name(cfg.split.strategy);
  switch (cfg.split.strategy) {
    case SplitStrategy::Holdout:
      split["mode"] =
          cfg.split.mode == SplitMode::Random ? "random" : "temporal";
      split["ratio"] = cfg.split.ratio;
      break;
    case SplitStrategy::LeaveKOut:
      split["mode"] =
          cfg.split.mode == SplitMode::Random ? "random" : "temporal";
      split["k"] = cfg.split.k;
      split["with_validation"] = cfg.split.with_validation;
      break;
    case SplitStrategy::FixedTimestamp:
      split["timestamp"] = cfg.split.timestamp;
      break;
    case SplitStrategy::KFold:
      split["folds"] = cfg.split.folds;
      break;
  }
  root["split"] = std::move(split);

  ojson models = ojson::array();
  for (const ModelBlock& m : cfg.models) {
    ojson o = ojson::object();
    o["name"] = m.name;
    o["family"] = m.family;
    if (m.fixed) {
      ojson hp = ojson::object();
      for (const ParamDomain& p : m.search.params) {
        hp[p.name] = ojson::parse(p.values.front().dump());
      }
      o["hyperparameters"] = std::move(hp);
    } else {
      ojson sp = ojson::object();
      for (const ParamDomain& p : m.search.params) {
        sp[p.name] = domain_to_json(p);
      }
      o["search"] = std::move(sp);
    }
    if (!m.checkpoint.empty()) o["checkpoint"] = m.checkpoint;
    models.push_back(std::move(o));
  }
  root["models"] = std::move(models);

  ojson tuning = ojson::object();
  tuning["search"] =
      cfg.tuning.search == StudyConfig::Search::Grid ? "grid" : "random";
  tuning["scheduler"] =
      cfg.tuning.scheduler == StudyConfig::Scheduler::Fifo ? "fifo" : "asha";
  if (cfg.tuning.n_random > 0) tuning["n_random"] = cfg.tuning.n_random;
  tuning["workers"] = cfg.tuning.workers;
  tuning["eta"] = cfg.tuning.eta;
  tuning["min_budget"] = cfg.tuning.min_budget;
  tuning["max_budget"] = cfg.tuning.max_budget;
  tuning["direction"] = cfg.tuning.direction == MetricDirection::Maximize
                            ? "maximize"
                            : "minimize";
  tuning["metric"] = cfg.tuning.metric;
  tuning["cutoff"] = cfg.tuning.cutoff;
  tuning["trial_timeout_seconds"] = cfg.tuning.trial_timeout_seconds;
  tuning["early_stop_patience"] = cfg.tuning.early_stop_patience;
  tuning["early_stop_min_delta"] = cfg.tuning.early_stop_min_delta;
  tuning["max_trials"] = cfg.tuning.max_trials;
  root["tuning"] = std::move(tuning);

  ojson evaluation = ojson::object();
  evaluation["cutoffs"] = cfg.evaluation.cutoffs;
  evaluation["exposure"] = cfg.evaluation.exposure;
  evaluation["head_fraction"] = cfg.evaluation.head_fraction;
  if (cfg.evaluation.min_rating) {
    evaluation["min_rating"] = *cfg.evaluation.min_rating;
  }
  evaluation["filter_seen"] = cfg.evaluation.filter_seen;
  if (!cfg.evaluation.tests.empty()) evaluation["tests"] = cfg.evaluation.tests;
  evaluation["correction"] = cfg.evaluation.correction;
  root["evaluation"] = std::move(evaluation);

  ojson reporting = ojson::object();
  reporting["output_dir"] = cfg.reporting.output_dir;
  ojson power = ojson::object();
  power["cpu_tdp_w"] = cfg.reporting.power.cpu_tdp_w;
  power["gpu_tdp_w"] = cfg.reporting.power.gpu_tdp_w;
  power["ram_w_per_gb"] = cfg.reporting.power.ram_w_per_gb;
  reporting["power"] = std::move(power);
  reporting["carbon_intensity"] = cfg.reporting.carbon_intensity;
  reporting["checkpoints"] = cfg.reporting.write_checkpoints;
  reporting["recommendations"] = cfg.reporting.write_recommendations;
  root["reporting"] = std::move(reporting);

  root["seed"] = cfg.seed;
  return root;
}

TrialStep ModelTrialRunner::run_to(const TrialWork& work) {
  auto emit = [&](const char* stage, nlohmann::json payload) {
    if (s_.hook) s_.hook(PipelineEvent{stage, std::move(payload)});
  };
  emit("trial-start", {{"model", s_.model_name},
                       {"trial", work.trial_id},
                       {"target_epochs", work.target_epochs}});
  try {
    TrialStep step;
    if (std::chrono::steady_clock::now() >= work.deadline) {
      step.hit_deadline = true;
      emit("trial-end", {{"model", s_.model_name},
                         {"trial", work.trial_id},
                         {"hit_deadline", true}});
      return step;
    }
    const bool iterative = s_.family == "bprmf";
    bool cached = false;
    if (!iterative) {
      std::lock_guard<std::mutex> lk(mu_);
      auto it = cached_.find(work.trial_id);
      if (it != cached_.end()) {
        step.metric = it->second;
        cached = true;
      }
    }
    if (!cached) {
      ModelConfig cfg = work.config;
      if (iterative) cfg.hyperparameters["epochs"] = work.target_epochs;
      TrainedModel m = fit_model(cfg, s_.train, work.seed);
      step.metric = evaluate(m);
      step.epochs_consumed = iterative ? work.target_epochs : 1;
      if (!iterative) {
        std::lock_guard<std::mutex> lk(mu_);
        cached_[work.trial_id] = step.metric;
      }
    }
    if (std::chrono::steady_clock::now() >= work.deadline) {
      step.hit_deadline = true;
    }
    emit("trial-end", {{"model", s_.model_name},
                       {"trial", work.trial_id},
                       {"metric", step.metric},
                       {"epochs", step.epochs_consumed},
                       {"hit_deadline", step.hit_deadline}});
    return step;
  } catch (const std::exception& e) {
    emit("trial-end", {{"model", s_.model_name},
                       {"trial", work.trial_id},
                       {"error", e.what()}});
    throw;
  }
}

double ModelTrialRunner::evaluate(const TrainedModel& m) const {
  RecommendationList recs =
      recommend(m, s_.eval_users, s_.cutoff, s_.filter_seen, 1);
  MetricReport rep = compute_accuracy(recs, *s_.judgments, {s_.cutoff});
  for (const MetricColumn& c : rep.accuracy) {
    if (c.name == s_.metric && c.cutoff == s_.cutoff) return c.aggregate;
  }
  throw ModelError("tuning metric not produced: " + s_.metric);
}

namespace {

enum class PipelineMode { Train, Design, Eval };

struct Emitter {
  EventHook hook;
  std::mutex mu;

  void emit(std::string stage, nlohmann::json payload) {
    if (!hook) return;
    std::lock_guard<std::mutex> lk(mu);
    hook(PipelineEvent{std::move(stage), std::move(payload)});
  }
};

std::vector<UserIndex> users_with_relevance(const RelevanceJudgments& j) {
  std::vector<UserIndex> out;
  for (std::size_t u = 0; u < j.relevant.size(); ++u) {
    if (!j.relevant[u].empty()) out.push_back(static_cast<UserIndex>(u));
  }
  return out;
}

RelevanceJudgments judge(const Dataset& split,
                         const std::optional<double>& min_rating) {
  return min_rating ? RelevanceJudgments::from_test(split, *min_rating)
                    : RelevanceJudgments::from_test(split);
}

const char* action_name(AshaAction a) {
  switch (a) {
    case AshaAction::Promote:
      return "promote";
    case AshaAction::Stop:
      return "stop";
    case AshaAction::Continue:
      return "continue";
  }
  return "?";
}

// Study records for post-hoc replay; wall clock stripped so the log stays
// identical across reruns of the same (config, seed).
nlohmann::json study_log_line(const ModelOutcome& oc, bool studied) {
  nlohmann::json line;
  line["model"] = oc.name;
  if (!studied) {
    line["error"] = oc.error;
    return line;
  }
  line["best_trial"] = oc.study.best_trial_id;
  line["best_value"] = oc.study.best_value;
  line["total_epochs"] = oc.study.total_epochs;
  nlohmann::json trials = nlohmann::json::array();
  for (const Trial& t : oc.study.trials) {
    nlohmann::json tj = trial_to_json(t);
    tj.erase("wall_seconds");
    trials.push_back(std::move(tj));
  }
  line["trials"] = std::move(trials);
  nlohmann::json decisions = nlohmann::json::array();
  for (const AshaDecision& d : oc.study.decisions) {
    decisions.push_back({{"trial", d.trial_id},
                         {"rung", d.rung},
                         {"value", d.value},
                         {"n_r", d.n_r},
                         {"k", d.k},
                         {"action", action_name(d.action)}});
  }
  line["decisions"] = std::move(decisions);
  return line;
}

nlohmann::json metrics_to_json(const ModelOutcome& oc, const IdMap& users) {
  nlohmann::json j;
  j["model"] = oc.name;
  j["family"] = oc.family;
  j["skipped_users"] = oc.metrics.skipped_users;
  nlohmann::json raw_users = nlohmann::json::array();
  for (UserIndex u : oc.metrics.evaluated_users) raw_users.push_back(users.raw(u));
  j["users"] = std::move(raw_users);
  nlohmann::json acc = nlohmann::json::array();
  for (const MetricColumn& c : oc.metrics.accuracy) {
    acc.push_back({{"name", c.name},
                   {"cutoff", c.cutoff},
                   {"mean", c.aggregate},
                   {"per_user", c.per_user}});
  }
  j["accuracy"] = std::move(acc);
  nlohmann::json sys = nlohmann::json::array();
  for (const auto& [name, value] : oc.metrics.system) {
    sys.push_back({{"name", name}, {"value", value}});
  }
  j["system"] = std::move(sys);
  return j;
}

nlohmann::json build_significance(const ExperimentConfig& cfg,
                                  const std::vector<ModelOutcome>& models) {
  if (cfg.evaluation.tests.empty()) return nlohmann::json();
  std::vector<const ModelOutcome*> ok;
  for (const ModelOutcome& m : models) {
    if (m.ok) ok.push_back(&m);
  }
  if (ok.size() < 2) return nlohmann::json();

  struct Row {
    std::string metric;
    std::size_t cutoff = 0;
    const ModelOutcome* a = nullptr;
    const ModelOutcome* b = nullptr;
    std::string test;
    TestResult r;
  };
  std::vector<Row> rows;
  const std::vector<MetricColumn>& cols = ok.front()->metrics.accuracy;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (std::size_t i = 0; i < ok.size(); ++i) {
      for (std::size_t k = i + 1; k < ok.size(); ++k) {
        const std::vector<double>& pa = ok[i]->metrics.accuracy[c].per_user;
        const std::vector<double>& pb = ok[k]->metrics.accuracy[c].per_user;
        for (const std::string& t : cfg.evaluation.tests) {
          Row row;
          row.metric = cols[c].name;
          row.cutoff = cols[c].cutoff;
          row.a = ok[i];
          row.b = ok[k];
          row.test = t;
          row.r = t == "t" ? paired_t_test(pa, pb)
                  : t == "wilcoxon" ? wilcoxon_signed_rank(pa, pb)
                                    : mann_whitney_u(pa, pb);
          rows.push_back(std::move(row));
        }
      }
    }
  }

  // One correction family per test kind, spanning every pair and metric.
  std::map<std::string, std::vector<std::size_t>> by_test;
  for (std::size_t i = 0; i < rows.size(); ++i) by_test[rows[i].test].push_back(i);
  std::vector<double> adjusted(rows.size(), 0.0);
  for (const auto& [test, idxs] : by_test) {
    std::vector<double> p;
    p.reserve(idxs.size());
    for (std::size_t i : idxs) p.push_back(rows[i].r.p_value);
    std::vector<double> adj = cfg.evaluation.correction == "bonferroni"
                                  ? adjust_bonferroni(p)
                              : cfg.evaluation.correction == "bh" ? adjust_bh(p)
                                                                  : p;
    for (std::size_t i = 0; i < idxs.size(); ++i) adjusted[idxs[i]] = adj[i];
  }

  nlohmann::json out;
  out["correction"] = cfg.evaluation.correction;
  nlohmann::json comparisons = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& row = rows[i];
    comparisons.push_back({{"metric", row.metric},
                           {"cutoff", row.cutoff},
                           {"baseline", row.a->name},
                           {"candidate", row.b->name},
                           {"test", row.test},
                           {"statistic", row.r.statistic},
                           {"p", row.r.p_value},
                           {"p_adjusted", adjusted[i]},
                           {"n", row.r.n},
                           {"method", row.r.method},
                           {"degenerate", row.r.degenerate}});
  }
  out["comparisons"] = std::move(comparisons);
  return out;
}

PipelineResult run_pipeline(const ExperimentConfig& input,
                            const PipelineOptions& opts, PipelineMode mode) {
  ExperimentConfig cfg = input;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) cfg.tuning.workers = *opts.workers;
  if (opts.output_dir) cfg.reporting.output_dir = *opts.output_dir;
  cfg.validate();

  const char* pipeline_name = mode == PipelineMode::Train    ? "train"
                              : mode == PipelineMode::Design ? "design"
                                                             : "eval";
  for (const ModelBlock& mb : cfg.models) {
    if (mode == PipelineMode::Design && !mb.fixed) {
      throw ConfigError("design pipeline requires fixed hyperparameters; "
                        "model \"" + mb.name + "\" declares a search space");
    }
    if (mode == PipelineMode::Eval && mb.checkpoint.empty()) {
      throw ConfigError("eval pipeline requires a checkpoint path for model \"" +
                        mb.name + "\"");
    }
  }

  Emitter emitter{opts.hook, {}};
  EventHook trial_hook;
  if (opts.hook) {
    trial_hook = [&emitter](const PipelineEvent& ev) {
      emitter.emit(ev.stage, ev.payload);
    };
  }

  const auto t0 = std::chrono::steady_clock::now();
  EnergySampler sampler(0.25);

  PipelineResult result;
  result.run_dir = cfg.reporting.output_dir;
  std::filesystem::create_directories(std::filesystem::path(result.run_dir) /
                                      "checkpoints");

  sampler.begin_stage("ingest");
  LoadResult loaded =
      load_interactions(cfg.dataset.path, cfg.dataset.schema, cfg.dataset.parse_mode);
  Dataset working = build_dataset(loaded, cfg.dataset.dedup);
  sampler.end_stage();
  nlohmann::json dataset_info;
  {
    DatasetStats st = compute_stats(working);
    dataset_info = {{"path", cfg.dataset.path},
                    {"users", st.n_users},
                    {"items", st.n_items},
                    {"interactions", st.n_interactions},
                    {"sparsity", st.sparsity},
                    {"skipped_rows", loaded.skipped_rows}};
    emitter.emit("ingest", dataset_info);
  }

  sampler.begin_stage("filter");
  nlohmann::json filter_log = nlohmann::json::array();
  for (const FilterSpec& f : cfg.filters) {
    working = apply_filter(working, f);
    filter_log.push_back({{"kind", filter_kind_name(f)},
                          {"interactions", working.n_interactions()}});
  }
  sampler.end_stage();
  emitter.emit("filter", {{"applied", cfg.filters.size()},
                          {"interactions", working.n_interactions()}});

  SplitSpec split = cfg.split;
  split.seed = cfg.seed;
  sampler.begin_stage("split");
  SplitOutput so = apply_split(working, split);
  sampler.end_stage();
  DatasetPtr train = std::make_shared<const Dataset>(std::move(so.train));
  std::optional<Dataset> validation = std::move(so.validation);
  Dataset test = std::move(so.test);
  nlohmann::json split_info = {{"strategy", strategy_name(split.strategy)},
                               {"train", train->n_interactions()},
                               {"test", test.n_interactions()},
                               {"unsplittable_users", so.unsplittable_users}};
  if (validation) split_info["validation"] = validation->n_interactions();
  emitter.emit("split", split_info);

  const std::string tuned_on = validation ? "validation" : "test";
  RelevanceJudgments test_judg = judge(test, cfg.evaluation.min_rating);
  std::vector<UserIndex> test_users = users_with_relevance(test_judg);
  if (test_users.empty()) {
    throw DataError("test split has no users with relevant items");
  }

  RelevanceJudgments tune_judg;
  std::vector<UserIndex> tune_users;
  if (mode != PipelineMode::Eval) {
    tune_judg = validation ? judge(*validation, cfg.evaluation.min_rating)
                           : test_judg;
    tune_users = users_with_relevance(tune_judg);
    if (tune_users.empty()) {
      throw DataError("tuning split has no users with relevant items");
    }
  }

  const std::size_t n_models = cfg.models.size();
  result.models.resize(n_models);
  std::vector<char> study_ok(n_models, mode == PipelineMode::Eval ? 1 : 0);
  for (std::size_t i = 0; i < n_models; ++i) {
    result.models[i].name = cfg.models[i].name;
    result.models[i].family = cfg.models[i].family;
  }

  if (mode != PipelineMode::Eval) {
    for (std::size_t i = 0; i < n_models; ++i) {
      const ModelBlock& mb = cfg.models[i];
      ModelOutcome& oc = result.models[i];
      sampler.begin_stage("tune:" + mb.name);
      try {
        StudyConfig sc;
        sc.search = mb.fixed ? StudyConfig::Search::Grid : cfg.tuning.search;
        sc.scheduler =
            mb.fixed ? StudyConfig::Scheduler::Fifo : cfg.tuning.scheduler;
        sc.n_random = cfg.tuning.n_random;
        sc.workers = cfg.tuning.workers;
        sc.asha.eta = cfg.tuning.eta;
        sc.asha.direction = cfg.tuning.direction;
        if (mb.family == "bprmf") {
          if (mb.fixed) {
            // the declared epoch count is the whole budget
            std::size_t epochs = 1;
            for (const ParamDomain& p : mb.search.params) {
              if (p.name == "epochs") {
                epochs = p.values.front().get<std::size_t>();
              }
            }
            sc.asha.min_budget = epochs;
            sc.asha.max_budget = epochs;
          } else {
            sc.asha.min_budget = cfg.tuning.min_budget;
            sc.asha.max_budget = cfg.tuning.max_budget;
          }
        } else {
          // non-iterative families: one fit is the full budget
          sc.asha.min_budget = 1;
          sc.asha.max_budget = 1;
        }
        sc.trial_timeout_seconds = cfg.tuning.trial_timeout_seconds;
        sc.early_stop_patience = cfg.tuning.early_stop_patience;
        sc.early_stop_min_delta = cfg.tuning.early_stop_min_delta;
        sc.max_trials = cfg.tuning.max_trials;
        sc.seed = derive_seed(cfg.seed, "study", i);

        ModelTrialRunner runner({mb.name, mb.family, train, &tune_judg,
                                 tune_users, cfg.tuning.metric,
                                 cfg.tuning.cutoff, cfg.evaluation.filter_seen,
                                 trial_hook});
        oc.study = run_study(mb.search, sc, runner);
        if (!oc.study.has_best) throw ModelError("no trial completed");
        const Trial& best = oc.study.trials[oc.study.best_trial_id];
        nlohmann::json best_hp = best.config.hyperparameters;
        if (mb.family == "bprmf") {
          best_hp["epochs"] = best.history.empty() ? sc.asha.max_budget
                                                   : best.history.back().first;
        }
        oc.best_config = std::move(best_hp);
        oc.best_seed = best.seed;
        study_ok[i] = 1;
      } catch (const std::exception& e) {
        oc.error = e.what();
      }
      sampler.end_stage();
    }
  }

  const std::size_t max_cutoff = *std::max_element(
      cfg.evaluation.cutoffs.begin(), cfg.evaluation.cutoffs.end());
  const std::string dataset_hash = idmap_hash(*train->user_map, *train->item_map);
  std::vector<FilePayload> payloads;
  std::vector<std::string> preexisting;
  payloads.push_back({"config.json", config_to_json(cfg).dump(2) + "\n"});

  sampler.begin_stage("evaluate");
  for (std::size_t i = 0; i < n_models; ++i) {
    const ModelBlock& mb = cfg.models[i];
    ModelOutcome& oc = result.models[i];
    if (!study_ok[i]) continue;

    TrainedModel m;
    if (mode == PipelineMode::Eval) {
      // checkpoint problems are setup errors, not per-model failures
      m = load_checkpoint(mb.checkpoint);
      const std::string got = idmap_hash(*m.train->user_map, *m.train->item_map);
      if (got != dataset_hash) {
        throw DataError("checkpoint \"" + mb.checkpoint +
                        "\" was trained on different ID maps than the "
                        "configured dataset");
      }
      oc.best_config = m.model->hyperparameters();
    }
    try {
      if (mode != PipelineMode::Eval) {
        m = fit_model(ModelConfig{mb.family, oc.best_config}, train, oc.best_seed);
      }
      oc.recommendations = recommend(m, test_users, max_cutoff,
                                     cfg.evaluation.filter_seen,
                                     cfg.tuning.workers);
      oc.metrics =
          compute_accuracy(oc.recommendations, test_judg, cfg.evaluation.cutoffs);
      if (cfg.evaluation.exposure) {
        oc.metrics.system = compute_exposure(oc.recommendations, *train,
                                             cfg.evaluation.head_fraction);
      }
      if (mode != PipelineMode::Eval && cfg.reporting.write_checkpoints) {
        const std::string rel = "checkpoints/" + mb.name + ".ckpt";
        save_checkpoint(
            m, (std::filesystem::path(result.run_dir) / rel).string());
        preexisting.push_back(rel);
      }
      if (cfg.reporting.write_recommendations) {
        payloads.push_back({"recs/" + mb.name + ".tsv",
                            render_recommendations_tsv(oc.recommendations,
                                                       *m.train->user_map,
                                                       *m.train->item_map)});
      }
      oc.ok = true;
      nlohmann::json summary;
      for (const MetricColumn& c : oc.metrics.accuracy) {
        summary[c.name + "@" + std::to_string(c.cutoff)] = c.aggregate;
      }
      emitter.emit("evaluate", {{"model", mb.name}, {"metrics", summary}});
    } catch (const std::exception& e) {
      oc.ok = false;
      oc.error = e.what();
    }
  }
  sampler.end_stage();

  for (std::size_t i = 0; i < n_models; ++i) {
    const ModelOutcome& oc = result.models[i];
    if (!oc.ok) continue;
    nlohmann::json mj = metrics_to_json(oc, *train->user_map);
    if (mode == PipelineMode::Eval) {
      mj["checkpoint"] = cfg.models[i].checkpoint;
      mj["hyperparameters"] = oc.best_config;
    } else {
      mj["tuned_on"] = tuned_on;
      mj["best"] = {{"trial", oc.study.best_trial_id},
                    {"value", oc.study.best_value},
                    {"hyperparameters", oc.best_config},
                    {"seed", oc.best_seed}};
    }
    payloads.push_back({"metrics/" + oc.name + ".json", mj.dump(2) + "\n"});
  }

  result.significance = build_significance(cfg, result.models);
  if (!result.significance.is_null()) {
    payloads.push_back(
        {"stats/significance.json", result.significance.dump(2) + "\n"});
    emitter.emit("evaluate",
                 {{"significance_comparisons",
                   result.significance["comparisons"].size()}});
  }

  if (mode != PipelineMode::Eval) {
    std::string log;
    for (std::size_t i = 0; i < n_models; ++i) {
      log += study_log_line(result.models[i], study_ok[i] != 0).dump();
      log += "\n";
    }
    payloads.push_back({"study.log", std::move(log)});
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  nlohmann::json run_info;
  run_info["engine_version"] = kEngineVersion;
  run_info["pipeline"] = pipeline_name;
  run_info["seed"] = cfg.seed;
  run_info["dataset"] = dataset_info;
  run_info["filters"] = filter_log;
  run_info["split"] = split_info;
  if (mode != PipelineMode::Eval) run_info["tuned_on"] = tuned_on;
  nlohmann::json model_rows = nlohmann::json::array();
  for (std::size_t i = 0; i < n_models; ++i) {
    const ModelOutcome& oc = result.models[i];
    nlohmann::json row = {{"name", oc.name},
                          {"family", oc.family},
                          {"status", oc.ok ? "ok" : "failed"}};
    if (!oc.ok) row["error"] = oc.error;
    if (mode != PipelineMode::Eval && study_ok[i]) {
      row["best_trial"] = oc.study.best_trial_id;
      row["best_value"] = oc.study.best_value;
    }
    model_rows.push_back(std::move(row));
  }
  run_info["models"] = std::move(model_rows);
  run_info["wall_seconds"] = result.wall_seconds;

  payloads.push_back(
      {"energy.json",
       energy_to_json(sampler.report(cfg.reporting.power,
                                     cfg.reporting.carbon_intensity))
               .dump(2) +
           "\n"});

  result.manifest =
      write_artifacts(run_info, payloads, preexisting, result.run_dir);
  emitter.emit("write", {{"dir", result.run_dir},
                         {"artifacts", payloads.size() + preexisting.size()}});

  result.all_failed = true;
  for (const ModelOutcome& oc : result.models) {
    if (oc.ok) result.all_failed = false;
  }
  return result;
}

}  // namespace

PipelineResult run_train_pipeline(const ExperimentConfig& cfg,
                                  const PipelineOptions& opts) {
  return run_pipeline(cfg, opts, PipelineMode::Train);
}

PipelineResult run_design_pipeline(const ExperimentConfig& cfg,
                                   const PipelineOptions& opts) {
  return run_pipeline(cfg, opts, PipelineMode::Design);
}

PipelineResult run_eval_pipeline(const ExperimentConfig& cfg,
                                 const PipelineOptions& opts) {
  return run_pipeline(cfg, opts, PipelineMode::Eval);
}

}  // namespace warpbench
