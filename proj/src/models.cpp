#include "warpbench/models.hpp"

#include <algorithm>
#include <thread>

#include "warpbench/model_state.hpp"
#include "warpbench/rng.hpp"

namespace warpbench {

namespace {

const char* kFamilies[] = {"mostpop", "random", "itemknn",
                           "userknn", "ease",   "bprmf"};

void require_keys(const nlohmann::json& hp,
                  std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional,
                  const std::string& family) {
  for (const char* key : required) {
    if (!hp.contains(key)) {
      throw ConfigError(family + ": missing hyperparameter '" + key + "'");
    }
  }
  for (auto& [key, value] : hp.items()) {
    (void)value;
    bool known = false;
    for (const char* k : required) known = known || key == k;
    for (const char* k : optional) known = known || key == k;
    if (!known) {
      throw ConfigError(family + ": unknown hyperparameter '" + key + "'");
    }
  }
}

double num(const nlohmann::json& hp, const char* key, double fallback) {
  if (!hp.contains(key)) return fallback;
  if (!hp[key].is_number()) {
    throw ConfigError(std::string("hyperparameter '") + key +
                      "' must be numeric");
  }
  return hp[key].get<double>();
}

}  // namespace

void ModelConfig::validate() const {
  if (std::find(std::begin(kFamilies), std::end(kFamilies), family) ==
      std::end(kFamilies)) {
    throw ConfigError("unknown model family '" + family + "'");
  }
  // null counts as empty: brace-initialized configs carry no hyperparameters
  if (!hyperparameters.is_object() && !hyperparameters.is_null()) {
    throw ConfigError(family + ": hyperparameters must be an object");
  }
  static const nlohmann::json kEmpty = nlohmann::json::object();
  const nlohmann::json& hp =
      hyperparameters.is_null() ? kEmpty : hyperparameters;
  if (family == "mostpop" || family == "random") {
    require_keys(hp, {}, {"seed"}, family);
  } else if (family == "itemknn" || family == "userknn") {
    require_keys(hp, {"neighbors"}, {"similarity", "shrinkage"}, family);
    if (num(hp, "neighbors", 0) < 1) {
      throw ConfigError(family + ": neighbors must be >= 1");
    }
    if (hp.contains("similarity")) {
      std::string s = hp["similarity"].get<std::string>();
      if (s != "cosine" && s != "jaccard") {
        throw ConfigError(family + ": similarity must be cosine or jaccard");
      }
    }
    if (num(hp, "shrinkage", 0.0) < 0.0) {
      throw ConfigError(family + ": shrinkage must be >= 0");
    }
  } else if (family == "ease") {
    require_keys(hp, {"l2"}, {"dense_cap"}, family);
    if (!(num(hp, "l2", 0.0) > 0.0)) {
      throw ConfigError("ease: l2 must be > 0");
    }
    if (hp.contains("dense_cap") && num(hp, "dense_cap", 0) < 1) {
      throw ConfigError("ease: dense_cap must be >= 1");
    }
  } else if (family == "bprmf") {
    require_keys(hp, {"factors", "learning_rate", "regularization", "epochs"},
                 {"seed"}, family);
    if (num(hp, "factors", 0) < 1) {
      throw ConfigError("bprmf: factors must be >= 1");
    }
    if (!(num(hp, "learning_rate", 0.0) > 0.0)) {
      throw ConfigError("bprmf: learning_rate must be > 0");
    }
    if (num(hp, "regularization", -1.0) < 0.0) {
      throw ConfigError("bprmf: regularization must be >= 0");
    }
    if (num(hp, "epochs", 0) < 1) {
      throw ConfigError("bprmf: epochs must be >= 1");
    }
  }
}

void Model::score_items(const std::vector<ItemIndex>&,
                        std::vector<double>&) const {
  throw ModelError(family() + " cannot score from an item sequence");
}

TrainedModel fit_mostpop(DatasetPtr train) {
  std::vector<std::size_t> deg = item_degrees(train->matrix);
  std::vector<double> pop(deg.begin(), deg.end());
  return {std::make_shared<MostPopModel>(std::move(pop)), std::move(train)};
}

TrainedModel fit_random(DatasetPtr train, std::uint64_t seed) {
  std::size_t n = train->n_items();
  return {std::make_shared<RandomModel>(seed, n), std::move(train)};
}

TrainedModel fit_model(const ModelConfig& cfg, DatasetPtr train,
                       std::uint64_t seed) {
  cfg.validate();
  if (cfg.hyperparameters.contains("seed")) {
    seed = cfg.hyperparameters["seed"].get<std::uint64_t>();
  }
  if (cfg.family == "mostpop") return fit_mostpop(std::move(train));
  if (cfg.family == "random") return fit_random(std::move(train), seed);
  if (cfg.family == "itemknn") return fit_itemknn(std::move(train), cfg);
  if (cfg.family == "userknn") return fit_userknn(std::move(train), cfg);
  if (cfg.family == "ease") return fit_ease(std::move(train), cfg);
  return fit_bprmf(std::move(train), cfg, seed);
}

std::vector<std::pair<ItemIndex, double>> top_k_by_score(
    const std::vector<double>& scores, std::size_t k,
    const std::vector<char>* mask) {
  std::vector<ItemIndex> eligible;
  eligible.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask || !(*mask)[i]) eligible.push_back(static_cast<ItemIndex>(i));
  }
  auto better = [&](ItemIndex a, ItemIndex b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::size_t take = std::min(k, eligible.size());
  std::partial_sort(eligible.begin(), eligible.begin() + take, eligible.end(),
                    better);
  eligible.resize(take);

  std::vector<std::pair<ItemIndex, double>> out;
  out.reserve(take);
  for (ItemIndex i : eligible) out.emplace_back(i, scores[i]);
  return out;
}

RecommendationList recommend(const TrainedModel& m,
                             const std::vector<UserIndex>& users,
                             std::size_t k, bool filter_seen,
                             std::size_t workers) {
  if (k < 1) throw ModelError("recommend: K must be >= 1");
  for (UserIndex u : users) {
    if (u >= m.n_users()) {
      throw ModelError("recommend: user index " + std::to_string(u) +
                       " out of range");
    }
  }

  RecommendationList out;
  out.users = users;
  out.items.resize(users.size());
  out.cutoff = k;
  out.filter_seen = filter_seen;

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores;
    std::vector<char> mask;
    for (std::size_t idx = begin; idx < end; ++idx) {
      UserIndex u = users[idx];
      m.model->score_user(u, scores);
      const std::vector<char>* mask_ptr = nullptr;
      if (filter_seen) {
        mask.assign(m.n_items(), 0);
        for (ItemIndex i : m.train->matrix.row_indices(u)) mask[i] = 1;
        mask_ptr = &mask;
      }
      out.items[idx] = top_k_by_score(scores, k, mask_ptr);
    }
  };

  if (workers <= 1 || users.size() < 2) {
    work(0, users.size());
    return out;
  }
  std::size_t n_threads = std::min(workers, users.size());
  std::vector<std::thread> pool;
  std::size_t chunk = (users.size() + n_threads - 1) / n_threads;
  for (std::size_t t = 0; t < n_threads; ++t) {
    std::size_t begin = t * chunk;
    std::size_t end = std::min(users.size(), begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

ItemQueryResult recommend_from_items(const TrainedModel& m,
                                     const std::vector<std::string>& raw_items,
                                     std::size_t k) {
  if (k < 1) throw ModelError("recommend_from_items: K must be >= 1");
  if (!m.model->supports_item_scoring()) {
    throw ModelError(m.model->family() +
                     " cannot score from an item sequence");
  }

  ItemQueryResult result;
  std::vector<ItemIndex> seq;
  for (const std::string& raw : raw_items) {
    if (auto idx = m.train->item_map->lookup(raw)) {
      seq.push_back(*idx);
    } else {
      result.warnings.push_back("unknown item id: " + raw);
    }
  }
  if (seq.empty()) {
    throw ModelError("recommend_from_items: no known item IDs in sequence");
  }

  std::vector<double> scores;
  m.model->score_items(seq, scores);
  std::vector<char> mask(m.n_items(), 0);
  for (ItemIndex i : seq) mask[i] = 1;
  result.items = top_k_by_score(scores, k, &mask);
  return result;
}

}  // namespace warpbench
