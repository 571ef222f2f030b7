#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpbench/dataset.hpp"
#include "warpbench/error.hpp"

namespace warpbench {

using DatasetPtr = std::shared_ptr<const Dataset>;

// Declarative model description: family tag plus a family-specific
// hyperparameter object. validate() enforces presence and ranges.
struct ModelConfig {
  std::string family;
  nlohmann::json hyperparameters = nlohmann::json::object();

  void validate() const;
};

// Fitted scorer. Implementations are immutable after fit and safe to share
// across threads. score_user fills a dense catalog-sized score vector.
class Model {
 public:
  virtual ~Model() = default;
  virtual const std::string& family() const = 0;
  virtual const nlohmann::json& hyperparameters() const = 0;
  virtual void score_user(UserIndex u, std::vector<double>& out) const = 0;

  // Profile-free scoring over an item set (binary weights). Supported by
  // mostpop, itemknn and ease; others throw ModelError.
  virtual bool supports_item_scoring() const { return false; }
  virtual void score_items(const std::vector<ItemIndex>& items,
                           std::vector<double>& out) const;
};

struct TrainedModel {
  std::shared_ptr<const Model> model;
  DatasetPtr train;  // seen-item rows + ID maps travel with the model

  std::size_t n_users() const { return train->n_users(); }
  std::size_t n_items() const { return train->n_items(); }
};

struct RecommendationList {
  std::vector<UserIndex> users;
  // items[k] is the ranked list for users[k]: (internal item, score),
  // scores non-increasing, ties broken by ascending item index.
  std::vector<std::vector<std::pair<ItemIndex, double>>> items;
  std::size_t cutoff = 0;
  bool filter_seen = true;
};

TrainedModel fit_mostpop(DatasetPtr train);
TrainedModel fit_random(DatasetPtr train, std::uint64_t seed);
TrainedModel fit_itemknn(DatasetPtr train, const ModelConfig& cfg);
TrainedModel fit_userknn(DatasetPtr train, const ModelConfig& cfg);
TrainedModel fit_ease(DatasetPtr train, const ModelConfig& cfg);
TrainedModel fit_bprmf(DatasetPtr train, const ModelConfig& cfg,
                       std::uint64_t seed);

// Dispatch on cfg.family. `seed` feeds the stochastic families.
TrainedModel fit_model(const ModelConfig& cfg, DatasetPtr train,
                       std::uint64_t seed);

// Exact top-K by (score desc, item index asc). Entries with mask[i] != 0
// are ineligible. Exposed for the brute-force sort oracle.
std::vector<std::pair<ItemIndex, double>> top_k_by_score(
    const std::vector<double>& scores, std::size_t k,
    const std::vector<char>* mask = nullptr);

// Full top-K recommendation for a batch of users. workers > 1 splits the
// user batch across threads; per-user output is order-independent.
RecommendationList recommend(const TrainedModel& m,
                             const std::vector<UserIndex>& users,
                             std::size_t k, bool filter_seen,
                             std::size_t workers = 1);

struct ItemQueryResult {
  std::vector<std::pair<ItemIndex, double>> items;
  std::vector<std::string> warnings;  // unknown raw IDs, skipped
};

// Scores the catalog from a raw-ID item sequence (binary weights), excludes
// the inputs, returns top-K. Throws if the family cannot score without a
// user profile or if every input ID is unknown.
ItemQueryResult recommend_from_items(const TrainedModel& m,
                                     const std::vector<std::string>& raw_items,
                                     std::size_t k);

// Hash binding a checkpoint to the ID maps it was trained with.
std::string idmap_hash(const IdMap& users, const IdMap& items);

// Checkpoint container: magic + JSON header (family, hyperparameters,
// engine version, ID maps, array manifest) + raw little-endian arrays.
// The training matrix is embedded so a loaded model can serve standalone.
void save_checkpoint(const TrainedModel& m, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

namespace bpr_detail {
// Single-triple BPR loss with L2 on the touched parameters:
//   -ln sigma(<p,qi>+bi - <p,qj>-bj) + reg/2 * (|p|^2+|qi|^2+|qj|^2+bi^2+bj^2)
// Gradients exposed for the finite-difference check.
double triple_loss(const std::vector<double>& p, const std::vector<double>& qi,
                   const std::vector<double>& qj, double bi, double bj,
                   double reg);
void triple_grad(const std::vector<double>& p, const std::vector<double>& qi,
                 const std::vector<double>& qj, double bi, double bj,
                 double reg, std::vector<double>& gp, std::vector<double>& gqi,
                 std::vector<double>& gqj, double& gbi, double& gbj);
}  // namespace bpr_detail

}  // namespace warpbench
