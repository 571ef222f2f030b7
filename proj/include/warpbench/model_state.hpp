#pragma once

// Concrete fitted-model classes. Split from models.hpp so checkpointing,
// serving and tests can reach the fitted arrays; pipeline code should stay
// on the Model interface.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "warpbench/models.hpp"
#include "warpbench/rng.hpp"

namespace warpbench {

class MostPopModel final : public Model {
 public:
  explicit MostPopModel(std::vector<double> pop)
      : popularity_(std::move(pop)), hp_(nlohmann::json::object()) {}

  const std::string& family() const override {
    static const std::string f = "mostpop";
    return f;
  }
  const nlohmann::json& hyperparameters() const override { return hp_; }

  void score_user(UserIndex, std::vector<double>& out) const override {
    out = popularity_;
  }
  bool supports_item_scoring() const override { return true; }
  void score_items(const std::vector<ItemIndex>&,
                   std::vector<double>& out) const override {
    out = popularity_;  // sequence content only matters for exclusion
  }

  const std::vector<double>& popularity() const { return popularity_; }

 private:
  std::vector<double> popularity_;
  nlohmann::json hp_;
};

class RandomModel final : public Model {
 public:
  RandomModel(std::uint64_t seed, std::size_t n_items)
      : seed_(seed), n_items_(n_items), hp_({{"seed", seed}}) {}

  const std::string& family() const override {
    static const std::string f = "random";
    return f;
  }
  const nlohmann::json& hyperparameters() const override { return hp_; }

  void score_user(UserIndex u, std::vector<double>& out) const override {
    out.resize(n_items_);
    Rng rng(derive_seed(seed_, "random-user", u));
    for (double& s : out) s = rng.uniform01();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::size_t n_items_;
  nlohmann::json hp_;
};

// Pruned top-N similarity lists in CSR layout over entities (items for
// itemknn, users for userknn). Each list is sorted by similarity
// descending, ties by ascending index, self excluded.
class KnnModel final : public Model {
 public:
  KnnModel(std::string family, nlohmann::json hp, DatasetPtr train,
           std::vector<std::size_t> indptr, std::vector<std::uint32_t> indices,
           std::vector<double> sims)
      : family_(std::move(family)),
        hp_(std::move(hp)),
        train_(std::move(train)),
        indptr_(std::move(indptr)),
        indices_(std::move(indices)),
        sims_(std::move(sims)) {}

  const std::string& family() const override { return family_; }
  const nlohmann::json& hyperparameters() const override { return hp_; }
  bool item_based() const { return family_ == "itemknn"; }

  void score_user(UserIndex u, std::vector<double>& out) const override;
  bool supports_item_scoring() const override { return item_based(); }
  void score_items(const std::vector<ItemIndex>& items,
                   std::vector<double>& out) const override;

  std::size_t n_entities() const { return indptr_.size() - 1; }
  std::span<const std::uint32_t> neighbor_ids(std::size_t e) const {
    return {indices_.data() + indptr_[e], indptr_[e + 1] - indptr_[e]};
  }
  std::span<const double> neighbor_sims(std::size_t e) const {
    return {sims_.data() + indptr_[e], indptr_[e + 1] - indptr_[e]};
  }
  const std::vector<std::size_t>& indptr() const { return indptr_; }
  const std::vector<std::uint32_t>& indices() const { return indices_; }
  const std::vector<double>& sims() const { return sims_; }

 private:
  std::string family_;
  nlohmann::json hp_;
  DatasetPtr train_;
  std::vector<std::size_t> indptr_;
  std::vector<std::uint32_t> indices_;
  std::vector<double> sims_;
};

// bt_ stores B transposed: column j is B's row j, so scoring walks
// contiguous memory and bt_.data() is exactly B in row-major order.
class EaseModel final : public Model {
 public:
  EaseModel(nlohmann::json hp, DatasetPtr train, Eigen::MatrixXd bt)
      : hp_(std::move(hp)), train_(std::move(train)), bt_(std::move(bt)) {}

  const std::string& family() const override {
    static const std::string f = "ease";
    return f;
  }
  const nlohmann::json& hyperparameters() const override { return hp_; }

  void score_user(UserIndex u, std::vector<double>& out) const override;
  bool supports_item_scoring() const override { return true; }
  void score_items(const std::vector<ItemIndex>& items,
                   std::vector<double>& out) const override;

  double b(std::size_t i, std::size_t j) const { return bt_(j, i); }
  const Eigen::MatrixXd& bt() const { return bt_; }

 private:
  nlohmann::json hp_;
  DatasetPtr train_;
  Eigen::MatrixXd bt_;
};

class BprMfModel final : public Model {
 public:
  BprMfModel(nlohmann::json hp, std::size_t factors,
             std::vector<double> user_factors,
             std::vector<double> item_factors, std::vector<double> item_bias)
      : hp_(std::move(hp)),
        factors_(factors),
        p_(std::move(user_factors)),
        q_(std::move(item_factors)),
        bias_(std::move(item_bias)) {}

  const std::string& family() const override {
    static const std::string f = "bprmf";
    return f;
  }
  const nlohmann::json& hyperparameters() const override { return hp_; }

  void score_user(UserIndex u, std::vector<double>& out) const override {
    std::size_t n_items = bias_.size();
    out.resize(n_items);
    const double* pu = p_.data() + static_cast<std::size_t>(u) * factors_;
    for (std::size_t i = 0; i < n_items; ++i) {
      const double* qi = q_.data() + i * factors_;
      double s = bias_[i];
      for (std::size_t f = 0; f < factors_; ++f) s += pu[f] * qi[f];
      out[i] = s;
    }
  }

  std::size_t factors() const { return factors_; }
  const std::vector<double>& user_factors() const { return p_; }
  const std::vector<double>& item_factors() const { return q_; }
  const std::vector<double>& item_bias() const { return bias_; }

 private:
  nlohmann::json hp_;
  std::size_t factors_;
  std::vector<double> p_;     // n_users x factors, row-major
  std::vector<double> q_;     // n_items x factors, row-major
  std::vector<double> bias_;  // n_items
};

}  // namespace warpbench
