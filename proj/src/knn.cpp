#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "warpbench/model_state.hpp"
#include "warpbench/models.hpp"

namespace warpbench {

void KnnModel::score_user(UserIndex u, std::vector<double>& out) const {
  const Csr& m = train_->matrix;
  out.assign(m.n_cols, 0.0);
  if (item_based()) {
    // score(u,i) = sum over profile items j of sim(i,j) * rating(u,j),
    // scattered through j's pruned neighbor list.
    auto cols = m.row_indices(u);
    auto vals = m.row_values(u);
    for (std::size_t p = 0; p < cols.size(); ++p) {
      ItemIndex j = cols[p];
      double r = vals[p];
      auto ids = neighbor_ids(j);
      auto s = neighbor_sims(j);
      for (std::size_t q = 0; q < ids.size(); ++q) out[ids[q]] += s[q] * r;
    }
  } else {
    // score(u,i) = sum over top-N users v of sim(u,v) * rating(v,i).
    auto ids = neighbor_ids(u);
    auto s = neighbor_sims(u);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      UserIndex v = ids[q];
      double w = s[q];
      auto cols = m.row_indices(v);
      auto vals = m.row_values(v);
      for (std::size_t p = 0; p < cols.size(); ++p) {
        out[cols[p]] += w * vals[p];
      }
    }
  }
}

void KnnModel::score_items(const std::vector<ItemIndex>& items,
                           std::vector<double>& out) const {
  if (!item_based()) {
    throw ModelError("userknn cannot score from an item sequence");
  }
  out.assign(train_->matrix.n_cols, 0.0);
  for (ItemIndex j : items) {
    auto ids = neighbor_ids(j);
    auto s = neighbor_sims(j);
    for (std::size_t q = 0; q < ids.size(); ++q) out[ids[q]] += s[q];
  }
}

namespace {

struct KnnParams {
  std::size_t neighbors = 0;
  bool cosine = true;
  double shrinkage = 0.0;
};

KnnParams read_params(const ModelConfig& cfg) {
  KnnParams p;
  p.neighbors = cfg.hyperparameters["neighbors"].get<std::size_t>();
  if (cfg.hyperparameters.contains("similarity")) {
    p.cosine = cfg.hyperparameters["similarity"].get<std::string>() == "cosine";
  }
  if (cfg.hyperparameters.contains("shrinkage")) {
    p.shrinkage = cfg.hyperparameters["shrinkage"].get<double>();
  }
  return p;
}

// Entity-major view of the interaction matrix: rows for userknn, columns
// for itemknn. lists[e] holds (co-axis index, rating).
struct EntityView {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> lists;
};

EntityView make_view(const Csr& m, bool item_based) {
  EntityView v;
  if (item_based) {
    v.lists.resize(m.n_cols);
    for (std::size_t u = 0; u < m.n_rows; ++u) {
      for (std::size_t p = m.indptr[u]; p < m.indptr[u + 1]; ++p) {
        v.lists[m.indices[p]].emplace_back(static_cast<std::uint32_t>(u),
                                           m.values[p]);
      }
    }
  } else {
    v.lists.resize(m.n_rows);
    for (std::size_t u = 0; u < m.n_rows; ++u) {
      for (std::size_t p = m.indptr[u]; p < m.indptr[u + 1]; ++p) {
        v.lists[u].emplace_back(m.indices[p], m.values[p]);
      }
    }
  }
  return v;
}

TrainedModel fit_knn(DatasetPtr train, const ModelConfig& cfg,
                     bool item_based) {
  cfg.validate();
  KnnParams params = read_params(cfg);
  const Csr& m = train->matrix;

  EntityView view = make_view(m, item_based);
  // Co-axis lookup: for each user (itemknn) / item (userknn), the entities
  // it touches, used to enumerate co-occurring entity pairs.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> co =
      make_view(m, !item_based).lists;

  std::size_t n = view.lists.size();
  std::vector<double> norm_sq(n, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    for (auto& [other, r] : view.lists[e]) norm_sq[e] += r * r;
  }

  std::vector<std::size_t> indptr(n + 1, 0);
  std::vector<std::uint32_t> indices;
  std::vector<double> sims;

  std::vector<double> acc(n, 0.0);  // dot product or co-count scratch
  std::vector<char> seen(n, 0);
  std::vector<std::uint32_t> touched;
  std::vector<std::pair<double, std::uint32_t>> candidates;

  for (std::size_t e = 0; e < n; ++e) {
    touched.clear();
    for (auto& [other, r] : view.lists[e]) {
      for (auto& [f, r2] : co[other]) {
        if (f == e) continue;
        if (!seen[f]) {
          seen[f] = 1;
          touched.push_back(f);
        }
        acc[f] += params.cosine ? r * r2 : 1.0;
      }
    }

    candidates.clear();
    double deg_e = static_cast<double>(view.lists[e].size());
    for (std::uint32_t f : touched) {
      double s;
      if (params.cosine) {
        s = acc[f] / (std::sqrt(norm_sq[e]) * std::sqrt(norm_sq[f]) +
                      params.shrinkage);
      } else {
        double deg_f = static_cast<double>(view.lists[f].size());
        s = acc[f] / (deg_e + deg_f - acc[f] + params.shrinkage);
      }
      if (s != 0.0) candidates.emplace_back(s, f);
      acc[f] = 0.0;
      seen[f] = 0;
    }

    std::size_t take = std::min(params.neighbors, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + take,
                      candidates.end(), [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    candidates.resize(take);

    indptr[e + 1] = indptr[e] + take;
    for (auto& [s, f] : candidates) {
      indices.push_back(f);
      sims.push_back(s);
    }
  }

  std::string family = item_based ? "itemknn" : "userknn";
  auto model = std::make_shared<KnnModel>(family, cfg.hyperparameters, train,
                                          std::move(indptr),
                                          std::move(indices), std::move(sims));
  return {std::move(model), std::move(train)};
}

}  // namespace

TrainedModel fit_itemknn(DatasetPtr train, const ModelConfig& cfg) {
  return fit_knn(std::move(train), cfg, true);
}

TrainedModel fit_userknn(DatasetPtr train, const ModelConfig& cfg) {
  return fit_knn(std::move(train), cfg, false);
}

}  // namespace warpbench
