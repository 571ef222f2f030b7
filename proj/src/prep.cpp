#include "warpbench/prep.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "warpbench/rng.hpp"

namespace warpbench {

namespace {

// Rebuilds a dataset from a sorted list of entry positions into d.matrix.
// Maps are shared with the parent, so indices remain comparable.
Dataset subset_by_positions(const Dataset& d,
                            const std::vector<std::size_t>& keep) {
  const Csr& src = d.matrix;
  Dataset out;
  out.user_map = d.user_map;
  out.item_map = d.item_map;
  Csr& m = out.matrix;
  m.n_rows = src.n_rows;
  m.n_cols = src.n_cols;
  m.indptr.assign(src.n_rows + 1, 0);
  m.indices.reserve(keep.size());
  m.values.reserve(keep.size());
  if (src.has_timestamps()) m.timestamps.reserve(keep.size());

  std::size_t row = 0;
  for (std::size_t pos : keep) {
    while (row + 1 < src.indptr.size() && src.indptr[row + 1] <= pos) ++row;
    m.indptr[row + 1]++;
    m.indices.push_back(src.indices[pos]);
    m.values.push_back(src.values[pos]);
    if (src.has_timestamps()) m.timestamps.push_back(src.timestamps[pos]);
  }
  for (std::size_t r = 0; r < m.n_rows; ++r) m.indptr[r + 1] += m.indptr[r];
  return out;
}

// Rounded slice size for one user; 0 or >= n means the slice cannot be
// populated without emptying another.
std::size_t slice_size(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) *
                                               fraction));
}

// Positions of a user's entries ordered by (timestamp asc, item index asc).
std::vector<std::size_t> temporal_order(const Csr& m, std::size_t u) {
  std::vector<std::size_t> pos(m.row_nnz(u));
  std::iota(pos.begin(), pos.end(), m.indptr[u]);
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    if (m.timestamps[a] != m.timestamps[b])
      return m.timestamps[a] < m.timestamps[b];
    return m.indices[a] < m.indices[b];
  });
  return pos;
}

void require_timestamps(const Dataset& d, const char* what) {
  if (!d.matrix.has_timestamps()) {
    throw DataError(std::string(what) + " requires timestamps");
  }
}

}  // namespace

Dataset filter_by_rating(const Dataset& d, const FilterSpec& spec) {
  if (spec.kind != FilterSpec::Kind::RatingThreshold) {
    throw DataError("filter_by_rating: wrong filter kind");
  }
  const Csr& m = d.matrix;
  std::vector<std::size_t> keep;
  keep.reserve(m.nnz());

  if (spec.mode == RatingThresholdMode::Global) {
    for (std::size_t p = 0; p < m.nnz(); ++p) {
      if (m.values[p] >= spec.theta) keep.push_back(p);
    }
  } else if (spec.mode == RatingThresholdMode::UserMean) {
    for (std::size_t u = 0; u < m.n_rows; ++u) {
      auto vals = m.row_values(u);
      if (vals.empty()) continue;
      double mean =
          std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
      for (std::size_t p = m.indptr[u]; p < m.indptr[u + 1]; ++p) {
        if (m.values[p] >= mean) keep.push_back(p);
      }
    }
  } else {
    std::vector<double> sum(m.n_cols, 0.0);
    std::vector<std::size_t> cnt(m.n_cols, 0);
    for (std::size_t p = 0; p < m.nnz(); ++p) {
      sum[m.indices[p]] += m.values[p];
      cnt[m.indices[p]]++;
    }
    for (std::size_t p = 0; p < m.nnz(); ++p) {
      double mean = sum[m.indices[p]] / static_cast<double>(cnt[m.indices[p]]);
      if (m.values[p] >= mean) keep.push_back(p);
    }
  }
  return subset_by_positions(d, keep);
}

Dataset k_core(const Dataset& d, std::size_t k) {
  if (k < 1) throw DataError("k_core: k must be >= 1");
  const Csr& m = d.matrix;

  std::vector<std::size_t> user_deg(m.n_rows), item_deg(m.n_cols, 0);
  std::vector<std::vector<UserIndex>> col_users(m.n_cols);
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    user_deg[u] = m.row_nnz(u);
    for (ItemIndex i : m.row_indices(u)) {
      item_deg[i]++;
      col_users[i].push_back(static_cast<UserIndex>(u));
    }
  }

  std::vector<char> user_alive(m.n_rows, 1), item_alive(m.n_cols, 1);
  std::deque<std::pair<bool, std::size_t>> dead;  // (is_user, index)
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    if (user_deg[u] < k) {
      user_alive[u] = 0;
      dead.emplace_back(true, u);
    }
  }
  for (std::size_t i = 0; i < m.n_cols; ++i) {
    if (item_deg[i] < k) {
      item_alive[i] = 0;
      dead.emplace_back(false, i);
    }
  }

  while (!dead.empty()) {
    auto [is_user, idx] = dead.front();
    dead.pop_front();
    if (is_user) {
      for (ItemIndex i : m.row_indices(idx)) {
        if (!item_alive[i]) continue;
        if (--item_deg[i] < k) {
          item_alive[i] = 0;
          dead.emplace_back(false, i);
        }
      }
    } else {
      for (UserIndex u : col_users[idx]) {
        if (!user_alive[u]) continue;
        if (--user_deg[u] < k) {
          user_alive[u] = 0;
          dead.emplace_back(true, u);
        }
      }
    }
  }

  std::vector<std::size_t> keep;
  keep.reserve(m.nnz());
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    if (!user_alive[u]) continue;
    for (std::size_t p = m.indptr[u]; p < m.indptr[u + 1]; ++p) {
      if (item_alive[m.indices[p]]) keep.push_back(p);
    }
  }
  return subset_by_positions(d, keep);
}

Dataset cold_filter(const Dataset& d, std::size_t min_user,
                    std::size_t min_item) {
  const Csr& m = d.matrix;
  std::vector<std::size_t> item_deg = item_degrees(m);
  std::vector<std::size_t> keep;
  keep.reserve(m.nnz());
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    if (m.row_nnz(u) < min_user) continue;
    for (std::size_t p = m.indptr[u]; p < m.indptr[u + 1]; ++p) {
      if (item_deg[m.indices[p]] >= min_item) keep.push_back(p);
    }
  }
  return subset_by_positions(d, keep);
}

Dataset apply_filter(const Dataset& d, const FilterSpec& spec) {
  switch (spec.kind) {
    case FilterSpec::Kind::RatingThreshold:
      return filter_by_rating(d, spec);
    case FilterSpec::Kind::KCore:
      return k_core(d, spec.k);
    case FilterSpec::Kind::ColdEntity:
      return cold_filter(d, spec.min_user, spec.min_item);
  }
  throw DataError("apply_filter: unknown filter kind");
}

void SplitSpec::validate() const {
  if (strategy == SplitStrategy::Holdout) {
    if (ratio.size() != 2 && ratio.size() != 3) {
      throw DataError("holdout: ratio must have 2 or 3 fractions");
    }
    double sum = 0.0;
    for (double r : ratio) {
      if (!(r > 0.0 && r < 1.0)) {
        throw DataError("holdout: each ratio fraction must lie in (0,1)");
      }
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DataError("holdout: ratio fractions must sum to 1");
    }
  }
  if (strategy == SplitStrategy::LeaveKOut && k < 1) {
    throw DataError("leave-k-out: k must be >= 1");
  }
  if (strategy == SplitStrategy::KFold && folds < 2) {
    throw DataError("k-fold: folds must be >= 2");
  }
  if (strategy == SplitStrategy::FixedTimestamp && with_validation) {
    throw DataError("fixed-timestamp: validation carving is not defined");
  }
}

SplitOutput split_holdout(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  const Csr& m = d.matrix;
  const bool three_way = spec.ratio.size() == 3;
  const double test_frac = spec.ratio.back();
  const double val_frac =
      three_way ? spec.ratio[1] / (spec.ratio[0] + spec.ratio[1]) : 0.0;
  if (spec.mode == SplitMode::Temporal) require_timestamps(d, "temporal holdout");

  SplitOutput out;
  out.provenance = spec;
  std::vector<std::size_t> train_pos, val_pos, test_pos;

  for (std::size_t u = 0; u < m.n_rows; ++u) {
    std::size_t n = m.row_nnz(u);
    if (n == 0) continue;

    std::vector<std::size_t> order;
    if (spec.mode == SplitMode::Random) {
      order.resize(n);
      std::iota(order.begin(), order.end(), m.indptr[u]);
      Rng rng(derive_seed(spec.seed, "split", u));
      rng.shuffle(order);
    } else {
      order = temporal_order(m, u);
    }

    bool short_user = false;
    std::size_t n_test = slice_size(n, test_frac);
    if (n_test == 0 || n_test >= n) {
      short_user = true;
      n_test = 0;
    }
    // Temporal order puts the latest interactions last; random order is
    // uniform, so taking the tail is correct for both modes.
    for (std::size_t i = n - n_test; i < n; ++i) test_pos.push_back(order[i]);
    order.resize(n - n_test);

    if (three_way) {
      std::size_t rest = order.size();
      std::size_t n_val = slice_size(rest, val_frac);
      if (n_val == 0 || n_val >= rest) {
        short_user = true;
      } else {
        if (spec.mode == SplitMode::Random) {
          // Same strategy applied recursively on the train portion, with
          // its own derived sub-seed.
          Rng rng(derive_seed(spec.seed, "split-val", u));
          rng.shuffle(order);
        }
        for (std::size_t i = rest - n_val; i < rest; ++i) {
          val_pos.push_back(order[i]);
        }
        order.resize(rest - n_val);
      }
    }
    train_pos.insert(train_pos.end(), order.begin(), order.end());
    if (short_user) out.unsplittable_users++;
  }

  std::sort(train_pos.begin(), train_pos.end());
  std::sort(val_pos.begin(), val_pos.end());
  std::sort(test_pos.begin(), test_pos.end());
  out.train = subset_by_positions(d, train_pos);
  if (three_way) out.validation = subset_by_positions(d, val_pos);
  out.test = subset_by_positions(d, test_pos);
  return out;
}

SplitOutput split_leave_k_out(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  const Csr& m = d.matrix;
  if (spec.mode == SplitMode::Temporal) {
    require_timestamps(d, "temporal leave-k-out");
  }

  SplitOutput out;
  out.provenance = spec;
  std::vector<std::size_t> train_pos, val_pos, test_pos;

  for (std::size_t u = 0; u < m.n_rows; ++u) {
    std::size_t n = m.row_nnz(u);
    if (n == 0) continue;

    std::vector<std::size_t> order;
    if (spec.mode == SplitMode::Random) {
      order.resize(n);
      std::iota(order.begin(), order.end(), m.indptr[u]);
      Rng rng(derive_seed(spec.seed, "split", u));
      rng.shuffle(order);
    } else {
      order = temporal_order(m, u);
    }

    bool short_user = false;
    if (n <= spec.k) {
      short_user = true;
    } else {
      for (std::size_t i = n - spec.k; i < n; ++i) test_pos.push_back(order[i]);
      order.resize(n - spec.k);
    }

    if (spec.with_validation && !short_user) {
      std::size_t rest = order.size();
      if (rest <= spec.k) {
        short_user = true;
      } else {
        if (spec.mode == SplitMode::Random) {
          Rng rng(derive_seed(spec.seed, "split-val", u));
          rng.shuffle(order);
        }
        for (std::size_t i = rest - spec.k; i < rest; ++i) {
          val_pos.push_back(order[i]);
        }
        order.resize(rest - spec.k);
      }
    }
    train_pos.insert(train_pos.end(), order.begin(), order.end());
    if (short_user) out.unsplittable_users++;
  }

  std::sort(train_pos.begin(), train_pos.end());
  std::sort(val_pos.begin(), val_pos.end());
  std::sort(test_pos.begin(), test_pos.end());
  out.train = subset_by_positions(d, train_pos);
  if (spec.with_validation) out.validation = subset_by_positions(d, val_pos);
  out.test = subset_by_positions(d, test_pos);
  return out;
}

SplitOutput split_fixed_timestamp(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  require_timestamps(d, "fixed-timestamp split");
  const Csr& m = d.matrix;

  SplitOutput out;
  out.provenance = spec;
  std::vector<std::size_t> train_pos, test_pos;
  for (std::size_t p = 0; p < m.nnz(); ++p) {
    (m.timestamps[p] < spec.timestamp ? train_pos : test_pos).push_back(p);
  }
  out.train = subset_by_positions(d, train_pos);
  out.test = subset_by_positions(d, test_pos);
  return out;
}

SplitOutput split_kfold(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  const Csr& m = d.matrix;
  if (m.nnz() < spec.folds) {
    throw DataError("k-fold: fewer interactions than folds");
  }

  std::vector<std::size_t> order(m.nnz());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(spec.seed, "kfold", 0));
  rng.shuffle(order);

  SplitOutput out;
  out.provenance = spec;
  const std::size_t base = m.nnz() / spec.folds;
  const std::size_t extra = m.nnz() % spec.folds;
  std::size_t cursor = 0;
  std::vector<std::vector<std::size_t>> groups(spec.folds);
  for (std::size_t g = 0; g < spec.folds; ++g) {
    std::size_t sz = base + (g < extra ? 1 : 0);
    groups[g].assign(order.begin() + cursor, order.begin() + cursor + sz);
    std::sort(groups[g].begin(), groups[g].end());
    cursor += sz;
  }
  for (std::size_t g = 0; g < spec.folds; ++g) {
    std::vector<std::size_t> train_pos;
    train_pos.reserve(m.nnz() - groups[g].size());
    for (std::size_t h = 0; h < spec.folds; ++h) {
      if (h == g) continue;
      train_pos.insert(train_pos.end(), groups[h].begin(), groups[h].end());
    }
    std::sort(train_pos.begin(), train_pos.end());
    out.folds.emplace_back(subset_by_positions(d, train_pos),
                           subset_by_positions(d, groups[g]));
  }
  return out;
}

SplitOutput apply_split(const Dataset& d, const SplitSpec& spec) {
  switch (spec.strategy) {
    case SplitStrategy::Holdout:
      return split_holdout(d, spec);
    case SplitStrategy::LeaveKOut:
      return split_leave_k_out(d, spec);
    case SplitStrategy::FixedTimestamp:
      return split_fixed_timestamp(d, spec);
    case SplitStrategy::KFold:
      return split_kfold(d, spec);
  }
  throw DataError("apply_split: unknown strategy");
}

}  // namespace warpbench
