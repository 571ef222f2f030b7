#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "warpbench/error.hpp"

namespace warpbench {

using ItemIndex = std::uint32_t;
using UserIndex = std::uint32_t;

// One parsed interaction record, pre-indexing. Absent rating defaults to
// 1.0 (implicit feedback); absent timestamp is tracked dataset-wide.
struct RawInteraction {
  std::string user_id;
  std::string item_id;
  double rating = 1.0;
  std::int64_t timestamp = 0;
};

// Bijective raw-string <-> contiguous-index map. Indices are assigned in
// first-appearance order and cover exactly 0..size()-1.
class IdMap {
 public:
  // Returns the index for `raw`, inserting it if unseen.
  std::uint32_t intern(const std::string& raw) {
    auto it = raw_to_internal_.find(raw);
    if (it != raw_to_internal_.end()) return it->second;
    std::uint32_t idx = static_cast<std::uint32_t>(internal_to_raw_.size());
    raw_to_internal_.emplace(raw, idx);
    internal_to_raw_.push_back(raw);
    return idx;
  }

  // Returns the index for `raw`, or nullopt if unmapped.
  std::optional<std::uint32_t> lookup(const std::string& raw) const {
    auto it = raw_to_internal_.find(raw);
    if (it == raw_to_internal_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& raw(std::uint32_t idx) const {
    return internal_to_raw_.at(idx);
  }

  std::size_t size() const { return internal_to_raw_.size(); }
  const std::vector<std::string>& all_raw() const { return internal_to_raw_; }

 private:
  std::unordered_map<std::string, std::uint32_t> raw_to_internal_;
  std::vector<std::string> internal_to_raw_;
};

// Compressed-sparse-row user x item interaction matrix. Column indices are
// strictly increasing within each row; `timestamps`, when present, is
// parallel to `values`.
struct Csr {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> indptr;   // size n_rows + 1
  std::vector<ItemIndex> indices;    // size nnz
  std::vector<double> values;        // size nnz
  std::vector<std::int64_t> timestamps;  // empty or size nnz

  std::size_t nnz() const { return indices.size(); }
  bool has_timestamps() const { return !timestamps.empty(); }

  std::span<const ItemIndex> row_indices(std::size_t r) const {
    return {indices.data() + indptr[r], indptr[r + 1] - indptr[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values.data() + indptr[r], indptr[r + 1] - indptr[r]};
  }
  std::span<const std::int64_t> row_timestamps(std::size_t r) const {
    return {timestamps.data() + indptr[r], indptr[r + 1] - indptr[r]};
  }
  std::size_t row_nnz(std::size_t r) const { return indptr[r + 1] - indptr[r]; }

  bool contains(std::size_t r, ItemIndex c) const {
    auto cols = row_indices(r);
    auto it = std::lower_bound(cols.begin(), cols.end(), c);
    return it != cols.end() && *it == c;
  }
};

// Immutable interaction dataset: CSR matrix plus shared ID maps. Splits and
// filters of a dataset share the parent's maps, so internal indices stay
// comparable across partitions.
struct Dataset {
  Csr matrix;
  std::shared_ptr<const IdMap> user_map;
  std::shared_ptr<const IdMap> item_map;

  std::size_t n_users() const { return matrix.n_rows; }
  std::size_t n_items() const { return matrix.n_cols; }
  std::size_t n_interactions() const { return matrix.nnz(); }
};

struct DatasetStats {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_interactions = 0;
  double sparsity = 0.0;  // 1 - nnz / (users * items)
};

inline DatasetStats compute_stats(const Dataset& d) {
  if (d.n_users() == 0 || d.n_items() == 0) {
    throw DataError("compute_stats requires a non-degenerate dataset");
  }
  DatasetStats s;
  s.n_users = d.n_users();
  s.n_items = d.n_items();
  s.n_interactions = d.n_interactions();
  s.sparsity = 1.0 - static_cast<double>(s.n_interactions) /
                         (static_cast<double>(s.n_users) *
                          static_cast<double>(s.n_items));
  return s;
}

// Per-item interaction counts over the training matrix.
std::vector<std::size_t> item_degrees(const Csr& m);

}  // namespace warpbench
