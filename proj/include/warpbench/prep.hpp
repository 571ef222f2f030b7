#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "warpbench/dataset.hpp"

namespace warpbench {

// Filtering. Three families: rating thresholds (global / user-mean /
// item-mean), k-core decomposition, and single-pass cold-entity pruning.
// Filters drop interactions only; ID maps are preserved so downstream
// splits stay index-compatible (empty rows are legal).

enum class RatingThresholdMode { Global, UserMean, ItemMean };

struct FilterSpec {
  enum class Kind { RatingThreshold, KCore, ColdEntity };
  Kind kind = Kind::RatingThreshold;

  // RatingThreshold
  RatingThresholdMode mode = RatingThresholdMode::Global;
  double theta = 0.0;

  // KCore
  std::size_t k = 1;

  // ColdEntity
  std::size_t min_user = 0;
  std::size_t min_item = 0;
};

// Keeps interactions with rating >= theta (global) or >= the owning
// user's / item's mean rating (distributional modes).
Dataset filter_by_rating(const Dataset& d, const FilterSpec& spec);

// Unique maximal sub-dataset in which every remaining user and item has
// at least k interactions; iterative peeling, idempotent.
Dataset k_core(const Dataset& d, std::size_t k);

// Single pass on the original degree counts: drops interactions whose user
// has < min_user or whose item has < min_item interactions. No cascade.
Dataset cold_filter(const Dataset& d, std::size_t min_user,
                    std::size_t min_item);

Dataset apply_filter(const Dataset& d, const FilterSpec& spec);

// Splitting. All strategies partition the interaction set exactly and
// share the input's ID maps. Randomness is anchored to the spec seed via
// per-user derived sub-seeds, so results are stable across worker counts.

enum class SplitStrategy { Holdout, LeaveKOut, FixedTimestamp, KFold };
enum class SplitMode { Random, Temporal };

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::Holdout;
  SplitMode mode = SplitMode::Random;
  // Holdout: 2 fractions (train, test) or 3 (train, validation, test),
  // each in (0,1), summing to 1.
  std::vector<double> ratio{0.9, 0.1};
  std::size_t k = 1;             // LeaveKOut
  bool with_validation = false;  // LeaveKOut: carve a validation set from
                                 // train by re-applying the strategy
  std::int64_t timestamp = 0;    // FixedTimestamp
  std::size_t folds = 5;         // KFold
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitOutput {
  Dataset train;
  std::optional<Dataset> validation;
  Dataset test;
  std::vector<std::pair<Dataset, Dataset>> folds;  // KFold only
  SplitSpec provenance;
  // Users whose interaction count was too small to populate every slice;
  // they keep everything in train. Surfaced in the run manifest.
  std::size_t unsplittable_users = 0;
};

SplitOutput split_holdout(const Dataset& d, const SplitSpec& spec);
SplitOutput split_leave_k_out(const Dataset& d, const SplitSpec& spec);
SplitOutput split_fixed_timestamp(const Dataset& d, const SplitSpec& spec);
SplitOutput split_kfold(const Dataset& d, const SplitSpec& spec);

SplitOutput apply_split(const Dataset& d, const SplitSpec& spec);

}  // namespace warpbench
