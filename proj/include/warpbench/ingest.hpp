#pragma once

#include <string>
#include <vector>

#include "warpbench/dataset.hpp"

namespace warpbench {

// Column layout of a delimited interaction file. `columns` names the fields
// in file order; "user" and "item" are mandatory, "rating" and "timestamp"
// optional. Fields beyond the schema are ignored.
struct FileSchema {
  std::vector<std::string> columns{"user", "item", "rating", "timestamp"};
  std::string separator = "\t";
  bool header = false;

  bool has(const std::string& name) const;
  void validate() const;
};

enum class ParseMode { Strict, Lenient };

struct LoadResult {
  std::vector<RawInteraction> records;
  std::size_t skipped_rows = 0;  // lenient mode only
  bool has_ratings = false;
  bool has_timestamps = false;
};

// Reads a delimited interaction file in file order. Strict mode throws on
// the first malformed mandatory field; lenient mode skips and counts.
LoadResult load_interactions(const std::string& path, const FileSchema& schema,
                             ParseMode mode = ParseMode::Strict);

// Duplicate (user,item) resolution policy. KeepLastByTimestamp prefers the
// larger timestamp (file order breaks ties and substitutes when timestamps
// are absent).
enum class DedupPolicy { KeepLastByTimestamp, KeepFirst, Error };

// Builds the internal contiguous-index dataset. Internal indices follow
// first appearance in record order; column indices within each CSR row are
// strictly increasing.
Dataset build_dataset(const LoadResult& loaded,
                      DedupPolicy policy = DedupPolicy::KeepLastByTimestamp);
Dataset build_dataset(const std::vector<RawInteraction>& records,
                      bool with_timestamps,
                      DedupPolicy policy = DedupPolicy::KeepLastByTimestamp);

// Writes a dataset back to `user \t item \t rating [\t timestamp]` rows,
// users in ascending internal index. Inverse of load+build modulo map order.
void export_interactions_tsv(const Dataset& d, const std::string& path);

}  // namespace warpbench
