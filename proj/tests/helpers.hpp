#pragma once

// Shared fixtures for the test binaries: tiny dataset builders and a
// self-cleaning temp directory.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "warpbench/dataset.hpp"
#include "warpbench/ingest.hpp"

namespace testutil {

// user, item, rating, timestamp
using Row = std::tuple<std::string, std::string, double, std::int64_t>;

inline warpbench::Dataset make_dataset(const std::vector<Row>& rows,
                                       bool with_timestamps = true) {
  std::vector<warpbench::RawInteraction> recs;
  recs.reserve(rows.size());
  for (const auto& [u, i, r, t] : rows) {
    recs.push_back({u, i, r, t});
  }
  return warpbench::build_dataset(recs, with_timestamps);
}

inline std::shared_ptr<const warpbench::Dataset> share(warpbench::Dataset d) {
  return std::make_shared<const warpbench::Dataset>(std::move(d));
}

class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto candidate =
          base / ("warpbench-test-" + std::to_string(counter_++) + "-" +
                  std::to_string(
                      std::hash<const void*>{}(static_cast<void*>(this)) &
                      0xffffff));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    std::perror("TempDir");
    std::abort();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
