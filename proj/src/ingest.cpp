#include "warpbench/ingest.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string_view>
#include <unordered_map>

namespace warpbench {

namespace {

std::vector<std::string_view> split_fields(std::string_view line,
                                           std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  // from_chars for double is incomplete on some libstdc++ versions; strtod
  // on a bounded copy is portable.
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(buf.c_str(), &end);
  if (errno != 0 || end != buf.c_str() + buf.size()) return false;
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

bool parse_i64(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

bool FileSchema::has(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

void FileSchema::validate() const {
  if (separator.empty()) throw DataError("schema: separator must be non-empty");
  if (!has("user") || !has("item")) {
    throw DataError("schema: columns must name at least 'user' and 'item'");
  }
  for (const auto& c : columns) {
    if (c != "user" && c != "item" && c != "rating" && c != "timestamp") {
      throw DataError("schema: unknown column name '" + c + "'");
    }
  }
}

LoadResult load_interactions(const std::string& path, const FileSchema& schema,
                             ParseMode mode) {
  schema.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open interaction file: " + path);

  std::size_t col_user = 0, col_item = 0, col_rating = 0, col_ts = 0;
  bool want_rating = false, want_ts = false;
  for (std::size_t i = 0; i < schema.columns.size(); ++i) {
    const auto& c = schema.columns[i];
    if (c == "user") col_user = i;
    if (c == "item") col_item = i;
    if (c == "rating") col_rating = i, want_rating = true;
    if (c == "timestamp") col_ts = i, want_ts = true;
  }

  LoadResult result;
  result.has_ratings = want_rating;
  result.has_timestamps = want_ts;

  std::string line;
  std::size_t line_no = 0;
  if (schema.header) {
    if (!std::getline(in, line)) throw DataError("empty file: " + path);
    ++line_no;
    if (split_fields(line, schema.separator).size() < schema.columns.size()) {
      throw DataError("malformed header in " + path + ": expected at least " +
                      std::to_string(schema.columns.size()) + " fields");
    }
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    auto fields = split_fields(line, schema.separator);
    auto reject = [&](const std::string& why) {
      if (mode == ParseMode::Strict) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " + why);
      }
      ++result.skipped_rows;
    };

    if (fields.size() < schema.columns.size()) {
      reject("expected " + std::to_string(schema.columns.size()) +
             " fields, got " + std::to_string(fields.size()));
      continue;
    }

    RawInteraction rec;
    rec.user_id = std::string(fields[col_user]);
    rec.item_id = std::string(fields[col_item]);
    if (rec.user_id.empty() || rec.item_id.empty()) {
      reject("empty user or item id");
      continue;
    }
    if (want_rating) {
      if (!parse_double(fields[col_rating], rec.rating)) {
        reject("unparseable rating '" + std::string(fields[col_rating]) + "'");
        continue;
      }
    }
    if (want_ts) {
      if (!parse_i64(fields[col_ts], rec.timestamp)) {
        reject("unparseable timestamp '" + std::string(fields[col_ts]) + "'");
        continue;
      }
    }
    result.records.push_back(std::move(rec));
  }

  if (result.records.empty()) {
    throw DataError("no valid interaction rows in " + path);
  }
  return result;
}

Dataset build_dataset(const LoadResult& loaded, DedupPolicy policy) {
  return build_dataset(loaded.records, loaded.has_timestamps, policy);
}

Dataset build_dataset(const std::vector<RawInteraction>& records,
                      bool with_timestamps, DedupPolicy policy) {
  if (records.empty()) throw DataError("build_dataset: no records");

  auto user_map = std::make_shared<IdMap>();
  auto item_map = std::make_shared<IdMap>();

  struct Cell {
    double rating;
    std::int64_t timestamp;
    std::size_t file_pos;
  };
  // (user_idx << 32 | item_idx) -> resolved cell
  std::unordered_map<std::uint64_t, Cell> cells;
  cells.reserve(records.size());

  for (std::size_t pos = 0; pos < records.size(); ++pos) {
    const auto& r = records[pos];
    if (r.user_id.empty() || r.item_id.empty()) {
      throw DataError("build_dataset: empty id at record " +
                      std::to_string(pos));
    }
    if (!std::isfinite(r.rating)) {
      throw DataError("build_dataset: non-finite rating at record " +
                      std::to_string(pos));
    }
    std::uint32_t u = user_map->intern(r.user_id);
    std::uint32_t i = item_map->intern(r.item_id);
    std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | i;
    Cell cand{r.rating, with_timestamps ? r.timestamp : 0, pos};

    auto [it, inserted] = cells.try_emplace(key, cand);
    if (inserted) continue;
    switch (policy) {
      case DedupPolicy::Error:
        throw DataError("duplicate (user,item) pair: (" + r.user_id + "," +
                        r.item_id + ")");
      case DedupPolicy::KeepFirst:
        break;
      case DedupPolicy::KeepLastByTimestamp: {
        const Cell& cur = it->second;
        bool newer = with_timestamps
                         ? (cand.timestamp > cur.timestamp ||
                            (cand.timestamp == cur.timestamp &&
                             cand.file_pos > cur.file_pos))
                         : cand.file_pos > cur.file_pos;
        if (newer) it->second = cand;
        break;
      }
    }
  }

  Dataset d;
  d.user_map = user_map;
  d.item_map = item_map;
  Csr& m = d.matrix;
  m.n_rows = user_map->size();
  m.n_cols = item_map->size();

  std::vector<std::pair<std::uint64_t, Cell>> sorted(cells.begin(),
                                                     cells.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  m.indptr.assign(m.n_rows + 1, 0);
  m.indices.reserve(sorted.size());
  m.values.reserve(sorted.size());
  if (with_timestamps) m.timestamps.reserve(sorted.size());
  for (const auto& [key, cell] : sorted) {
    std::uint32_t u = static_cast<std::uint32_t>(key >> 32);
    std::uint32_t i = static_cast<std::uint32_t>(key & 0xffffffffu);
    m.indptr[u + 1]++;
    m.indices.push_back(i);
    m.values.push_back(cell.rating);
    if (with_timestamps) m.timestamps.push_back(cell.timestamp);
  }
  for (std::size_t r = 0; r < m.n_rows; ++r) m.indptr[r + 1] += m.indptr[r];
  return d;
}

void export_interactions_tsv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const Csr& m = d.matrix;
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    auto cols = m.row_indices(u);
    auto vals = m.row_values(u);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      out << d.user_map->raw(static_cast<std::uint32_t>(u)) << '\t'
          << d.item_map->raw(cols[k]) << '\t' << vals[k];
      if (m.has_timestamps()) out << '\t' << m.row_timestamps(u)[k];
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::size_t> item_degrees(const Csr& m) {
  std::vector<std::size_t> deg(m.n_cols, 0);
  for (ItemIndex c : m.indices) deg[c]++;
  return deg;
}

}  // namespace warpbench
