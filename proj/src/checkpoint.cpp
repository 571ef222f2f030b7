#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "warpbench/digest.hpp"
#include "warpbench/model_state.hpp"
#include "warpbench/models.hpp"
#include "warpbench/version.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint arrays are written little-endian");

namespace warpbench {

namespace {

constexpr char kMagic[8] = {'W', 'R', 'B', 'C', 'K', 'P', 'T', '1'};

struct ArraySpec {
  std::string name;
  std::string dtype;
  std::size_t count = 0;
  const void* data = nullptr;
  std::size_t elem_size = 0;
};

template <typename T>
ArraySpec spec(const char* name, const char* dtype, const std::vector<T>& v) {
  return {name, dtype, v.size(), v.data(), sizeof(T)};
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

void hash_id_list(Sha256& h, const std::vector<std::string>& ids) {
  std::uint64_t n = ids.size();
  h.update(&n, sizeof(n));
  for (const std::string& s : ids) {
    std::uint64_t len = s.size();
    h.update(&len, sizeof(len));
    h.update(s.data(), s.size());
  }
}

}  // namespace

std::string idmap_hash(const IdMap& users, const IdMap& items) {
  Sha256 h;
  hash_id_list(h, users.all_raw());
  hash_id_list(h, items.all_raw());
  return h.hex();
}

void save_checkpoint(const TrainedModel& m, const std::string& path) {
  const Csr& tm = m.train->matrix;
  std::vector<ArraySpec> arrays;
  arrays.push_back(spec("train_indptr", "u64", tm.indptr));
  arrays.push_back(spec("train_indices", "u32", tm.indices));
  arrays.push_back(spec("train_values", "f64", tm.values));
  if (tm.has_timestamps()) {
    arrays.push_back(spec("train_timestamps", "i64", tm.timestamps));
  }

  const std::string& family = m.model->family();
  if (family == "mostpop") {
    auto* mp = dynamic_cast<const MostPopModel*>(m.model.get());
    arrays.push_back(spec("popularity", "f64", mp->popularity()));
  } else if (family == "random") {
    // fully described by the seed in the hyperparameters
  } else if (family == "itemknn" || family == "userknn") {
    auto* knn = dynamic_cast<const KnnModel*>(m.model.get());
    arrays.push_back(spec("sim_indptr", "u64", knn->indptr()));
    arrays.push_back(spec("sim_indices", "u32", knn->indices()));
    arrays.push_back(spec("sim_values", "f64", knn->sims()));
  } else if (family == "ease") {
    auto* ease = dynamic_cast<const EaseModel*>(m.model.get());
    const Eigen::MatrixXd& bt = ease->bt();
    // bt is column-major B^T, i.e. exactly B in row-major element order
    arrays.push_back({"b_rowmajor", "f64",
                      static_cast<std::size_t>(bt.size()), bt.data(),
                      sizeof(double)});
  } else if (family == "bprmf") {
    auto* mf = dynamic_cast<const BprMfModel*>(m.model.get());
    arrays.push_back(spec("user_factors", "f64", mf->user_factors()));
    arrays.push_back(spec("item_factors", "f64", mf->item_factors()));
    arrays.push_back(spec("item_bias", "f64", mf->item_bias()));
  } else {
    throw IoError("checkpoint: unknown family " + family);
  }

  nlohmann::json header;
  header["format"] = 1;
  header["engine_version"] = kEngineVersion;
  header["family"] = family;
  header["hyperparameters"] = m.model->hyperparameters();
  header["idmap_hash"] = idmap_hash(*m.train->user_map, *m.train->item_map);
  header["users"] = m.train->user_map->all_raw();
  header["items"] = m.train->item_map->all_raw();
  nlohmann::json manifest = nlohmann::json::array();
  for (const ArraySpec& a : arrays) {
    manifest.push_back({{"name", a.name}, {"dtype", a.dtype},
                        {"count", a.count}});
  }
  header["arrays"] = manifest;
  std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, header_bytes.size());
  out.write(header_bytes.data(),
            static_cast<std::streamsize>(header_bytes.size()));
  for (const ArraySpec& a : arrays) {
    out.write(reinterpret_cast<const char*>(a.data),
              static_cast<std::streamsize>(a.count * a.elem_size));
  }
  out.flush();
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

namespace {

template <typename T>
std::vector<T> read_array(std::ifstream& in, std::size_t count,
                          const std::string& name) {
  std::vector<T> v(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw IoError("checkpoint: truncated array " + name);
  return v;
}

}  // namespace

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  std::uint64_t header_len = read_u64(in);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: invalid header: ") + e.what());
  }

  auto users = std::make_shared<IdMap>();
  auto items = std::make_shared<IdMap>();
  for (const auto& raw : header.at("users")) users->intern(raw);
  for (const auto& raw : header.at("items")) items->intern(raw);
  std::string stored_hash = header.at("idmap_hash").get<std::string>();
  if (idmap_hash(*users, *items) != stored_hash) {
    throw IoError("checkpoint: ID map hash mismatch in " + path);
  }

  // read arrays in manifest order into named buffers
  struct Buffers {
    std::vector<std::size_t> train_indptr, sim_indptr;
    std::vector<std::uint32_t> train_indices, sim_indices;
    std::vector<double> train_values, sim_values, popularity, b_rowmajor;
    std::vector<double> user_factors, item_factors, item_bias;
    std::vector<std::int64_t> train_timestamps;
  } buf;

  for (const auto& a : header.at("arrays")) {
    std::string name = a.at("name").get<std::string>();
    std::size_t count = a.at("count").get<std::size_t>();
    if (name == "train_indptr") {
      buf.train_indptr = read_array<std::size_t>(in, count, name);
    } else if (name == "train_indices") {
      buf.train_indices = read_array<std::uint32_t>(in, count, name);
    } else if (name == "train_values") {
      buf.train_values = read_array<double>(in, count, name);
    } else if (name == "train_timestamps") {
      buf.train_timestamps = read_array<std::int64_t>(in, count, name);
    } else if (name == "sim_indptr") {
      buf.sim_indptr = read_array<std::size_t>(in, count, name);
    } else if (name == "sim_indices") {
      buf.sim_indices = read_array<std::uint32_t>(in, count, name);
    } else if (name == "sim_values") {
      buf.sim_values = read_array<double>(in, count, name);
    } else if (name == "popularity") {
      buf.popularity = read_array<double>(in, count, name);
    } else if (name == "b_rowmajor") {
      buf.b_rowmajor = read_array<double>(in, count, name);
    } else if (name == "user_factors") {
      buf.user_factors = read_array<double>(in, count, name);
    } else if (name == "item_factors") {
      buf.item_factors = read_array<double>(in, count, name);
    } else if (name == "item_bias") {
      buf.item_bias = read_array<double>(in, count, name);
    } else {
      throw IoError("checkpoint: unknown array " + name);
    }
  }

  auto train = std::make_shared<Dataset>();
  train->user_map = users;
  train->item_map = items;
  Csr& tm = train->matrix;
  tm.n_rows = users->size();
  tm.n_cols = items->size();
  tm.indptr = std::move(buf.train_indptr);
  tm.indices = std::move(buf.train_indices);
  tm.values = std::move(buf.train_values);
  tm.timestamps = std::move(buf.train_timestamps);
  if (tm.indptr.size() != tm.n_rows + 1) {
    throw IoError("checkpoint: train matrix shape mismatch");
  }

  std::string family = header.at("family").get<std::string>();
  nlohmann::json hp = header.at("hyperparameters");
  std::shared_ptr<const Model> model;
  if (family == "mostpop") {
    model = std::make_shared<MostPopModel>(std::move(buf.popularity));
  } else if (family == "random") {
    model = std::make_shared<RandomModel>(hp.at("seed").get<std::uint64_t>(),
                                          tm.n_cols);
  } else if (family == "itemknn" || family == "userknn") {
    model = std::make_shared<KnnModel>(family, hp, train,
                                       std::move(buf.sim_indptr),
                                       std::move(buf.sim_indices),
                                       std::move(buf.sim_values));
  } else if (family == "ease") {
    std::size_t n = tm.n_cols;
    if (buf.b_rowmajor.size() != n * n) {
      throw IoError("checkpoint: ease weight matrix shape mismatch");
    }
    Eigen::MatrixXd bt(static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(n));
    std::memcpy(bt.data(), buf.b_rowmajor.data(), n * n * sizeof(double));
    model = std::make_shared<EaseModel>(hp, train, std::move(bt));
  } else if (family == "bprmf") {
    std::size_t factors = hp.at("factors").get<std::size_t>();
    model = std::make_shared<BprMfModel>(hp, factors,
                                         std::move(buf.user_factors),
                                         std::move(buf.item_factors),
                                         std::move(buf.item_bias));
  } else {
    throw IoError("checkpoint: unknown family " + family);
  }

  return {std::move(model), std::move(train)};
}

}  // namespace warpbench
