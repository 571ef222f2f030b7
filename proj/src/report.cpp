#include "warpbench/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "warpbench/digest.hpp"
#include "warpbench/error.hpp"

namespace fs = std::filesystem;

namespace warpbench {

EnergyStageReport track_energy(const std::string& stage,
                               const std::vector<EnergySample>& samples,
                               const PowerModel& power, double intensity) {
  if (power.cpu_tdp_w < 0.0 || power.gpu_tdp_w < 0.0 ||
      power.ram_w_per_gb < 0.0) {
    throw ConfigError("energy: TDP figures must be >= 0");
  }
  EnergyStageReport r;
  r.stage = stage;
  r.cpu_power_w = power.cpu_tdp_w;
  r.gpu_power_w = power.gpu_tdp_w;
  r.carbon_intensity = intensity;

  constexpr double kJoulesPerKwh = 3.6e6;
  for (const EnergySample& s : samples) {
    if (!(s.dt_seconds > 0.0)) {
      throw ConfigError("energy: sample intervals must be > 0");
    }
    r.wall_seconds += s.dt_seconds;
    r.cpu_energy_kwh += power.cpu_tdp_w * s.cpu_util * s.dt_seconds / kJoulesPerKwh;
    r.gpu_energy_kwh += power.gpu_tdp_w * s.gpu_util * s.dt_seconds / kJoulesPerKwh;
    r.ram_energy_kwh += power.ram_w_per_gb * s.ram_gb * s.dt_seconds / kJoulesPerKwh;
    r.peak_ram_gb = std::max(r.peak_ram_gb, s.ram_gb);
  }
  r.energy_consumed_kwh = r.cpu_energy_kwh + r.gpu_energy_kwh + r.ram_energy_kwh;
  r.emissions_kg = r.energy_consumed_kwh * intensity;
  r.emissions_rate_kg_per_h =
      r.wall_seconds > 0.0 ? r.emissions_kg / (r.wall_seconds / 3600.0) : 0.0;
  return r;
}

EnergyReport combine_stages(std::vector<EnergyStageReport> stages,
                            const PowerModel& power, double intensity) {
  EnergyReport report;
  EnergyStageReport& t = report.total;
  t.stage = "total";
  t.cpu_power_w = power.cpu_tdp_w;
  t.gpu_power_w = power.gpu_tdp_w;
  t.carbon_intensity = intensity;
  for (const EnergyStageReport& s : stages) {
    t.wall_seconds += s.wall_seconds;
    t.cpu_energy_kwh += s.cpu_energy_kwh;
    t.gpu_energy_kwh += s.gpu_energy_kwh;
    t.ram_energy_kwh += s.ram_energy_kwh;
    t.peak_ram_gb = std::max(t.peak_ram_gb, s.peak_ram_gb);
  }
  t.energy_consumed_kwh = t.cpu_energy_kwh + t.gpu_energy_kwh + t.ram_energy_kwh;
  t.emissions_kg = t.energy_consumed_kwh * intensity;
  t.emissions_rate_kg_per_h =
      t.wall_seconds > 0.0 ? t.emissions_kg / (t.wall_seconds / 3600.0) : 0.0;
  report.stages = std::move(stages);
  return report;
}

namespace {

nlohmann::json stage_to_json(const EnergyStageReport& s) {
  return {
      {"stage", s.stage},
      {"wall_seconds", s.wall_seconds},
      {"emissions", s.emissions_kg},              // kg CO2eq
      {"emissions_rate", s.emissions_rate_kg_per_h},  // kg CO2eq / h
      {"cpu_power", s.cpu_power_w},               // W
      {"gpu_power", s.gpu_power_w},               // W
      {"cpu_energy", s.cpu_energy_kwh},           // kWh
      {"gpu_energy", s.gpu_energy_kwh},           // kWh
      {"ram_energy", s.ram_energy_kwh},           // kWh
      {"energy_consumed", s.energy_consumed_kwh},  // kWh
      {"peak_ram", s.peak_ram_gb},                // GB
      {"carbon_intensity", s.carbon_intensity},   // kg CO2eq / kWh
  };
}

}  // namespace

nlohmann::json energy_to_json(const EnergyReport& report) {
  nlohmann::json j;
  j["note"] = "estimated from a configured power model, not measured";
  j["total"] = stage_to_json(report.total);
  nlohmann::json stages = nlohmann::json::array();
  for (const EnergyStageReport& s : report.stages) {
    stages.push_back(stage_to_json(s));
  }
  j["stages"] = stages;
  return j;
}

namespace {

// /proc/stat aggregate cpu line -> (busy, total) jiffies
bool read_cpu_jiffies(std::uint64_t& busy, std::uint64_t& total) {
  std::ifstream in("/proc/stat");
  if (!in) return false;
  std::string cpu;
  in >> cpu;
  if (cpu != "cpu") return false;
  std::uint64_t v, idle = 0, iowait = 0, sum = 0;
  for (int field = 0; field < 10 && (in >> v); ++field) {
    sum += v;
    if (field == 3) idle = v;
    if (field == 4) iowait = v;
  }
  busy = sum - idle - iowait;
  total = sum;
  return total > 0;
}

double read_rss_gb() {
  std::ifstream in("/proc/self/status");
  if (!in) return 0.0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmRSS:", 0) == 0) {
      std::istringstream ls(line.substr(6));
      double kb = 0.0;
      ls >> kb;
      return kb / (1024.0 * 1024.0);
    }
  }
  return 0.0;
}

}  // namespace

EnergySampler::EnergySampler(double cadence_seconds)
    : cadence_(cadence_seconds), last_tick_(std::chrono::steady_clock::now()) {
  read_cpu_jiffies(last_busy_, last_total_);
  thread_ = std::thread([this] { run(); });
}

EnergySampler::~EnergySampler() {
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
}

void EnergySampler::run() {
  using namespace std::chrono_literals;
  auto next = std::chrono::steady_clock::now() +
              std::chrono::duration<double>(cadence_);
  while (!stop_.load()) {
    std::this_thread::sleep_for(20ms);
    if (std::chrono::steady_clock::now() < next) continue;
    next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(cadence_));
    std::lock_guard<std::mutex> lock(mu_);
    if (!current_stage_.empty()) take_sample_locked();
  }
}

void EnergySampler::take_sample_locked() {
  auto now = std::chrono::steady_clock::now();
  double dt = std::chrono::duration<double>(now - last_tick_).count();
  last_tick_ = now;
  if (dt <= 0.0) return;

  double util = 0.0;
  std::uint64_t busy = 0, total = 0;
  if (read_cpu_jiffies(busy, total) && total > last_total_) {
    util = static_cast<double>(busy - last_busy_) /
           static_cast<double>(total - last_total_);
    util = std::clamp(util, 0.0, 1.0);
    last_busy_ = busy;
    last_total_ = total;
  }

  EnergySample s;
  s.dt_seconds = dt;
  s.cpu_util = util;
  s.gpu_util = 0.0;
  s.ram_gb = read_rss_gb();
  samples_.emplace_back(current_stage_, s);
}

void EnergySampler::begin_stage(const std::string& name) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!current_stage_.empty()) take_sample_locked();  // flush previous
  current_stage_ = name;
  last_tick_ = std::chrono::steady_clock::now();
  read_cpu_jiffies(last_busy_, last_total_);
}

void EnergySampler::end_stage() {
  std::lock_guard<std::mutex> lock(mu_);
  if (!current_stage_.empty()) take_sample_locked();
  current_stage_.clear();
}

EnergyReport EnergySampler::report(const PowerModel& power, double intensity) {
  std::lock_guard<std::mutex> lock(mu_);
  // group samples by stage in first-appearance order
  std::vector<std::string> order;
  std::vector<std::vector<EnergySample>> grouped;
  for (auto& [stage, sample] : samples_) {
    auto it = std::find(order.begin(), order.end(), stage);
    std::size_t idx;
    if (it == order.end()) {
      order.push_back(stage);
      grouped.emplace_back();
      idx = order.size() - 1;
    } else {
      idx = static_cast<std::size_t>(it - order.begin());
    }
    grouped[idx].push_back(sample);
  }
  std::vector<EnergyStageReport> stages;
  for (std::size_t i = 0; i < order.size(); ++i) {
    stages.push_back(track_energy(order[i], grouped[i], power, intensity));
  }
  return combine_stages(std::move(stages), power, intensity);
}

namespace {

std::string format_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string render_recommendations_tsv(const RecommendationList& recs,
                                       const IdMap& users,
                                       const IdMap& items) {
  // emit users in ascending internal index regardless of batch order
  std::vector<std::size_t> order(recs.users.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return recs.users[a] < recs.users[b];
  });

  std::string out;
  for (std::size_t idx : order) {
    const std::string& user = users.raw(recs.users[idx]);
    std::size_t rank = 1;
    for (const auto& [item, score] : recs.items[idx]) {
      out += user;
      out += '\t';
      out += items.raw(item);
      out += '\t';
      out += std::to_string(rank++);
      out += '\t';
      out += format_score(score);
      out += '\n';
    }
  }
  return out;
}

void write_recommendations(const RecommendationList& recs, const IdMap& users,
                           const IdMap& items, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  std::string body = render_recommendations_tsv(recs, users, items);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed for " + path);
}

RunManifest write_artifacts(const nlohmann::json& run_info,
                            const std::vector<FilePayload>& files,
                            const std::vector<std::string>& preexisting,
                            const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir);
  for (const char* sub : {"metrics", "stats", "recs", "checkpoints"}) {
    fs::create_directories(fs::path(dir) / sub, ec);
    if (ec) throw IoError(std::string("cannot create ") + sub + " under " + dir);
  }

  nlohmann::json artifact_list = nlohmann::json::array();
  auto add_entry = [&](const std::string& relpath, const fs::path& full) {
    artifact_list.push_back(
        {{"path", relpath},
         {"sha256", sha256_file_hex(full.string())},
         {"bytes", fs::file_size(full)}});
  };

  for (const FilePayload& f : files) {
    fs::path full = fs::path(dir) / f.relpath;
    fs::create_directories(full.parent_path(), ec);
    std::ofstream out(full, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write artifact " + full.string());
    out.write(f.content.data(), static_cast<std::streamsize>(f.content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + full.string());
    add_entry(f.relpath, full);
  }
  for (const std::string& relpath : preexisting) {
    fs::path full = fs::path(dir) / relpath;
    if (!fs::exists(full)) {
      throw IoError("missing pre-written artifact " + full.string());
    }
    add_entry(relpath, full);
  }

  RunManifest manifest;
  manifest.json = run_info;
  manifest.json["artifacts"] = artifact_list;

  // manifest goes last so its listing covers everything else
  fs::path mpath = fs::path(dir) / "manifest.json";
  std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + mpath.string());
  out << manifest.json.dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + mpath.string());
  return manifest;
}

void verify_artifacts(const std::string& dir) {
  fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("missing manifest: " + mpath.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest: " + std::string(e.what()));
  }
  for (const auto& entry : manifest.at("artifacts")) {
    std::string rel = entry.at("path").get<std::string>();
    fs::path full = fs::path(dir) / rel;
    if (!fs::exists(full)) throw IoError("missing artifact: " + rel);
    std::string expected = entry.at("sha256").get<std::string>();
    if (sha256_file_hex(full.string()) != expected) {
      throw IoError("digest mismatch for artifact: " + rel);
    }
  }
}

}  // namespace warpbench
