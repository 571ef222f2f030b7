#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpbench/dataset.hpp"
#include "warpbench/models.hpp"

namespace warpbench {

// Configured power model; the energy report is an estimate derived from
// these figures, never a hardware measurement.
struct PowerModel {
  double cpu_tdp_w = 65.0;
  double gpu_tdp_w = 0.0;       // 0 = no GPU accounted
  double ram_w_per_gb = 0.375;  // resident-set based
};

struct EnergySample {
  double dt_seconds = 0.0;
  double cpu_util = 0.0;  // 0..1
  double gpu_util = 0.0;  // 0..1
  double ram_gb = 0.0;    // resident set at sample time
};

struct EnergyStageReport {
  std::string stage;
  double wall_seconds = 0.0;
  double cpu_energy_kwh = 0.0;
  double gpu_energy_kwh = 0.0;
  double ram_energy_kwh = 0.0;
  double energy_consumed_kwh = 0.0;  // sum of the three components
  double emissions_kg = 0.0;         // energy * carbon intensity
  double emissions_rate_kg_per_h = 0.0;
  double peak_ram_gb = 0.0;
  double cpu_power_w = 0.0;  // configured TDP, echoed
  double gpu_power_w = 0.0;
  double carbon_intensity = 0.0;  // configured, echoed
};

struct EnergyReport {
  std::vector<EnergyStageReport> stages;
  EnergyStageReport total;
};

// Pure accounting: component kWh = sum tdp * util * dt / 3.6e6, RAM via
// sampled resident GB * W/GB. Emissions follow from the intensity.
EnergyStageReport track_energy(const std::string& stage,
                               const std::vector<EnergySample>& samples,
                               const PowerModel& power, double intensity);

EnergyReport combine_stages(std::vector<EnergyStageReport> stages,
                            const PowerModel& power, double intensity);

nlohmann::json energy_to_json(const EnergyReport& report);

// Background observer sampling /proc on a fixed cadence and attributing
// samples to the currently active stage. Linux-specific; on read failure
// utilization degrades to zero rather than erroring.
class EnergySampler {
 public:
  explicit EnergySampler(double cadence_seconds = 1.0);
  ~EnergySampler();
  EnergySampler(const EnergySampler&) = delete;
  EnergySampler& operator=(const EnergySampler&) = delete;

  void begin_stage(const std::string& name);
  void end_stage();
  EnergyReport report(const PowerModel& power, double intensity);

 private:
  void run();
  void take_sample_locked();

  double cadence_;
  std::mutex mu_;
  std::string current_stage_;
  std::vector<std::pair<std::string, EnergySample>> samples_;
  std::chrono::steady_clock::time_point last_tick_;
  std::uint64_t last_busy_ = 0, last_total_ = 0;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

// One artifact file to persist, path relative to the run directory.
// content is binary-safe.
struct FilePayload {
  std::string relpath;
  std::string content;
};

struct RunManifest {
  nlohmann::json json;
};

// Writes every payload under `dir` (fixed layout: manifest.json, metrics/,
// stats/, recs/, checkpoints/, study.log, energy.json), then writes
// manifest.json last with a SHA-256 digest per artifact. `preexisting`
// names files already written under dir (checkpoints) to digest in place.
RunManifest write_artifacts(const nlohmann::json& run_info,
                            const std::vector<FilePayload>& files,
                            const std::vector<std::string>& preexisting,
                            const std::string& dir);

// Recomputes every digest listed in dir/manifest.json; throws IoError on
// the first mismatch or missing file.
void verify_artifacts(const std::string& dir);

// TSV rows: raw_user <tab> raw_item <tab> rank <tab> score, rank ascending
// per user, users in ascending internal index order.
std::string render_recommendations_tsv(const RecommendationList& recs,
                                       const IdMap& users, const IdMap& items);

void write_recommendations(const RecommendationList& recs, const IdMap& users,
                           const IdMap& items, const std::string& path);

}  // namespace warpbench
