#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "warpbench/error.hpp"
#include "warpbench/report.hpp"
#include "warpbench/rng.hpp"

using namespace warpbench;

namespace {

std::vector<EnergySample> random_samples(Rng& rng, std::size_t n) {
  std::vector<EnergySample> out(n);
  for (auto& s : out) {
    s.dt_seconds = 0.1 + rng.uniform01() * 5.0;
    s.cpu_util = rng.uniform01();
    s.gpu_util = rng.uniform01();
    s.ram_gb = rng.uniform01() * 16.0;
  }
  return out;
}

}  // namespace

TEST_CASE("energy accounting reproduces the defining sums") {
  Rng rng(616);
  PowerModel power{95.0, 150.0, 0.375};
  const double intensity = 0.475;
  for (int t = 0; t < 50; ++t) {
    auto samples = random_samples(rng, 1 + rng.bounded(20));
    EnergyStageReport r = track_energy("train", samples, power, intensity);

    double wall = 0.0, cpu = 0.0, gpu = 0.0, ram = 0.0, peak = 0.0;
    for (const auto& s : samples) {
      wall += s.dt_seconds;
      cpu += power.cpu_tdp_w * s.cpu_util * s.dt_seconds / 3.6e6;
      gpu += power.gpu_tdp_w * s.gpu_util * s.dt_seconds / 3.6e6;
      ram += power.ram_w_per_gb * s.ram_gb * s.dt_seconds / 3.6e6;
      peak = std::max(peak, s.ram_gb);
    }
    REQUIRE(r.wall_seconds == doctest::Approx(wall).epsilon(1e-12));
    REQUIRE(r.cpu_energy_kwh == doctest::Approx(cpu).epsilon(1e-9));
    REQUIRE(r.gpu_energy_kwh == doctest::Approx(gpu).epsilon(1e-9));
    REQUIRE(r.ram_energy_kwh == doctest::Approx(ram).epsilon(1e-9));
    REQUIRE(r.energy_consumed_kwh ==
            doctest::Approx(cpu + gpu + ram).epsilon(1e-9));
    REQUIRE(r.emissions_kg ==
            doctest::Approx((cpu + gpu + ram) * intensity).epsilon(1e-9));
    REQUIRE(r.emissions_rate_kg_per_h ==
            doctest::Approx(r.emissions_kg / (wall / 3600.0)).epsilon(1e-9));
    REQUIRE(r.peak_ram_gb == doctest::Approx(peak).epsilon(1e-12));
    REQUIRE(r.cpu_power_w == 95.0);
    REQUIRE(r.gpu_power_w == 150.0);
    REQUIRE(r.carbon_intensity == intensity);
  }
}

TEST_CASE("a hundred watts for two hours is a fifth of a kilowatt-hour") {
  PowerModel power{100.0, 0.0, 0.0};
  EnergySample s;
  s.dt_seconds = 7200.0;
  s.cpu_util = 1.0;
  EnergyStageReport r = track_energy("train", {s}, power, 0.475);
  CHECK(r.cpu_energy_kwh == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.energy_consumed_kwh == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.emissions_kg == doctest::Approx(0.095).epsilon(1e-12));
  CHECK(r.emissions_rate_kg_per_h == doctest::Approx(0.0475).epsilon(1e-12));
}

TEST_CASE("energy accounting rejects nonsense inputs") {
  EnergySample ok;
  ok.dt_seconds = 1.0;
  PowerModel negative{-1.0, 0.0, 0.0};
  CHECK_THROWS_AS(track_energy("x", {ok}, negative, 0.475), ConfigError);

  PowerModel fine;
  EnergySample bad;
  bad.dt_seconds = 0.0;
  CHECK_THROWS_AS(track_energy("x", {bad}, fine, 0.475), ConfigError);

  EnergyStageReport empty = track_energy("idle", {}, fine, 0.475);
  CHECK(empty.wall_seconds == 0.0);
  CHECK(empty.emissions_rate_kg_per_h == 0.0);
}

TEST_CASE("stage totals add up and keep the stage order") {
  Rng rng(33);
  PowerModel power{65.0, 0.0, 0.375};
  auto s1 = track_energy("prepare", random_samples(rng, 5), power, 0.4);
  auto s2 = track_energy("train", random_samples(rng, 8), power, 0.4);
  auto s3 = track_energy("evaluate", random_samples(rng, 3), power, 0.4);
  EnergyReport report = combine_stages({s1, s2, s3}, power, 0.4);

  REQUIRE(report.stages.size() == 3);
  CHECK(report.stages[0].stage == "prepare");
  CHECK(report.stages[1].stage == "train");
  CHECK(report.stages[2].stage == "evaluate");
  CHECK(report.total.stage == "total");
  CHECK(report.total.wall_seconds ==
        doctest::Approx(s1.wall_seconds + s2.wall_seconds + s3.wall_seconds));
  CHECK(report.total.energy_consumed_kwh ==
        doctest::Approx(s1.energy_consumed_kwh + s2.energy_consumed_kwh +
                        s3.energy_consumed_kwh)
            .epsilon(1e-12));
  CHECK(report.total.peak_ram_gb ==
        std::max({s1.peak_ram_gb, s2.peak_ram_gb, s3.peak_ram_gb}));
  CHECK(report.total.emissions_kg ==
        doctest::Approx(report.total.energy_consumed_kwh * 0.4));
}

TEST_CASE("energy json carries the full reporting schema per stage") {
  PowerModel power;
  EnergySample s;
  s.dt_seconds = 10.0;
  s.cpu_util = 0.5;
  s.ram_gb = 2.0;
  EnergyReport report =
      combine_stages({track_energy("train", {s}, power, 0.475)}, power, 0.475);
  nlohmann::json j = energy_to_json(report);

  CHECK(j["note"] == "estimated from a configured power model, not measured");
  REQUIRE(j.contains("total"));
  REQUIRE(j["stages"].size() == 1);

  const std::set<std::string> expected{
      "stage",      "wall_seconds", "emissions",  "emissions_rate",
      "cpu_power",  "gpu_power",    "cpu_energy", "gpu_energy",
      "ram_energy", "energy_consumed", "peak_ram", "carbon_intensity"};
  for (const nlohmann::json& block : {j["total"], j["stages"][0]}) {
    std::set<std::string> keys;
    for (auto it = block.begin(); it != block.end(); ++it) keys.insert(it.key());
    CHECK(keys == expected);
  }
  CHECK(j["stages"][0]["stage"] == "train");
  CHECK(j["total"]["carbon_intensity"] == 0.475);
}

TEST_CASE("the sampler attributes samples to the active stage") {
  EnergySampler sampler(0.02);
  sampler.begin_stage("train");
  std::this_thread::sleep_for(std::chrono::milliseconds(120));
  sampler.end_stage();
  EnergyReport report = sampler.report(PowerModel{}, 0.475);
  REQUIRE(report.stages.size() == 1);
  CHECK(report.stages[0].stage == "train");
  CHECK(report.stages[0].wall_seconds > 0.05);
  CHECK(report.total.wall_seconds == report.stages[0].wall_seconds);
}

TEST_CASE("artifact directories carry a digest manifest written last") {
  testutil::TempDir dir;
  nlohmann::json run_info{{"pipeline", "train"}, {"seed", 7}};
  std::vector<FilePayload> files{
      {"config.json", "{\"a\":1}\n"},
      {"metrics/model.json", "{\"ndcg\":0.3}\n"},
      {"recs/model.tsv", "u1\ti1\t1\t0.5\n"},
  };
  RunManifest manifest = write_artifacts(run_info, files, {}, dir.file("run"));

  CHECK(manifest.json["pipeline"] == "train");
  REQUIRE(manifest.json["artifacts"].size() == 3);
  std::set<std::string> listed;
  for (const auto& entry : manifest.json["artifacts"]) {
    listed.insert(entry["path"].get<std::string>());
    CHECK(entry["sha256"].get<std::string>().size() == 64);
    CHECK(entry["bytes"].get<std::size_t>() > 0);
  }
  CHECK(listed ==
        std::set<std::string>{"config.json", "metrics/model.json",
                              "recs/model.tsv"});

  // the fixed layout exists even for unused corners
  for (const char* sub : {"metrics", "stats", "recs", "checkpoints"}) {
    CHECK(std::filesystem::is_directory(dir.path() / "run" / sub));
  }
  CHECK_NOTHROW(verify_artifacts(dir.file("run")));

  // identical payloads digest identically on a second run
  RunManifest again = write_artifacts(run_info, files, {}, dir.file("run2"));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(again.json["artifacts"][i]["sha256"] ==
          manifest.json["artifacts"][i]["sha256"]);
  }
}

TEST_CASE("verification fails closed on tampering and gaps") {
  testutil::TempDir dir;
  std::vector<FilePayload> files{{"config.json", "{}\n"},
                                 {"recs/m.tsv", "u\ti\t1\t1\n"}};
  write_artifacts({{"pipeline", "train"}}, files, {}, dir.file("run"));

  testutil::write_file(dir.file("run") + "/recs/m.tsv", "u\ti\t1\t2\n");
  CHECK_THROWS_AS(verify_artifacts(dir.file("run")), IoError);

  write_artifacts({{"pipeline", "train"}}, files, {}, dir.file("run2"));
  std::filesystem::remove(dir.path() / "run2" / "config.json");
  CHECK_THROWS_AS(verify_artifacts(dir.file("run2")), IoError);

  CHECK_THROWS_AS(verify_artifacts(dir.file("nowhere")), IoError);

  // preexisting files must exist to be digested
  CHECK_THROWS_AS(
      write_artifacts({{"pipeline", "train"}}, {}, {"checkpoints/m.ckpt"},
                      dir.file("run3")),
      IoError);
}

TEST_CASE("preexisting files join the manifest where they already live") {
  testutil::TempDir dir;
  std::string run = dir.file("run");
  std::filesystem::create_directories(run + "/checkpoints");
  testutil::write_file(run + "/checkpoints/m.ckpt", "blob");
  RunManifest manifest = write_artifacts(
      {{"pipeline", "train"}}, {{"config.json", "{}\n"}},
      {"checkpoints/m.ckpt"}, run);
  REQUIRE(manifest.json["artifacts"].size() == 2);
  CHECK(manifest.json["artifacts"][1]["path"] == "checkpoints/m.ckpt");
  CHECK_NOTHROW(verify_artifacts(run));
}

TEST_CASE("recommendation rows parse back rank-aligned and exact") {
  IdMap users, items;
  users.intern("alice");
  users.intern("bob");
  items.intern("x");
  items.intern("y");
  items.intern("z");

  RecommendationList recs;
  recs.cutoff = 3;
  // batch order deliberately reversed; output must sort by internal index
  recs.users = {1, 0};
  recs.items = {
      {{2, 0.75}, {0, 0.5}},
      {{0, 1.0 / 3.0}, {1, 0.25}, {2, 0.125}},
  };

  std::string tsv = render_recommendations_tsv(recs, users, items);
  std::istringstream in(tsv);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    REQUIRE(fields.size() == 4);
    rows.push_back(fields);
  }
  REQUIRE(rows.size() == 5);

  CHECK(rows[0][0] == "alice");
  CHECK(rows[0][1] == "x");
  CHECK(rows[0][2] == "1");
  CHECK(std::strtod(rows[0][3].c_str(), nullptr) == 1.0 / 3.0);  // %.17g exact
  CHECK(rows[1][1] == "y");
  CHECK(rows[2][1] == "z");
  CHECK(rows[3][0] == "bob");
  CHECK(rows[3][1] == "z");
  CHECK(rows[3][2] == "1");
  CHECK(rows[4][1] == "x");
  CHECK(rows[4][2] == "2");

  // per-user ranks count up from one and scores never increase
  std::string prev_user;
  int prev_rank = 0;
  double prev_score = 0.0;
  for (const auto& row : rows) {
    int rank = std::atoi(row[2].c_str());
    double score = std::strtod(row[3].c_str(), nullptr);
    if (row[0] == prev_user) {
      CHECK(rank == prev_rank + 1);
      CHECK(score <= prev_score);
    } else {
      CHECK(rank == 1);
    }
    prev_user = row[0];
    prev_rank = rank;
    prev_score = score;
  }

  testutil::TempDir dir;
  write_recommendations(recs, users, items, dir.file("r.tsv"));
  CHECK(testutil::read_file(dir.file("r.tsv")) == tsv);
  CHECK_THROWS_AS(
      write_recommendations(recs, users, items, dir.file("no/such/dir/r.tsv")),
      IoError);
}
