#include "astgcn/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace astgcn;
using namespace astgcn::pipeline;
namespace fs = std::filesystem;

namespace {

const std::string kFixtureConfig = "fixtures/dublin_small/config.json";

std::string scratch(const std::string& name) {
  fs::path p = fs::path(::testing::TempDir()) / ("pipeline_" + name);
  fs::remove_all(p);
  return p.string();
}

RunConfig fixture_config(const std::string& out) {
  RunConfig c = load_config(kFixtureConfig);
  c.out = out;
  return c;
}

std::string first_line(const std::string& path) {
  std::ifstream in(path);
  std::string l;
  std::getline(in, l);
  return l;
}

RunConfig tiny_synthetic(const std::string& out) {
  RunConfig c = RunConfig::preset(DatasetKind::Synthetic);
  c.synthetic.nodes = 4;
  c.synthetic.steps = 120;
  c.model.channels = {4, 3, 4};
  c.train.schedule.max_epochs = 1;
  c.train.patience = 1;
  c.out = out;
  return c;
}

}  // namespace

TEST(ConfigTest, PresetRoundTripAndPartialFiles) {
  for (auto kind : {DatasetKind::Dublin, DatasetKind::Nyc, DatasetKind::Synthetic}) {
    RunConfig c = RunConfig::preset(kind);
    nlohmann::json j = c;
    RunConfig back = j.get<RunConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(back.hash(), c.hash());
  }
  // Keys absent from the file keep the dataset preset.
  auto nyc = nlohmann::json{{"dataset", "nyc"}, {"model", {{"channels", {8, 4, 8}}}}}.get<RunConfig>();
  EXPECT_EQ(nyc.model.horizon, 12u);
  EXPECT_EQ(nyc.model.channels[0], 8u);
  EXPECT_EQ(nyc.train.schedule.initial_lr, 1e-4);
  EXPECT_EQ(nyc.split.kind, "weekly");
  EXPECT_EQ(nyc.target_channels(), 2u);
  auto dub = RunConfig::preset(DatasetKind::Dublin);
  EXPECT_EQ(data::FeatureSet::parse(dub.features).dim(1), 8u);
  EXPECT_EQ(dub.train.weight_decay, 1e-3);
}

TEST(ConfigTest, HashCoversEverythingButLocation) {
  RunConfig a = RunConfig::preset(DatasetKind::Synthetic);
  RunConfig b = a;
  b.out = "elsewhere";
  b.cache = "elsewhere/cache.bin";
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 64u);
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
  RunConfig c = a;
  c.model.attention = false;
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.data_hash(), c.data_hash());
  c.features = "AB+TD";
  EXPECT_NE(a.data_hash(), c.data_hash());
}

TEST(ConfigTest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ConfigTest, ValidationRaisesConfigErrors) {
  auto expect_config_error = [](RunConfig c) {
    try {
      c.validate();
      ADD_FAILURE() << "no error";
    } catch (const std::exception& e) {
      EXPECT_EQ(exit_code_for(e), kExitConfig) << e.what();
    }
  };
  RunConfig c = RunConfig::preset(DatasetKind::Synthetic);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.adjacency.kind = "fully_connected";
  expect_config_error(bad);
  bad = c;
  bad.split.train = 0.9;
  bad.split.val = 0.1;
  expect_config_error(bad);
  bad = c;
  bad.model.input_length = 8;  // two blocks with kernel 3 need 9 steps
  expect_config_error(bad);
  bad = c;
  bad.train.schedule.initial_lr = 0.0;
  expect_config_error(bad);
  bad = c;
  bad.features = "AB+XYZ";
  expect_config_error(bad);
  RunConfig dub = RunConfig::preset(DatasetKind::Dublin);
  dub.snapshots = "s.csv";
  expect_config_error(dub);  // weather features without a weather file
  EXPECT_THROW(nlohmann::json({{"dataset", "paris"}}).get<RunConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"model", {{"horizon", "three"}}}}).get<RunConfig>(), ConfigError);
}

TEST(ConfigTest, ExitCodesAreDistinct) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
  EXPECT_EQ(exit_code_for(data::DataError("x")), kExitData);
  EXPECT_EQ(exit_code_for(train::TrainingError("x")), kExitTraining);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), kExitOther);
  std::set<int> codes{kExitOk, kExitOther, kExitConfig, kExitData, kExitTraining};
  EXPECT_EQ(codes.size(), 5u);
}

TEST(IngestTest, FixtureCacheIsGoldenAndReused) {
  auto c = fixture_config(scratch("ingest"));
  auto r = cmd_ingest(c);
  EXPECT_FALSE(r.cache_hit);
  EXPECT_EQ(r.dataset.raw.nodes(), 3u);
  EXPECT_EQ(r.dataset.raw.steps(), 192u);
  EXPECT_EQ(r.dataset.raw.width(), 8u);
  // Frozen from the first build of the fixture cache.
  EXPECT_EQ(r.summary["cache_sha256"], "b8cf25b19d49cb896b50060dd26a3fdfd1d667702577bff7332496509ddfe62c");

  // Availability bin 0 of each station is the mean of its snapshots in [00:00, 00:15).
  std::ifstream in("fixtures/dublin_small/snapshots.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::pair<double, int>> acc;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string ts, id, bikes;
    std::getline(ss, ts, ',');
    std::getline(ss, id, ',');
    std::getline(ss, bikes, ',');
    if (data::parse_timestamp(ts) < r.dataset.raw.times[0] + 900) {
      acc[id].first += std::stod(bikes);
      acc[id].second += 1;
    }
  }
  auto ids = r.dataset.raw.station_ids();
  for (std::size_t n = 0; n < ids.size(); ++n) {
    ASSERT_EQ(acc[ids[n]].second, 3);
    EXPECT_NEAR(r.dataset.raw.at(0, n, 0), acc[ids[n]].first / 3.0, 1e-12);
  }

  auto again = cmd_ingest(c);
  EXPECT_TRUE(again.cache_hit);
  EXPECT_EQ(again.summary["cache_sha256"], r.summary["cache_sha256"]);
  // A different output directory rebuilds the identical cache.
  auto moved = cmd_ingest(fixture_config(scratch("ingest_moved")));
  EXPECT_FALSE(moved.cache_hit);
  EXPECT_EQ(moved.summary["cache_sha256"], r.summary["cache_sha256"]);
}

TEST(IngestTest, MalformedTimestampNamesTheRow) {
  std::string dir = scratch("bad_time");
  fs::create_directories(dir);
  {
    std::ifstream in("fixtures/dublin_small/snapshots.csv");
    std::ofstream out(dir + "/snapshots.csv");
    std::string line;
    for (int i = 1; std::getline(in, line); ++i) {
      if (i == 5) line = "2020-07-01 25:61:00" + line.substr(line.find(','));
      out << line << '\n';
    }
  }
  fs::copy_file("fixtures/dublin_small/weather.csv", dir + "/weather.csv");
  auto c = fixture_config(dir + "/run");
  c.snapshots = dir + "/snapshots.csv";
  c.weather = dir + "/weather.csv";
  try {
    cmd_ingest(c);
    FAIL() << "no error";
  } catch (const data::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("snapshots.csv:5:"), std::string::npos) << e.what();
  }
  c.snapshots = dir + "/missing.csv";
  EXPECT_THROW(cmd_ingest(c), data::DataError);
}

TEST(PipelineTest, TrainEvalReportCarryTheConfigHash) {
  std::string out = scratch("run");
  auto c = fixture_config(out);
  const std::string h = c.hash();
  auto tr = cmd_train(c);
  EXPECT_EQ(tr.result.log.size(), 2u);
  auto ckpt = model::Checkpoint::load(tr.checkpoint_path);
  EXPECT_EQ(ckpt.config_hash, h);
  EXPECT_EQ(ckpt.config.num_nodes, 3u);
  EXPECT_EQ(ckpt.config.input_dim, 8u);
  EXPECT_EQ(first_line(tr.log_path), "# config_hash: " + h);
  EXPECT_EQ(first_line(out + "/adjacency.csv"), "# config_hash: " + h);

  auto ev = cmd_eval(c, tr.checkpoint_path, data::Split::Test);
  EXPECT_NEAR(ev.report.station_weighted_mean(), ev.report.overall, 1e-9);
  EXPECT_EQ(ev.report.per_horizon.size(), 3u);
  EXPECT_EQ(first_line(out + "/stations_test.csv"), "# config_hash: " + h);
  std::ifstream gin(out + "/stations_test.geojson");
  auto geo = nlohmann::json::parse(gin);
  EXPECT_EQ(geo["config_hash"], h);
  EXPECT_EQ(geo["features"].size(), 3u);
  std::ifstream rin(ev.report_path);
  auto rep = nlohmann::json::parse(rin);
  EXPECT_EQ(rep["config_hash"], h);
  EXPECT_EQ(rep["mae"].get<double>(), ev.report.overall);

  // The best validation epoch's parameters are what was saved and evaluated.
  auto val = cmd_eval(c, tr.checkpoint_path, data::Split::Val);
  EXPECT_EQ(val.report.overall, tr.result.best_val_mae);

  auto other = c;
  other.seed = 4;
  EXPECT_THROW(cmd_eval(other, tr.checkpoint_path, data::Split::Test), ConfigError);

  auto summary = cmd_report(c, {ev.report_path});
  std::ifstream cin(summary["comparison_csv"].get<std::string>());
  std::string l;
  std::getline(cin, l);
  EXPECT_EQ(l, "# config_hash: " + h);
  std::getline(cin, l);
  std::getline(cin, l);
  EXPECT_EQ(l.substr(l.rfind(',') + 1), "0");
}

TEST(PipelineTest, TrainingIsReproducible) {
  auto a = cmd_train(tiny_synthetic(scratch("repro_a")));
  auto b = cmd_train(tiny_synthetic(scratch("repro_b")));
  EXPECT_EQ(a.checkpoint_sha256, b.checkpoint_sha256);
  EXPECT_EQ(a.summary["epoch_log_sha256"], b.summary["epoch_log_sha256"]);
}

TEST(CompareTest, DefaultMatrixHasTwelveCells) {
  auto c = RunConfig::preset(DatasetKind::Dublin);
  c.snapshots = "s.csv";
  c.weather = "w.csv";
  auto cells = compare_cells(c, false);
  ASSERT_EQ(cells.size(), 12u);
  std::set<std::string> dirs;
  for (const auto& cell : cells) dirs.insert(cell.dir);
  EXPECT_EQ(dirs.size(), 12u);
  EXPECT_EQ(cells[0].model, "ST-GCN");
  EXPECT_EQ(cells[0].adjacency, "euclidean");
  EXPECT_EQ(compare_cells(c, true).size(), eval::ablation_subsets().size());
}

TEST(CompareTest, RunsEveryCellAgainstTheBaseline) {
  auto c = tiny_synthetic(scratch("compare"));
  auto s = cmd_compare(c, false);
  ASSERT_EQ(s["cells"].size(), 12u);
  EXPECT_EQ(s["failed"], 0);
  std::ifstream in(s["comparison_csv"].get<std::string>());
  std::string l;
  std::vector<std::string> lines;
  while (std::getline(in, l)) lines.push_back(l);
  ASSERT_EQ(lines.size(), 14u);
  EXPECT_EQ(lines[2].substr(0, 22), "\"ST-GCN + euclidean\",S");
  EXPECT_EQ(lines[2].substr(lines[2].rfind(',') + 1), "0");
}

TEST(CompareTest, FailingCellsAreRecordedAndTheRestContinue) {
  // Trips without coordinates: the distance based cells cannot be built.
  std::string dir = scratch("nyc");
  fs::create_directories(dir);
  {
    std::ofstream out(dir + "/trips.csv");
    out << "pickup_station,dropoff_station,pickup_time,dropoff_time\n";
    data::Timestamp t0 = data::parse_timestamp("2020-07-01 00:00:00");
    for (int b = 0; b < 150; ++b)
      for (int s = 0; s < 3; ++s)
        for (int k = 0; k < 1 + (b + 2 * s) % 4; ++k) {
          data::Timestamp t = t0 + b * 1800 + 60 * k;
          out << s + 1 << ',' << (s + k) % 3 + 1 << ',' << data::format_timestamp(t) << ','
              << data::format_timestamp(t + 600) << '\n';
        }
  }
  RunConfig c = RunConfig::preset(DatasetKind::Nyc);
  c.trips = dir + "/trips.csv";
  c.split.kind = "fractional";
  c.top_k = 3;
  c.model.channels = {4, 3, 4};
  c.model.horizon = 3;
  c.train.schedule.max_epochs = 1;
  c.train.patience = 1;
  c.out = dir + "/run";
  auto s = cmd_compare(c, false);
  ASSERT_EQ(s["cells"].size(), 12u);
  EXPECT_EQ(s["failed"], 6);
  for (const auto& cell : s["cells"]) {
    std::string kind = cell["adjacency"];
    bool distance = kind == "euclidean" || kind == "geographic" || kind == "diaam";
    EXPECT_EQ(cell["ok"].get<bool>(), !distance) << kind;
    if (distance) EXPECT_NE(cell["error"].get<std::string>().find("coordinates"), std::string::npos);
  }
  EXPECT_TRUE(std::isnan(s["baseline_mae"].is_null() ? NAN : s["baseline_mae"].get<double>()));
}
