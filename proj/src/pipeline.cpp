#include "astgcn/pipeline.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;

namespace astgcn::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string resolve(const RunConfig& c, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || c.base_dir.empty()) return p;
  return (fs::path(c.base_dir) / p).string();
}

std::string model_name(bool attention) { return attention ? "AST-GCN" : "ST-GCN"; }

// Category labels as printed in the published comparison table.
std::string table_category(const std::string& kind) {
  if (kind == "euclidean" || kind == "geographic") return "S";
  if (kind == "pearson") return "T";
  if (kind == "st_embedding") return "ST";
  if (kind == "diaam") return "S+A";
  if (kind == "eaam") return "ST+A";
  return "?";
}

std::array<data::SampleSet, 3> windows_or_throw(const data::Dataset& ds, std::size_t m, std::size_t n) {
  try {
    return ds.windows(m, n);
  } catch (const std::invalid_argument& e) {
    throw data::DataError(e.what());
  }
}

nlohmann::json without_location(const RunConfig& c) {
  nlohmann::json j = c;
  j.erase("out");
  j.erase("cache");
  return j;
}

std::string cache_path(const RunConfig& c) {
  return c.cache.empty() ? (fs::path(c.out) / "dataset.bin").string() : c.cache;
}

void stamp_json_file(const std::string& path, const std::string& hash) {
  std::ifstream in(path);
  auto j = nlohmann::json::parse(in);
  j["config_hash"] = hash;
  in.close();
  write_json(path, j);
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const data::DataError*>(&e)) return kExitData;
  if (dynamic_cast<const train::TrainingError*>(&e)) return kExitTraining;
  return kExitOther;
}

std::string dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Dublin: return "dublin";
    case DatasetKind::Nyc: return "nyc";
    case DatasetKind::Synthetic: return "synthetic";
  }
  return "?";
}

DatasetKind parse_dataset(const std::string& name) {
  if (name == "dublin") return DatasetKind::Dublin;
  if (name == "nyc") return DatasetKind::Nyc;
  if (name == "synthetic") return DatasetKind::Synthetic;
  throw ConfigError("unknown dataset '" + name + "' (dublin, nyc or synthetic)");
}

// ---------------------------------------------------------------------------

RunConfig RunConfig::preset(DatasetKind kind) {
  RunConfig c;
  c.dataset = kind;
  switch (kind) {
    case DatasetKind::Dublin:
      c.features = "AB+TD+WD+WCD";
      c.bin_seconds = 900;
      c.adjacency.kind = "eaam";
      c.model.horizon = 3;
      c.train.schedule.kind = train::ScheduleKind::Cosine;
      c.train.schedule.initial_lr = 1e-3;
      c.train.weight_decay = 1e-3;
      break;
    case DatasetKind::Nyc:
      c.features = "AB";
      c.bin_seconds = 1800;
      c.split.kind = "weekly";
      c.adjacency.kind = "eaam";
      c.model.horizon = 12;
      c.train.schedule.kind = train::ScheduleKind::Step;
      c.train.schedule.initial_lr = 1e-4;
      c.train.weight_decay = 0.0;
      break;
    case DatasetKind::Synthetic:
      c.features = "AB";
      c.bin_seconds = 900;
      c.adjacency.kind = "eaam";
      c.model.horizon = 3;
      break;
  }
  return c;
}

std::size_t RunConfig::target_channels() const { return dataset == DatasetKind::Nyc ? 2 : 1; }

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  data::FeatureSet fset;
  try {
    fset = data::FeatureSet::parse(features);
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (bin_seconds <= 0) fail("bin_seconds must be > 0");
  if (!(max_missing >= 0.0 && max_missing <= 1.0)) fail("max_missing must be in [0, 1]");
  if (top_k == 0) fail("top_k must be >= 1");
  if (split.kind == "fractional") {
    if (!(split.train > 0.0 && split.val > 0.0 && split.train + split.val < 1.0)) {
      fail("split fractions must be positive and leave a test share");
    }
  } else if (split.kind != "weekly") {
    fail("split.kind must be fractional or weekly");
  }
  if (dataset == DatasetKind::Synthetic) {
    if (synthetic.nodes == 0 || synthetic.steps == 0) fail("synthetic nodes and steps must be >= 1");
    if (!(synthetic.period > 0.0)) fail("synthetic period must be > 0");
  }
  if (dataset == DatasetKind::Dublin && snapshots.empty()) fail("inputs.snapshots is required for dublin");
  if (dataset == DatasetKind::Nyc && trips.empty()) fail("inputs.trips is required for nyc");
  if (dataset != DatasetKind::Synthetic && fset.needs_weather() && weather.empty()) {
    fail("features " + features + " need inputs.weather");
  }

  const auto& a = adjacency;
  if (std::find(kAdjacencyKinds.begin(), kAdjacencyKinds.end(), a.kind) == kAdjacencyKinds.end()) {
    fail("unknown adjacency kind '" + a.kind + "'");
  }
  if (!(a.sigma > 0.0) || !(a.st_sigma > 0.0)) fail("adjacency sigmas must be > 0");
  if (!(a.epsilon >= 0.0 && a.epsilon < 1.0)) fail("adjacency epsilon must be in [0, 1)");
  if (!(a.pearson_threshold >= 0.0 && a.pearson_threshold <= 1.0)) fail("pearson_threshold must be in [0, 1]");
  if (a.st_dim == 0 || a.eaam_dim == 0) fail("embedding sizes must be >= 1");

  model::ModelConfig mc = model;
  mc.num_nodes = 1;
  mc.output_dim = target_channels();
  mc.input_dim = fset.dim(target_channels());
  try {
    mc.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (out.empty()) fail("out must not be empty");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json m = c.model;
  for (const char* k : {"num_nodes", "input_dim", "output_dim"}) m.erase(k);
  nlohmann::json t = c.train;
  t.erase("seed");
  const auto& s = c.synthetic;
  j = nlohmann::json{
      {"dataset", dataset_name(c.dataset)},
      {"inputs", {{"snapshots", c.snapshots}, {"trips", c.trips}, {"weather", c.weather}, {"wcd_mapping", c.wcd_mapping}}},
      {"features", c.features},
      {"bin_seconds", c.bin_seconds},
      {"max_missing", c.max_missing},
      {"top_k", c.top_k},
      {"split", {{"kind", c.split.kind}, {"train", c.split.train}, {"val", c.split.val}}},
      {"synthetic",
       {{"nodes", s.nodes}, {"steps", s.steps}, {"period", s.period}, {"amplitude", s.amplitude},
        {"offset", s.offset}, {"noise", s.noise}, {"start", data::format_timestamp(s.start)}}},
      {"adjacency",
       {{"kind", c.adjacency.kind}, {"sigma", c.adjacency.sigma}, {"epsilon", c.adjacency.epsilon},
        {"pearson_threshold", c.adjacency.pearson_threshold}, {"st_dim", c.adjacency.st_dim},
        {"st_sigma", c.adjacency.st_sigma}, {"eaam_dim", c.adjacency.eaam_dim}}},
      {"model", m},
      {"train", t},
      {"seed", c.seed},
      {"out", c.out},
      {"cache", c.cache}};
}

void from_json(const nlohmann::json& in, RunConfig& c) {
  // Start from the dataset preset and patch in whatever the file sets.
  DatasetKind kind = parse_dataset(in.value("dataset", std::string("synthetic")));
  RunConfig base = RunConfig::preset(kind);
  nlohmann::json j = base;
  j.merge_patch(in);
  try {
    c = RunConfig{};
    c.dataset = kind;
    const auto& inputs = j.at("inputs");
    c.snapshots = inputs.value("snapshots", "");
    c.trips = inputs.value("trips", "");
    c.weather = inputs.value("weather", "");
    c.wcd_mapping = inputs.value("wcd_mapping", "");
    c.features = j.at("features").get<std::string>();
    c.bin_seconds = j.at("bin_seconds").get<std::int64_t>();
    c.max_missing = j.at("max_missing").get<double>();
    c.top_k = j.at("top_k").get<std::size_t>();
    const auto& sp = j.at("split");
    c.split = {sp.at("kind").get<std::string>(), sp.at("train").get<double>(), sp.at("val").get<double>()};
    const auto& sy = j.at("synthetic");
    c.synthetic.nodes = sy.at("nodes").get<std::size_t>();
    c.synthetic.steps = sy.at("steps").get<std::size_t>();
    c.synthetic.period = sy.at("period").get<double>();
    c.synthetic.amplitude = sy.at("amplitude").get<double>();
    c.synthetic.offset = sy.at("offset").get<double>();
    c.synthetic.noise = sy.at("noise").get<double>();
    c.synthetic.start = data::parse_timestamp(sy.at("start").get<std::string>());
    c.synthetic.bin_seconds = c.bin_seconds;
    const auto& a = j.at("adjacency");
    c.adjacency.kind = a.at("kind").get<std::string>();
    c.adjacency.sigma = a.at("sigma").get<double>();
    c.adjacency.epsilon = a.at("epsilon").get<double>();
    c.adjacency.pearson_threshold = a.at("pearson_threshold").get<double>();
    c.adjacency.st_dim = a.at("st_dim").get<std::size_t>();
    c.adjacency.st_sigma = a.at("st_sigma").get<double>();
    c.adjacency.eaam_dim = a.at("eaam_dim").get<std::size_t>();
    c.model = j.at("model").get<model::ModelConfig>();
    c.train = j.at("train").get<train::TrainConfig>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.train.seed = c.seed;
    c.out = j.at("out").get<std::string>();
    c.cache = j.at("cache").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
  RunConfig c = j.get<RunConfig>();
  c.base_dir = fs::absolute(path).parent_path().string();
  return c;
}

std::string RunConfig::hash() const { return sha256_hex(without_location(*this).dump()); }

std::string RunConfig::data_hash() const {
  nlohmann::json j = without_location(*this);
  nlohmann::json d{{"dataset", j["dataset"]},       {"features", j["features"]},
                   {"bin_seconds", j["bin_seconds"]}, {"split", j["split"]},
                   {"cache_version", 1}};
  if (dataset == DatasetKind::Synthetic) {
    d["synthetic"] = j["synthetic"];
    d["seed"] = seed;
  }
  if (dataset == DatasetKind::Dublin) d["max_missing"] = max_missing;
  if (dataset == DatasetKind::Nyc) d["top_k"] = top_k;
  // Input files enter by content so the hash does not depend on where they live.
  for (const auto& [key, p] : {std::pair{"snapshots", snapshots}, std::pair{"trips", trips},
                               std::pair{"weather", weather}, std::pair{"wcd_mapping", wcd_mapping}}) {
    std::string full = resolve(*this, p);
    if (!p.empty() && fs::exists(full)) d["files"][key] = sha256_file(full);
  }
  return sha256_hex(d.dump());
}

// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return out.str();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

void stamp_csv(const std::string& path, const std::string& hash) {
  std::string body;
  {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    body = buf.str();
  }
  std::ofstream out(path);
  out << "# config_hash: " << hash << '\n' << body;
}

// ---------------------------------------------------------------------------

IngestResult cmd_ingest(const RunConfig& config) {
  config.validate();
  auto t0 = Clock::now();
  fs::create_directories(config.out);
  IngestResult r;
  r.cache_path = cache_path(config);
  if (!fs::path(r.cache_path).parent_path().empty()) fs::create_directories(fs::path(r.cache_path).parent_path());
  for (const auto& p : {config.snapshots, config.trips, config.weather, config.wcd_mapping}) {
    if (!p.empty() && !fs::exists(resolve(config, p))) throw data::DataError("missing input file " + resolve(config, p));
  }
  const std::string dhash = config.data_hash();

  if (auto cached = data::load_cache(r.cache_path, dhash)) {
    r.dataset = std::move(*cached);
    r.cache_hit = true;
    spdlog::info("dataset cache hit: {}", r.cache_path);
  } else {
    auto fset = data::FeatureSet::parse(config.features);
    data::StationPanel base;
    std::vector<data::WeatherRecord> weather;
    data::SyntheticSpec spec = config.synthetic;
    spec.bin_seconds = config.bin_seconds;
    try {
      switch (config.dataset) {
        case DatasetKind::Synthetic:
          base = data::synthetic_sinusoid(spec, config.seed);
          if (fset.needs_weather()) weather = data::synthetic_weather(spec, config.seed);
          break;
        case DatasetKind::Dublin:
          base = data::aggregate_availability(data::read_snapshots(resolve(config, config.snapshots)),
                                              config.bin_seconds, config.max_missing, &r.dropped_stations);
          break;
        case DatasetKind::Nyc:
          base = data::trips_to_demand(data::read_trips(resolve(config, config.trips)), config.bin_seconds,
                                       config.top_k);
          break;
      }
      if (fset.needs_weather() && config.dataset != DatasetKind::Synthetic) {
        weather = data::read_weather(resolve(config, config.weather));
      }
      data::WcdMapping mapping = data::WcdMapping::defaults();
      if (!config.wcd_mapping.empty()) {
        std::ifstream in(resolve(config, config.wcd_mapping));
        mapping = data::WcdMapping::from_json(nlohmann::json::parse(in));
      }
      auto encoded = data::encode_features(base, weather, fset, mapping);
      auto bounds = config.split.kind == "weekly"
                        ? data::weekly_split(encoded.steps(), config.bin_seconds)
                        : data::fractional_split(encoded.steps(), config.split.train, config.split.val);
      r.dataset = data::make_dataset(std::move(encoded), bounds, config.target_channels(), config.bin_seconds);
    } catch (const std::invalid_argument& e) {
      throw data::DataError(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw data::DataError(std::string("wcd mapping: ") + e.what());
    }
    r.dataset.config_hash = dhash;
    data::save_cache(r.cache_path, r.dataset);
    spdlog::info("dataset cached: {}", r.cache_path);
  }

  const auto& ds = r.dataset;
  nlohmann::json splits;
  for (auto s : {data::Split::Train, data::Split::Val, data::Split::Test}) {
    std::size_t len = ds.bounds.length(s);
    std::size_t need = config.model.input_length + config.model.horizon;
    splits[data::split_name(s)] = {{"steps", len}, {"windows", len >= need ? len - need + 1 : 0}};
  }
  r.summary = {{"command", "ingest"},
               {"config_hash", config.hash()},
               {"data_hash", dhash},
               {"cache", r.cache_path},
               {"cache_sha256", sha256_file(r.cache_path)},
               {"cache_hit", r.cache_hit},
               {"stations", ds.raw.nodes()},
               {"stations_dropped", r.dropped_stations},
               {"steps", ds.raw.steps()},
               {"channels", ds.raw.channels},
               {"first_bin", ds.raw.times.empty() ? "" : data::format_timestamp(ds.raw.times.front())},
               {"splits", splits},
               {"seconds", seconds_since(t0)}};
  write_json((fs::path(config.out) / "ingest.json").string(), r.summary);
  return r;
}

model::ModelConfig resolved_model_config(const RunConfig& config, const data::Dataset& ds) {
  model::ModelConfig mc = config.model;
  mc.num_nodes = ds.raw.nodes();
  mc.input_dim = ds.raw.width();
  mc.output_dim = ds.target_channels;
  return mc;
}

graph::AdjacencyMatrix build_adjacency(const RunConfig& config, const data::Dataset& ds) {
  const auto& a = config.adjacency;
  auto distance_based = [&](graph::DistanceMetric metric) {
    if (!ds.raw.has_coordinates) {
      throw data::DataError("adjacency '" + a.kind + "' needs station coordinates, which the input lacks");
    }
    graph::StationGraph g(ds.raw.stations);
    graph::Matrix d = graph::distance_matrix(g, metric);
    if (metric == graph::DistanceMetric::GreatCircleKm && d.maxCoeff() > 0.0) d /= d.maxCoeff();
    return graph::AdjacencyMatrix::fixed(graph::gaussian_kernel(d, a.sigma, a.epsilon), graph::Category::S);
  };
  // Correlation-type adjacencies only see the training steps.
  auto train_series = [&] { return ds.raw.slice_steps(0, ds.bounds.train_end).series(0); };

  if (a.kind == "euclidean") return distance_based(graph::DistanceMetric::EuclideanNormalized);
  if (a.kind == "geographic") return distance_based(graph::DistanceMetric::GreatCircleKm);
  if (a.kind == "pearson") {
    return graph::AdjacencyMatrix::fixed(graph::pearson_weights(train_series(), a.pearson_threshold),
                                         graph::Category::T);
  }
  if (a.kind == "st_embedding") {
    return graph::AdjacencyMatrix::fixed(graph::st_embedding(train_series(), a.st_dim, a.st_sigma).weights,
                                         graph::Category::ST);
  }
  if (a.kind == "diaam") return graph::AdjacencyMatrix::diaam(distance_based(graph::DistanceMetric::EuclideanNormalized));
  if (a.kind == "eaam") {
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    return graph::AdjacencyMatrix::eaam(ds.raw.nodes(), rng, a.eaam_dim);
  }
  throw ConfigError("unknown adjacency kind '" + a.kind + "'");
}

nlohmann::json adjacency_to_json(const AdjacencySpec& spec, const graph::AdjacencyMatrix& adj) {
  nlohmann::json j{{"kind", spec.kind},
                   {"category", graph::category_label(adj.category())},
                   {"nodes", adj.size()},
                   {"trainable", adj.trainable()}};
  if (spec.kind == "eaam") j["embedding_dim"] = spec.eaam_dim;
  if (!adj.trainable()) {
    graph::Matrix w = adj.values();
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      std::vector<double> row(w.row(i).data(), w.row(i).data() + w.cols());
      rows.push_back(row);
    }
    j["weights"] = rows;
  }
  return j;
}

graph::AdjacencyMatrix adjacency_from_checkpoint(const model::Checkpoint& ckpt) {
  const auto& j = ckpt.adjacency;
  try {
    std::string kind = j.at("kind").get<std::string>();
    std::size_t n = j.at("nodes").get<std::size_t>();
    auto fixed_from_json = [&](graph::Category cat) {
      const auto& rows = j.at("weights");
      graph::Matrix w(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) w(i, k) = rows.at(i).at(k).get<double>();
      return graph::AdjacencyMatrix::fixed(std::move(w), cat);
    };
    graph::AdjacencyMatrix adj = [&] {
      if (kind == "euclidean" || kind == "geographic") return fixed_from_json(graph::Category::S);
      if (kind == "pearson") return fixed_from_json(graph::Category::T);
      if (kind == "st_embedding") return fixed_from_json(graph::Category::ST);
      if (kind == "diaam") {
        return graph::AdjacencyMatrix::diaam(graph::AdjacencyMatrix::fixed(graph::Matrix::Zero(n, n), graph::Category::S));
      }
      if (kind == "eaam") {
        std::size_t e = j.at("embedding_dim").get<std::size_t>();
        return graph::AdjacencyMatrix::eaam(Tensor::zeros({n, e}), Tensor::zeros({n, e}));
      }
      throw ConfigError("checkpoint has unknown adjacency kind '" + kind + "'");
    }();
    if (adj.trainable()) model::load_parameters(adj.parameters(), ckpt.parameters);
    return adj;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint adjacency: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

TrainOutcome cmd_train(const RunConfig& config) {
  auto t0 = Clock::now();
  auto ing = cmd_ingest(config);
  const auto& ds = ing.dataset;
  const std::string hash = config.hash();
  auto mc = resolved_model_config(config, ds);
  auto sets = windows_or_throw(ds, mc.input_length, mc.horizon);
  auto adj = build_adjacency(config, ds);
  model::AstGcn net(mc, config.seed);
  train::TrainConfig tc = config.train;
  tc.seed = config.seed;
  spdlog::info("training {} + {} on {} stations, {} train / {} val windows, {} parameters",
               model_name(mc.attention), config.adjacency.kind, mc.num_nodes, sets[0].size(), sets[1].size(),
               net.parameter_count());

  TrainOutcome out;
  out.result = train::fit(net, adj, sets[0], sets[1], ds.scaler, tc);
  const auto& res = out.result;

  model::Checkpoint ckpt;
  ckpt.config = mc;
  ckpt.config_hash = hash;
  ckpt.adjacency = adjacency_to_json(config.adjacency, adj);
  ckpt.scaler = ds.scaler.to_json();
  ckpt.parameters = train::trainable_parameters(net, adj);
  ckpt.optimizer = res.optimizer.to_json();
  ckpt.extra = {{"run_config", without_location(config)},
                {"data_hash", ds.config_hash},
                {"best_epoch", res.best_epoch},
                {"best_val_mae", res.best_val_mae},
                {"stop_reason", res.stop_reason},
                {"diverged", res.diverged}};
  fs::path dir(config.out);
  out.checkpoint_path = (dir / "checkpoint.json").string();
  ckpt.save(out.checkpoint_path);
  out.checkpoint_sha256 = sha256_file(out.checkpoint_path);

  out.log_path = (dir / "epochs.csv").string();
  train::write_epoch_log(out.log_path, res.log);
  stamp_csv(out.log_path, hash);
  std::string adj_path = (dir / "adjacency.csv").string();
  graph::write_adjacency_csv(adj_path, ds.raw.station_ids(), adj.values());
  stamp_csv(adj_path, hash);

  out.summary = {{"command", "train"},
                 {"config_hash", hash},
                 {"model", model_name(mc.attention)},
                 {"adjacency", config.adjacency.kind},
                 {"features", config.features},
                 {"stations", mc.num_nodes},
                 {"parameters", net.parameter_count()},
                 {"epochs", res.log.size()},
                 {"best_epoch", res.best_epoch},
                 {"best_val_mae", res.best_val_mae},
                 {"stop_reason", res.stop_reason},
                 {"diverged", res.diverged},
                 {"checkpoint", out.checkpoint_path},
                 {"checkpoint_sha256", out.checkpoint_sha256},
                 {"epoch_log", out.log_path},
                 {"epoch_log_sha256", sha256_file(out.log_path)},
                 {"seconds", seconds_since(t0)}};
  write_json((dir / "train.json").string(), out.summary);
  if (res.diverged) throw train::TrainingError("training diverged: " + res.stop_reason);
  return out;
}

EvalOutcome cmd_eval(const RunConfig& config, const std::string& checkpoint_path, data::Split split) {
  auto t0 = Clock::now();
  const std::string hash = config.hash();
  model::Checkpoint ckpt;
  try {
    ckpt = model::Checkpoint::load(checkpoint_path);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(checkpoint_path + ": " + e.what());
  }
  if (ckpt.config_hash != hash) {
    throw ConfigError("checkpoint " + checkpoint_path + " was trained under config " + ckpt.config_hash +
                      ", the supplied config hashes to " + hash);
  }
  auto ing = cmd_ingest(config);
  const auto& ds = ing.dataset;
  if (ds.raw.nodes() != ckpt.config.num_nodes || ds.raw.width() != ckpt.config.input_dim) {
    throw data::DataError("dataset shape does not match the checkpoint");
  }
  model::AstGcn net(ckpt.config, 0);
  model::load_parameters(net.parameters(), ckpt.parameters);
  auto adj = adjacency_from_checkpoint(ckpt);
  auto scaler = data::Scaler::from_json(ckpt.scaler);
  auto sets = windows_or_throw(ds, ckpt.config.input_length, ckpt.config.horizon);
  const auto& set = sets[static_cast<std::size_t>(split)];
  if (set.size() == 0) throw data::DataError(data::split_name(split) + " split has no windows");

  EvalOutcome out;
  auto ids = ds.raw.station_ids();
  out.report = eval::evaluate(eval::predict(net, adj, set, scaler, config.train.eval_batch_size), ids);
  out.report.model = model_name(ckpt.config.attention);
  out.report.adjacency = config.adjacency.kind;
  out.report.config_hash = hash;
  out.baseline = eval::evaluate(eval::ha_baseline(set, scaler), ids);
  out.baseline.model = "HA";
  out.baseline.config_hash = hash;

  fs::path dir(config.out);
  fs::create_directories(dir);
  std::string tag = data::split_name(split);
  nlohmann::json report = out.report.to_json();
  report["split"] = tag;
  report["features"] = config.features;
  report["windows"] = set.size();
  report["checkpoint_sha256"] = sha256_file(checkpoint_path);
  report["baseline"] = {{"model", "HA"}, {"mae", out.baseline.overall}, {"per_horizon", out.baseline.per_horizon}};
  out.report_path = (dir / ("report_" + tag + ".json")).string();
  write_json(out.report_path, report);

  std::string station_csv = (dir / ("stations_" + tag + ".csv")).string();
  std::string hist_csv = (dir / ("station_histogram_" + tag + ".csv")).string();
  eval::write_station_csv(station_csv, out.report, ds.raw.stations);
  stamp_csv(station_csv, hash);
  eval::write_histogram_csv(hist_csv, eval::histogram(out.report.per_station));
  stamp_csv(hist_csv, hash);
  std::string geojson;
  if (ds.raw.has_coordinates) {
    geojson = (dir / ("stations_" + tag + ".geojson")).string();
    eval::write_station_geojson(geojson, out.report, ds.raw.stations);
    stamp_json_file(geojson, hash);
  }
  out.summary = {{"command", "eval"},
                 {"config_hash", hash},
                 {"split", tag},
                 {"model", out.report.model},
                 {"adjacency", out.report.adjacency},
                 {"mae", out.report.overall},
                 {"per_horizon", out.report.per_horizon},
                 {"ha_mae", out.baseline.overall},
                 {"report", out.report_path},
                 {"station_csv", station_csv},
                 {"histogram_csv", hist_csv},
                 {"geojson", geojson},
                 {"seconds", seconds_since(t0)}};
  write_json((dir / ("eval_" + tag + ".json")).string(), out.summary);
  spdlog::info("{} + {} {} MAE {:.4f} (HA {:.4f})", out.report.model, out.report.adjacency, tag,
               out.report.overall, out.baseline.overall);
  return out;
}

nlohmann::json cmd_report(const RunConfig& config, const std::vector<std::string>& report_paths) {
  if (report_paths.empty()) throw ConfigError("report: no report files given");
  const std::string hash = config.hash();
  std::vector<eval::ComparisonRow> rows;
  std::vector<std::vector<double>> horizons;
  double baseline = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : report_paths) {
    std::ifstream in(p);
    if (!in) throw data::DataError("cannot open report " + p);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      rows.push_back({j.at("model").get<std::string>(), j.at("adjacency").get<std::string>(),
                      table_category(j.at("adjacency").get<std::string>()), j.at("mae").get<double>()});
      horizons.push_back(j.at("per_horizon").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw data::DataError(p + ": " + e.what());
    }
    if (rows.back().model == "ST-GCN" && rows.back().adjacency == "euclidean") baseline = rows.back().mae;
  }
  if (std::isnan(baseline)) {
    spdlog::warn("no ST-GCN + euclidean report; percentages are relative to the first report");
    baseline = rows.front().mae;
  }
  fs::path dir(config.out);
  fs::create_directories(dir);
  std::string cmp = (dir / "comparison.csv").string();
  eval::write_comparison_csv(cmp, rows, baseline);
  stamp_csv(cmp, hash);
  std::string hz = (dir / "horizons.csv").string();
  {
    std::ofstream out(hz);
    out << std::setprecision(17) << "# config_hash: " << hash << "\nmodel,adjacency,horizon,mae\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t h = 0; h < horizons[i].size(); ++h)
        out << rows[i].model << ',' << rows[i].adjacency << ',' << h + 1 << ',' << horizons[i][h] << '\n';
  }
  nlohmann::json summary{{"command", "report"}, {"config_hash", hash}, {"reports", report_paths},
                         {"baseline_mae", baseline}, {"comparison_csv", cmp}, {"horizons_csv", hz}};
  write_json((dir / "report.json").string(), summary);
  return summary;
}

std::vector<CompareCell> compare_cells(const RunConfig& config, bool ablation) {
  config.validate();
  std::vector<CompareCell> cells;
  fs::path dir(config.out);
  if (ablation) {
    for (const auto& f : eval::ablation_subsets()) {
      std::string name = f;
      std::replace(name.begin(), name.end(), '+', '_');
      cells.push_back({model_name(config.model.attention), config.adjacency.kind, f,
                       (dir / "cells" / name).string(), false, 0.0, {}});
    }
  } else {
    for (bool attention : {false, true})
      for (const auto& kind : kAdjacencyKinds)
        cells.push_back({model_name(attention), kind, config.features,
                         (dir / "cells" / (model_name(attention) + "_" + kind)).string(), false, 0.0, {}});
  }
  return cells;
}

nlohmann::json cmd_compare(const RunConfig& config, bool ablation) {
  auto t0 = Clock::now();
  auto cells = compare_cells(config, ablation);
  fs::path dir(config.out);
  fs::create_directories(dir);
  const std::string hash = config.hash();
  for (auto& cell : cells) {
    RunConfig c = config;
    c.model.attention = cell.model == "AST-GCN";
    c.adjacency.kind = cell.adjacency;
    c.features = cell.features;
    c.out = cell.dir;
    // Cells that share the feature set share one dataset cache.
    if (!ablation) c.cache = (dir / "dataset.bin").string();
    spdlog::info("compare cell {} + {} [{}]", cell.model, cell.adjacency, cell.features);
    try {
      auto tr = cmd_train(c);
      auto ev = cmd_eval(c, tr.checkpoint_path, data::Split::Test);
      cell.mae = ev.report.overall;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
      spdlog::error("cell {} + {} failed: {}", cell.model, cell.adjacency, e.what());
    }
  }

  nlohmann::json jcells = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json jc{{"model", c.model}, {"adjacency", c.adjacency}, {"features", c.features},
                      {"dir", c.dir},     {"ok", c.ok}};
    if (c.ok) jc["mae"] = c.mae;
    else jc["error"] = c.error;
    jcells.push_back(jc);
  }
  nlohmann::json summary{{"command", ablation ? "compare --ablation" : "compare"},
                         {"config_hash", hash},
                         {"cells", jcells},
                         {"failed", std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; })}};

  if (ablation) {
    auto ref = eval::ablation_reference();
    std::vector<eval::AblationRow> rows;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      rows.push_back({cells[i].features, data::FeatureSet::parse(cells[i].features).dim(config.target_channels()),
                      cells[i].ok ? cells[i].mae : std::numeric_limits<double>::quiet_NaN(), ref[i]});
    }
    std::string path = (dir / "ablation.csv").string();
    eval::write_ablation_csv(path, rows);
    stamp_csv(path, hash);
    summary["ablation_csv"] = path;
  } else {
    double baseline = std::numeric_limits<double>::quiet_NaN();
    std::vector<eval::ComparisonRow> rows;
    for (const auto& c : cells) {
      if (!c.ok) continue;
      rows.push_back({c.model, c.adjacency, table_category(c.adjacency), c.mae});
      if (c.model == "ST-GCN" && c.adjacency == "euclidean") baseline = c.mae;
    }
    std::string path = (dir / "comparison.csv").string();
    eval::write_comparison_csv(path, rows, baseline);
    stamp_csv(path, hash);
    summary["comparison_csv"] = path;
    summary["baseline_mae"] = baseline;
    nlohmann::json published = nlohmann::json::array();
    for (const auto& p : eval::published_comparison())
      published.push_back({{"model", p.model}, {"adjacency", p.adjacency}, {"category", p.category}, {"mae", p.mae}});
    summary["published_reference"] = published;
  }
  summary["seconds"] = seconds_since(t0);
  write_json((dir / "compare.json").string(), summary);
  return summary;
}

nlohmann::json cmd_synth(const RunConfig& config) {
  config.validate();
  fs::path dir(config.out);
  fs::create_directories(dir);
  data::SyntheticSpec spec = config.synthetic;
  spec.bin_seconds = config.bin_seconds;
  auto snaps = data::synthetic_snapshots(spec, config.seed);
  auto weather = data::synthetic_weather(spec, config.seed);
  std::string snap_path = (dir / "snapshots.csv").string();
  std::string weather_path = (dir / "weather.csv").string();
  data::write_snapshots(snap_path, snaps);
  data::write_weather(weather_path, weather);

  RunConfig dublin = RunConfig::preset(DatasetKind::Dublin);
  dublin.snapshots = "snapshots.csv";
  dublin.weather = "weather.csv";
  dublin.seed = config.seed;
  dublin.out = (dir / "run").string();
  std::string cfg_path = (dir / "config.json").string();
  write_json(cfg_path, dublin);
  nlohmann::json summary{{"command", "synth"},
                         {"config_hash", config.hash()},
                         {"snapshots", snap_path},
                         {"snapshot_rows", snaps.size()},
                         {"weather", weather_path},
                         {"weather_rows", weather.size()},
                         {"config", cfg_path}};
  write_json((dir / "synth.json").string(), summary);
  return summary;
}

}  // namespace astgcn::pipeline
