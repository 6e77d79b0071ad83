#pragma once

#include "astgcn/data.hpp"
#include "astgcn/eval.hpp"
#include "astgcn/graph.hpp"
#include "astgcn/model.hpp"
#include "astgcn/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace astgcn::pipeline {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitTraining = 4;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Maps an exception to the exit code reported for it.
int exit_code_for(const std::exception& e);

enum class DatasetKind { Dublin, Nyc, Synthetic };
std::string dataset_name(DatasetKind k);
DatasetKind parse_dataset(const std::string& name);

inline const std::vector<std::string> kAdjacencyKinds{"euclidean", "geographic", "pearson",
                                                      "st_embedding", "diaam", "eaam"};

struct AdjacencySpec {
  std::string kind = "euclidean";
  double sigma = 0.2;              // Gaussian kernel, distance based kinds
  double epsilon = 0.368;
  double pearson_threshold = 0.05;
  std::size_t st_dim = 20;
  double st_sigma = 1.0;
  std::size_t eaam_dim = graph::kEaamEmbeddingDim;
};

struct SplitSpec {
  std::string kind = "fractional";  // or "weekly"
  double train = 0.6;
  double val = 0.2;
};

struct RunConfig {
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string snapshots, trips, weather, wcd_mapping;  // input files
  std::string features = "AB";
  std::int64_t bin_seconds = 900;
  double max_missing = data::kMaxMissingFraction;
  std::size_t top_k = 250;
  SplitSpec split;
  data::SyntheticSpec synthetic;
  AdjacencySpec adjacency;
  model::ModelConfig model;  // shape fields are filled from the data
  train::TrainConfig train;  // train.seed follows `seed`
  std::uint64_t seed = 0;
  std::string out = "run";
  std::string cache;     // dataset cache file; defaults to <out>/dataset.bin
  std::string base_dir;  // relative input paths resolve here; not serialized

  // Defaults matching each dataset's published setup.
  static RunConfig preset(DatasetKind kind);

  // Throws ConfigError.
  void validate() const;
  std::size_t target_channels() const;
  // Hash over everything except `out` and `cache`, so moving a run does not
  // change it.
  std::string hash() const;
  // Hash over the fields and input files that determine the dataset.
  std::string data_hash() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Reads a JSON config; keys missing from the file keep the dataset preset.
RunConfig load_config(const std::string& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

struct IngestResult {
  data::Dataset dataset;
  bool cache_hit = false;
  std::string cache_path;
  std::vector<std::string> dropped_stations;
  nlohmann::json summary;
};

// Builds or reuses the cached dataset under `out`.
IngestResult cmd_ingest(const RunConfig& config);

// Adjacency named by config.adjacency.kind, built from the training split.
graph::AdjacencyMatrix build_adjacency(const RunConfig& config, const data::Dataset& ds);

// Kind and category, plus the weights for fixed kinds.
nlohmann::json adjacency_to_json(const AdjacencySpec& spec, const graph::AdjacencyMatrix& adj);
// Trainable kinds take their tensors from the checkpoint parameters.
graph::AdjacencyMatrix adjacency_from_checkpoint(const model::Checkpoint& ckpt);

model::ModelConfig resolved_model_config(const RunConfig& config, const data::Dataset& ds);

struct TrainOutcome {
  train::TrainResult result;
  std::string checkpoint_path;
  std::string checkpoint_sha256;
  std::string log_path;
  nlohmann::json summary;
};

TrainOutcome cmd_train(const RunConfig& config);

struct EvalOutcome {
  eval::EvaluationReport report;
  eval::EvaluationReport baseline;  // historical average on the same windows
  std::string report_path;
  nlohmann::json summary;
};

// Refuses a checkpoint whose config hash differs from `config`.
EvalOutcome cmd_eval(const RunConfig& config, const std::string& checkpoint_path, data::Split split);

// Collects report.json files into comparison and per-horizon tables.
nlohmann::json cmd_report(const RunConfig& config, const std::vector<std::string>& report_paths);

struct CompareCell {
  std::string model;      // "ST-GCN" or "AST-GCN"
  std::string adjacency;
  std::string features;
  std::string dir;
  bool ok = false;
  double mae = 0.0;
  std::string error;
};

// {ST-GCN, AST-GCN} x adjacency kinds, or the feature subsets of the
// ablation when `ablation` is set.
std::vector<CompareCell> compare_cells(const RunConfig& config, bool ablation);
// Trains and tests every cell. A failing cell is recorded and the rest still run.
nlohmann::json cmd_compare(const RunConfig& config, bool ablation);

// Writes synthetic snapshots and weather CSVs plus a matching config.
nlohmann::json cmd_synth(const RunConfig& config);

// Prepends "# config_hash: <hash>" to a CSV artifact.
void stamp_csv(const std::string& path, const std::string& hash);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace astgcn::pipeline
