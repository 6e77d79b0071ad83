#pragma once

#include "astgcn/data.hpp"
#include "astgcn/graph.hpp"
#include "astgcn/model.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

namespace astgcn::eval {

// Predictions and ground truth in original units, row-major [B][n][N][c].
struct Forecast {
  std::size_t windows = 0, horizon = 0, nodes = 0, channels = 0;
  std::vector<double> pred;
  std::vector<double> truth;

  std::size_t index(std::size_t b, std::size_t h, std::size_t n, std::size_t c) const {
    return ((b * horizon + h) * nodes + n) * channels + c;
  }
};

// Runs the model over every window of `set` without recording gradients.
Forecast predict(const model::AstGcn& model, const graph::AdjacencyMatrix& adjacency,
                 const data::SampleSet& set, const data::Scaler& scaler, std::size_t batch_size = 64);

// Every horizon step is the mean of the m history values of the target
// channels. inputs [B, m, N, d] -> [B, n, N, c].
Tensor ha_forecast(const Tensor& inputs, std::size_t horizon, std::size_t channels);
Forecast ha_baseline(const data::SampleSet& set, const data::Scaler& scaler);

double mae(std::span<const double> pred, std::span<const double> truth);
double mae(const Tensor& pred, const Tensor& truth);

struct EvaluationReport {
  std::string model;
  std::string adjacency;
  std::string config_hash;
  double overall = 0.0;
  std::vector<double> per_horizon;
  std::vector<std::string> station_ids;
  std::vector<double> per_station;
  std::vector<std::size_t> station_counts;  // absolute errors behind each station MAE

  // Sample-count weighted mean of the per-station MAEs.
  double station_weighted_mean() const;
  nlohmann::json to_json() const;
};

EvaluationReport evaluate(const Forecast& f, const std::vector<std::string>& station_ids);

struct Histogram {
  double width = 0.25;
  std::vector<std::size_t> counts;  // bin k covers [k w, (k + 1) w)
};

inline constexpr double kHistogramBinWidth = 0.25;

Histogram histogram(const std::vector<double>& values, double width = kHistogramBinWidth);

// Station CSV (id, lat, lon, MAE), histogram CSV and GeoJSON points.
void write_station_csv(const std::string& path, const EvaluationReport& report,
                       const std::vector<graph::Station>& stations);
void write_histogram_csv(const std::string& path, const Histogram& h);
void write_station_geojson(const std::string& path, const EvaluationReport& report,
                           const std::vector<graph::Station>& stations);

// ---- experiment tables ----

struct ComparisonRow {
  std::string model;     // "ST-GCN" or "AST-GCN"
  std::string adjacency;
  std::string category;
  double mae = 0.0;
};

// Percent change of `mae` against `baseline`.
double percent_change(double mae, double baseline);
// Columns: model, category, MAE, pct_vs_baseline.
void write_comparison_csv(const std::string& path, const std::vector<ComparisonRow>& rows,
                          double baseline_mae);

struct AblationRow {
  std::string features;
  std::size_t dim = 0;
  double mae = 0.0;
  double reference = 0.0;
};

// Feature subsets in the order of the published ablation table.
std::vector<std::string> ablation_subsets();
// Published MAE for each subset, same order.
std::vector<double> ablation_reference();
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

struct PublishedComparison {
  std::string model, adjacency, category;
  double mae;
};
// The published Dublin comparison (8 rows; baseline first).
std::vector<PublishedComparison> published_comparison();
inline constexpr double kPublishedHaNyc = 3.4617;

}  // namespace astgcn::eval
