#include "astgcn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

namespace astgcn::eval {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << std::setprecision(17);
  return out;
}

std::vector<std::size_t> all_windows(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> w(end - begin);
  std::iota(w.begin(), w.end(), begin);
  return w;
}

}  // namespace

Forecast predict(const model::AstGcn& model, const graph::AdjacencyMatrix& adjacency,
                 const data::SampleSet& set, const data::Scaler& scaler, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be >= 1");
  NoGradGuard guard;
  Forecast f;
  f.windows = set.size();
  f.horizon = set.horizon();
  f.nodes = set.nodes();
  f.channels = set.target_channels();
  auto basis = graph::chebyshev_basis(adjacency, model.config().cheb_order);
  for (std::size_t b = 0; b < f.windows; b += batch_size) {
    auto idx = all_windows(b, std::min(f.windows, b + batch_size));
    Tensor y = model.forward(set.inputs(idx), basis);
    Tensor t = set.targets(idx);
    f.pred.insert(f.pred.end(), y.values().begin(), y.values().end());
    f.truth.insert(f.truth.end(), t.values().begin(), t.values().end());
  }
  for (std::size_t i = 0; i < f.pred.size(); ++i) {
    std::size_t c = i % f.channels;
    f.pred[i] = scaler.invert_value(f.pred[i], c);
    f.truth[i] = scaler.invert_value(f.truth[i], c);
  }
  return f;
}

Tensor ha_forecast(const Tensor& inputs, std::size_t horizon, std::size_t channels) {
  if (inputs.rank() != 4 || inputs.dim(1) == 0) throw std::invalid_argument("ha_forecast: empty history");
  if (horizon == 0 || channels == 0 || channels > inputs.dim(3)) {
    throw std::invalid_argument("ha_forecast: horizon and channels must be in range");
  }
  std::size_t batch = inputs.dim(0), m = inputs.dim(1), nodes = inputs.dim(2), d = inputs.dim(3);
  std::vector<double> out(batch * horizon * nodes * channels);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < m; ++t) s += inputs.values()[((b * m + t) * nodes + n) * d + c];
        double mean = s / static_cast<double>(m);
        for (std::size_t h = 0; h < horizon; ++h) out[((b * horizon + h) * nodes + n) * channels + c] = mean;
      }
  return Tensor::from({batch, horizon, nodes, channels}, std::move(out));
}

Forecast ha_baseline(const data::SampleSet& set, const data::Scaler& scaler) {
  Forecast f;
  f.windows = set.size();
  f.horizon = set.horizon();
  f.nodes = set.nodes();
  f.channels = set.target_channels();
  const std::size_t chunk = 256;
  for (std::size_t b = 0; b < f.windows; b += chunk) {
    auto idx = all_windows(b, std::min(f.windows, b + chunk));
    Tensor x = set.inputs(idx);
    // Mean of the history in original units.
    std::vector<double> raw(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = scaler.invert_value(raw[i], i % set.features());
    Tensor y = ha_forecast(Tensor::from(x.shape(), std::move(raw)), f.horizon, f.channels);
    Tensor t = set.targets(idx);
    f.pred.insert(f.pred.end(), y.values().begin(), y.values().end());
    for (std::size_t i = 0; i < t.numel(); ++i) f.truth.push_back(scaler.invert_value(t.values()[i], i % f.channels));
  }
  return f;
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("mae: " + std::to_string(pred.size()) + " predictions vs " +
                                std::to_string(truth.size()) + " targets");
  }
  if (pred.empty()) throw std::invalid_argument("mae: no values");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double mae(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mae: shapes " + to_string(pred.shape()) + " and " + to_string(truth.shape()) + " differ");
  }
  return mae(pred.values(), truth.values());
}

double EvaluationReport::station_weighted_mean() const {
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < per_station.size(); ++s) {
    num += per_station[s] * static_cast<double>(station_counts[s]);
    den += static_cast<double>(station_counts[s]);
  }
  return num / den;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json stations = nlohmann::json::array();
  for (std::size_t s = 0; s < per_station.size(); ++s)
    stations.push_back({{"id", station_ids[s]}, {"mae", per_station[s]}});
  return {{"model", model},           {"adjacency", adjacency}, {"config_hash", config_hash},
          {"mae", overall},           {"per_horizon", per_horizon}, {"per_station", stations}};
}

EvaluationReport evaluate(const Forecast& f, const std::vector<std::string>& station_ids) {
  if (station_ids.size() != f.nodes) throw std::invalid_argument("evaluate: station id count mismatch");
  EvaluationReport r;
  r.overall = mae(f.pred, f.truth);
  r.station_ids = station_ids;
  std::vector<double> hsum(f.horizon, 0.0), ssum(f.nodes, 0.0);
  for (std::size_t b = 0; b < f.windows; ++b)
    for (std::size_t h = 0; h < f.horizon; ++h)
      for (std::size_t n = 0; n < f.nodes; ++n)
        for (std::size_t c = 0; c < f.channels; ++c) {
          std::size_t i = f.index(b, h, n, c);
          double e = std::fabs(f.pred[i] - f.truth[i]);
          hsum[h] += e;
          ssum[n] += e;
        }
  double per_h = static_cast<double>(f.windows * f.nodes * f.channels);
  for (double s : hsum) r.per_horizon.push_back(s / per_h);
  std::size_t per_s = f.windows * f.horizon * f.channels;
  for (double s : ssum) {
    r.per_station.push_back(s / static_cast<double>(per_s));
    r.station_counts.push_back(per_s);
  }
  return r;
}

Histogram histogram(const std::vector<double>& values, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("histogram: width must be positive");
  Histogram h;
  h.width = width;
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("histogram: values must be finite and >= 0");
    auto k = static_cast<std::size_t>(std::floor(v / width));
    if (h.counts.size() <= k) h.counts.resize(k + 1, 0);
    ++h.counts[k];
  }
  return h;
}

void write_station_csv(const std::string& path, const EvaluationReport& report,
                       const std::vector<graph::Station>& stations) {
  if (stations.size() != report.per_station.size()) throw std::invalid_argument("station count mismatch");
  auto out = open_out(path);
  out << "station_id,latitude,longitude,mae\n";
  for (std::size_t s = 0; s < stations.size(); ++s) {
    out << stations[s].id << ',' << stations[s].latitude << ',' << stations[s].longitude << ','
        << report.per_station[s] << '\n';
  }
}

void write_histogram_csv(const std::string& path, const Histogram& h) {
  auto out = open_out(path);
  out << "bin_start,bin_end,count\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    out << static_cast<double>(k) * h.width << ',' << static_cast<double>(k + 1) * h.width << ','
        << h.counts[k] << '\n';
  }
}

void write_station_geojson(const std::string& path, const EvaluationReport& report,
                           const std::vector<graph::Station>& stations) {
  if (stations.size() != report.per_station.size()) throw std::invalid_argument("station count mismatch");
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t s = 0; s < stations.size(); ++s) {
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", {stations[s].longitude, stations[s].latitude}}}},
                        {"properties", {{"station_id", stations[s].id}, {"mae", report.per_station[s]}}}});
  }
  auto out = open_out(path);
  out << nlohmann::json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) << '\n';
}

double percent_change(double value, double baseline) {
  if (baseline == 0.0) throw std::invalid_argument("percent_change: zero baseline");
  return 100.0 * (value - baseline) / baseline;
}

void write_comparison_csv(const std::string& path, const std::vector<ComparisonRow>& rows,
                          double baseline_mae) {
  auto out = open_out(path);
  out << "model,category,mae,pct_vs_baseline\n";
  for (const auto& r : rows) {
    out << '"' << r.model << " + " << r.adjacency << "\"," << r.category << ',' << r.mae << ','
        << percent_change(r.mae, baseline_mae) << '\n';
  }
}

std::vector<std::string> ablation_subsets() {
  return {"AB",
          "AB+TD",
          "AB+TD+WD",
          "AB+TD+WD+WCD",
          "AB+TD+WD+WCD+T",
          "AB+TD+WD+WCD+WS",
          "AB+TD+WD+WCD+CC",
          "AB+TD+WD+WCD+H",
          "All"};
}

std::vector<double> ablation_reference() { return {3.24, 3.19, 3.21, 3.16, 3.36, 3.40, 3.30, 3.40, 3.56}; }

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  auto out = open_out(path);
  out << "features,dim,mae,published_mae\n";
  for (const auto& r : rows) out << r.features << ',' << r.dim << ',' << r.mae << ',' << r.reference << '\n';
}

std::vector<PublishedComparison> published_comparison() {
  return {{"ST-GCN", "euclidean", "S", 1.36},      {"ST-GCN", "diaam", "S+A", 1.27},
          {"AST-GCN", "diaam", "S+A", 1.04},       {"AST-GCN", "eaam", "ST+A", 1.00},
          {"AST-GCN", "euclidean", "S", 1.06},     {"AST-GCN", "geographic", "S", 1.09},
          {"AST-GCN", "pearson", "T", 1.07},       {"AST-GCN", "st_embedding", "ST", 1.01}};
}

}  // namespace astgcn::eval
