#pragma once

#include "astgcn/graph.hpp"
#include "astgcn/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace astgcn::data {

// Malformed or insufficient input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

// Accepts "YYYY-MM-DD HH:MM[:SS[.fff]]" with ' ' or 'T' and an optional 'Z'.
Timestamp parse_timestamp(const std::string& text);
std::string format_timestamp(Timestamp t);
// Monday = 0 .. Sunday = 6.
int weekday(Timestamp t);
int minutes_since_midnight(Timestamp t);

// Numeric-aware ordering: "2" < "10" < "a".
bool station_id_less(const std::string& a, const std::string& b);

// ---- raw records ----

struct SnapshotRecord {
  Timestamp time = 0;
  std::string station_id;
  double available_bikes = 0.0;
  double latitude = 0.0;
  double longitude = 0.0;
};

struct TripRecord {
  std::string pickup_station;
  std::string dropoff_station;
  Timestamp pickup_time = 0;
  Timestamp dropoff_time = 0;
  // Present when the source carries station coordinates.
  std::optional<std::array<double, 2>> pickup_location;
  std::optional<std::array<double, 2>> dropoff_location;
};

// Columns absent from the source read as NaN (or has_condition = false).
struct WeatherRecord {
  Timestamp time = 0;
  std::string condition;
  bool has_condition = true;
  double temperature = 0.0;  // °C
  double wind_speed = 0.0;
  double cloud_cover = 0.0;  // %
  double humidity = 0.0;     // %
};

std::vector<SnapshotRecord> read_snapshots(const std::string& path);
std::vector<TripRecord> read_trips(const std::string& path);
std::vector<WeatherRecord> read_weather(const std::string& path);

void write_snapshots(const std::string& path, const std::vector<SnapshotRecord>& records);
void write_weather(const std::string& path, const std::vector<WeatherRecord>& records);

// ---- station panels ----

// T x N x C values on a regular time grid, stations in natural id order.
struct StationPanel {
  std::vector<Timestamp> times;
  std::vector<graph::Station> stations;
  bool has_coordinates = true;
  std::vector<std::string> channels;
  std::vector<double> values;  // row-major [t][n][c]

  std::size_t steps() const { return times.size(); }
  std::size_t nodes() const { return stations.size(); }
  std::size_t width() const { return channels.size(); }
  double at(std::size_t t, std::size_t n, std::size_t c = 0) const {
    return values[(t * nodes() + n) * width() + c];
  }
  double& at(std::size_t t, std::size_t n, std::size_t c = 0) {
    return values[(t * nodes() + n) * width() + c];
  }
  std::vector<std::string> station_ids() const;
  // N x T matrix of one channel, as used for correlation-based adjacencies.
  graph::Matrix series(std::size_t channel = 0) const;
  // Panel restricted to steps [begin, end).
  StationPanel slice_steps(std::size_t begin, std::size_t end) const;
};

inline constexpr double kMaxMissingFraction = 0.2;

// Mean availability per station per bin; empty bins forward-filled (leading
// gaps back-filled); stations missing more than `max_missing` of bins are
// dropped with a warning.
StationPanel aggregate_availability(const std::vector<SnapshotRecord>& records,
                                    std::int64_t bin_seconds,
                                    double max_missing = kMaxMissingFraction,
                                    std::vector<std::string>* dropped = nullptr);

// Pick-up (channel 0) and drop-off (channel 1) counts for the `top_k`
// stations with most orders. Only trips with both endpoints kept count.
StationPanel trips_to_demand(const std::vector<TripRecord>& trips, std::int64_t bin_seconds,
                             std::size_t top_k);

// ---- features ----

enum class Feature { AB, TD, WD, WCD, T, WS, CC, H };

inline constexpr std::array<Feature, 8> kAllFeatures{Feature::AB, Feature::TD, Feature::WD,
                                                     Feature::WCD, Feature::T, Feature::WS,
                                                     Feature::CC, Feature::H};

std::string feature_name(Feature f);
bool needs_weather(Feature f);

// Ordered, duplicate-free subset; AB is always first.
struct FeatureSet {
  std::vector<Feature> features{Feature::AB};

  // "AB+TD+WD+WCD", "All", or a single name. AB is added when missing.
  static FeatureSet parse(const std::string& text);
  std::string to_string() const;
  bool contains(Feature f) const;
  bool needs_weather() const;
  // Width given the number of base channels.
  std::size_t dim(std::size_t base_channels) const;
};

enum class WeatherCondition { Clear, Cloudy, Rain, Fog, Other };
inline constexpr std::size_t kWeatherConditionCount = 5;

// Maps free-text weather descriptions to the five condition categories by
// keyword, first match wins; unmatched strings are Other.
struct WcdMapping {
  std::vector<std::pair<std::string, WeatherCondition>> keywords;

  static WcdMapping defaults();
  static WcdMapping from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  WeatherCondition classify(const std::string& description) const;
};

std::string condition_name(WeatherCondition c);

// Max distance between a bin and its nearest weather record.
inline constexpr std::int64_t kWeatherJoinWindowSeconds = 3600;

// Appends the requested features after the base channels. Weather scalars are
// z-scored over the weather table before the join.
StationPanel encode_features(const StationPanel& base, const std::vector<WeatherRecord>& weather,
                             const FeatureSet& set, const WcdMapping& mapping = WcdMapping::defaults());

// ---- scaling ----

struct Scaler {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t width() const { return mean.size(); }
  // In-place transform of row-major [..][width] values.
  void apply(std::vector<double>& values) const;
  void invert(std::vector<double>& values) const;
  double invert_value(double v, std::size_t feature) const { return v * stddev[feature] + mean[feature]; }
  double apply_value(double v, std::size_t feature) const { return (v - mean[feature]) / stddev[feature]; }

  nlohmann::json to_json() const;
  static Scaler from_json(const nlohmann::json& j);
};

// Population statistics over steps [0, train_steps) of every station.
Scaler fit_scaler(const StationPanel& panel, std::size_t train_steps);

// ---- splits and windows ----

enum class Split { Train, Val, Test };
std::string split_name(Split s);

struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t total = 0;

  std::size_t begin(Split s) const;
  std::size_t end(Split s) const;
  std::size_t length(Split s) const { return end(s) - begin(s); }
};

// train = floor(train_fraction T), val = floor((train + val) T) - train.
SplitBounds fractional_split(std::size_t steps, double train_fraction, double val_fraction);
// The last four weeks: two for validation, two for testing.
SplitBounds weekly_split(std::size_t steps, std::int64_t bin_seconds);

// Sliding windows inside one contiguous split of a scaled panel.
class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(Split split, StationPanel segment, std::size_t offset, std::size_t m, std::size_t n,
            std::size_t target_channels);

  Split split() const { return split_; }
  std::size_t size() const;
  std::size_t input_length() const { return m_; }
  std::size_t horizon() const { return n_; }
  std::size_t nodes() const { return segment_.nodes(); }
  std::size_t features() const { return segment_.width(); }
  std::size_t target_channels() const { return c_; }
  // Absolute panel step of window i's first input.
  std::size_t window_start(std::size_t i) const { return offset_ + i; }
  const StationPanel& segment() const { return segment_; }

  // inputs [B, m, N, d], targets [B, n, N, c], both in scaled units.
  Tensor inputs(const std::vector<std::size_t>& windows) const;
  Tensor targets(const std::vector<std::size_t>& windows) const;

 private:
  Split split_ = Split::Train;
  StationPanel segment_;
  std::size_t offset_ = 0, m_ = 0, n_ = 0, c_ = 0;
};

std::array<SampleSet, 3> window_and_split(const StationPanel& scaled, const SplitBounds& bounds,
                                          std::size_t m, std::size_t n, std::size_t target_channels);

// ---- assembled dataset and cache ----

struct Dataset {
  StationPanel raw;     // encoded, unscaled
  StationPanel scaled;
  Scaler scaler;
  SplitBounds bounds;
  std::size_t target_channels = 1;
  std::int64_t bin_seconds = 0;
  std::string config_hash;

  std::array<SampleSet, 3> windows(std::size_t m, std::size_t n) const {
    return window_and_split(scaled, bounds, m, n, target_channels);
  }
};

// Fits the scaler on the train split and applies it.
Dataset make_dataset(StationPanel encoded, const SplitBounds& bounds, std::size_t target_channels,
                     std::int64_t bin_seconds);

void save_cache(const std::string& path, const Dataset& ds);
// nullopt when the file is missing or was built under a different hash.
std::optional<Dataset> load_cache(const std::string& path, const std::string& expected_hash);

// ---- synthetic data ----

struct SyntheticSpec {
  std::size_t nodes = 8;
  std::size_t steps = 480;
  std::int64_t bin_seconds = 900;
  double period = 24.0;  // in steps
  double amplitude = 1.0;
  double offset = 0.0;
  double noise = 0.0;
  Timestamp start = 1593561600;  // 2020-07-01 00:00 UTC
};

// value_i(t) = offset + amplitude sin(2π t / period + 2π i / nodes) + noise,
// stations on a ring of 0.01° radius around Dublin city centre.
StationPanel synthetic_sinusoid(const SyntheticSpec& spec, std::uint64_t seed);

// Five-minute snapshots and hourly weather consistent with synthetic_sinusoid
// (scaled to non-negative bike counts), for end-to-end ingestion.
std::vector<SnapshotRecord> synthetic_snapshots(const SyntheticSpec& spec, std::uint64_t seed);
std::vector<WeatherRecord> synthetic_weather(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace astgcn::data
