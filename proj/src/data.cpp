#include "astgcn/data.hpp"

#include "astgcn/csv.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_map>

namespace astgcn::data {

namespace {

constexpr std::int64_t kDay = 86400;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Lower-case with spaces, underscores and hyphens removed.
std::string header_key(const std::string& s) {
  std::string out;
  for (char ch : lower(s))
    if (ch != ' ' && ch != '_' && ch != '-') out.push_back(ch);
  return out;
}

std::optional<std::size_t> find_column(const csv::Table& t, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    std::string key = header_key(name);
    for (std::size_t i = 0; i < t.header.size(); ++i)
      if (header_key(t.header[i]) == key) return i;
  }
  return std::nullopt;
}

std::size_t require(const csv::Table& t, std::initializer_list<const char*> names,
                    const std::string& path) {
  auto c = find_column(t, names);
  if (!c) throw DataError(path + ": missing required column '" + *names.begin() + "'");
  return *c;
}

csv::Table load_table(const std::string& path) {
  try {
    return csv::read_file(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

const std::string& field(const csv::Row& row, std::size_t col, const std::string& path) {
  if (col >= row.fields.size()) {
    throw DataError(path + ":" + std::to_string(row.line) + ": expected at least " +
                    std::to_string(col + 1) + " fields");
  }
  return row.fields[col];
}

double number(const csv::Row& row, std::size_t col, const std::string& what, const std::string& path) {
  try {
    return csv::parse_double(field(row, col, path), what, row.line);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

Timestamp time_field(const csv::Row& row, std::size_t col, const std::string& path) {
  try {
    return parse_timestamp(field(row, col, path));
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(path + ":" + std::to_string(row.line) + ": " + e.what());
  }
}

void write_header_or_throw(std::ofstream& out, const std::string& path) {
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
}

}  // namespace

// ---------------------------------------------------------------------------

Timestamp parse_timestamp(const std::string& raw) {
  std::string text = trim(raw);
  if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) text.pop_back();
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, consumed = 0;
  double sec = 0.0;
  char sep = 0;
  bool ok = false;
  if (std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &consumed) == 6 &&
      (sep == ' ' || sep == 'T')) {
    std::string rest = text.substr(static_cast<std::size_t>(consumed));
    if (rest.empty()) {
      ok = true;
    } else if (rest[0] == ':') {
      char* end = nullptr;
      sec = std::strtod(rest.c_str() + 1, &end);
      ok = end && *end == '\0' && rest.size() > 1 && sec >= 0.0 && sec < 61.0;
    }
  } else if (std::sscanf(text.c_str(), "%d-%d-%d%n", &y, &mo, &d, &consumed) == 3 &&
             static_cast<std::size_t>(consumed) == text.size()) {
    ok = true;
  }
  using namespace std::chrono;
  year_month_day ymd{year(y), month(static_cast<unsigned>(mo)), day(static_cast<unsigned>(d))};
  if (!ok || !ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59) {
    throw std::invalid_argument("unparseable timestamp '" + raw + "'");
  }
  std::int64_t days = sys_days(ymd).time_since_epoch().count();
  return days * kDay + h * 3600 + mi * 60 + static_cast<std::int64_t>(std::floor(sec));
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  std::int64_t days = floor_div(t, kDay);
  std::int64_t rem = t - days * kDay;
  year_month_day ymd{sys_days(std::chrono::days(days))};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60),
                static_cast<int>(rem % 60));
  return buf;
}

int weekday(Timestamp t) {
  // 1970-01-01 was a Thursday.
  std::int64_t days = floor_div(t, kDay);
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int minutes_since_midnight(Timestamp t) {
  return static_cast<int>((t - floor_div(t, kDay) * kDay) / 60);
}

bool station_id_less(const std::string& a, const std::string& b) {
  auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
  };
  bool na = numeric(a), nb = numeric(b);
  if (na && nb) {
    auto strip = [](const std::string& s) {
      auto p = s.find_first_not_of('0');
      return p == std::string::npos ? std::string("0") : s.substr(p);
    };
    std::string sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
    return a < b;
  }
  if (na != nb) return na;
  return a < b;
}

// ---------------------------------------------------------------------------

std::vector<SnapshotRecord> read_snapshots(const std::string& path) {
  auto table = load_table(path);
  std::size_t ct = require(table, {"timestamp", "time", "last_update"}, path);
  std::size_t cs = require(table, {"station_id", "station id", "number"}, path);
  std::size_t cb = require(table, {"available_bikes", "available bikes", "bikes"}, path);
  std::size_t cla = require(table, {"latitude", "lat"}, path);
  std::size_t clo = require(table, {"longitude", "lon", "lng", "long"}, path);
  std::vector<SnapshotRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    SnapshotRecord r;
    r.time = time_field(row, ct, path);
    r.station_id = trim(field(row, cs, path));
    if (r.station_id.empty()) throw DataError(path + ":" + std::to_string(row.line) + ": empty station id");
    r.available_bikes = number(row, cb, "available_bikes", path);
    if (!(r.available_bikes >= 0.0)) {
      throw DataError(path + ":" + std::to_string(row.line) + ": negative available_bikes");
    }
    r.latitude = number(row, cla, "latitude", path);
    r.longitude = number(row, clo, "longitude", path);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TripRecord> read_trips(const std::string& path) {
  auto table = load_table(path);
  std::size_t cps = require(table, {"pickup_station", "start station id", "start_station_id"}, path);
  std::size_t cds = require(table, {"dropoff_station", "end station id", "end_station_id"}, path);
  std::size_t cpt = require(table, {"pickup_time", "starttime", "started_at"}, path);
  std::size_t cdt = require(table, {"dropoff_time", "stoptime", "ended_at"}, path);
  auto plat = find_column(table, {"pickup_latitude", "start station latitude", "start_lat"});
  auto plon = find_column(table, {"pickup_longitude", "start station longitude", "start_lng"});
  auto dlat = find_column(table, {"dropoff_latitude", "end station latitude", "end_lat"});
  auto dlon = find_column(table, {"dropoff_longitude", "end station longitude", "end_lng"});
  std::vector<TripRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    TripRecord r;
    r.pickup_station = trim(field(row, cps, path));
    r.dropoff_station = trim(field(row, cds, path));
    if (r.pickup_station.empty() || r.dropoff_station.empty()) {
      throw DataError(path + ":" + std::to_string(row.line) + ": empty station id");
    }
    r.pickup_time = time_field(row, cpt, path);
    r.dropoff_time = time_field(row, cdt, path);
    if (r.dropoff_time < r.pickup_time) {
      throw DataError(path + ":" + std::to_string(row.line) + ": dropoff_time precedes pickup_time");
    }
    if (plat && plon) r.pickup_location = {{number(row, *plat, "pickup latitude", path),
                                            number(row, *plon, "pickup longitude", path)}};
    if (dlat && dlon) r.dropoff_location = {{number(row, *dlat, "dropoff latitude", path),
                                             number(row, *dlon, "dropoff longitude", path)}};
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<WeatherRecord> read_weather(const std::string& path) {
  auto table = load_table(path);
  std::size_t ct = require(table, {"timestamp", "time", "date"}, path);
  auto cc = find_column(table, {"condition", "weather", "description"});
  auto ctemp = find_column(table, {"temperature", "temp"});
  auto cws = find_column(table, {"wind_speed", "windspeed", "wdsp"});
  auto ccc = find_column(table, {"cloud_cover", "clouds", "clamt"});
  auto ch = find_column(table, {"humidity", "rhum"});
  std::vector<WeatherRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    WeatherRecord r;
    r.time = time_field(row, ct, path);
    r.has_condition = cc.has_value();
    if (cc) r.condition = trim(field(row, *cc, path));
    r.temperature = ctemp ? number(row, *ctemp, "temperature", path) : kNaN;
    r.wind_speed = cws ? number(row, *cws, "wind_speed", path) : kNaN;
    r.cloud_cover = ccc ? number(row, *ccc, "cloud_cover", path) : kNaN;
    r.humidity = ch ? number(row, *ch, "humidity", path) : kNaN;
    out.push_back(std::move(r));
  }
  return out;
}

void write_snapshots(const std::string& path, const std::vector<SnapshotRecord>& records) {
  std::ofstream out(path);
  write_header_or_throw(out, path);
  out << "timestamp,station_id,available_bikes,latitude,longitude\n";
  for (const auto& r : records) {
    out << format_timestamp(r.time) << ',' << r.station_id << ',' << r.available_bikes << ','
        << r.latitude << ',' << r.longitude << '\n';
  }
}

void write_weather(const std::string& path, const std::vector<WeatherRecord>& records) {
  std::ofstream out(path);
  write_header_or_throw(out, path);
  out << "timestamp,condition,temperature,wind_speed,cloud_cover,humidity\n";
  for (const auto& r : records) {
    out << format_timestamp(r.time) << ",\"" << r.condition << "\"," << r.temperature << ','
        << r.wind_speed << ',' << r.cloud_cover << ',' << r.humidity << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> StationPanel::station_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : stations) ids.push_back(s.id);
  return ids;
}

graph::Matrix StationPanel::series(std::size_t channel) const {
  if (channel >= width()) throw std::out_of_range("series: channel out of range");
  graph::Matrix m(static_cast<Eigen::Index>(nodes()), static_cast<Eigen::Index>(steps()));
  for (std::size_t t = 0; t < steps(); ++t)
    for (std::size_t n = 0; n < nodes(); ++n)
      m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t)) = at(t, n, channel);
  return m;
}

StationPanel StationPanel::slice_steps(std::size_t begin, std::size_t end) const {
  if (begin > end || end > steps()) throw std::out_of_range("slice_steps: range out of bounds");
  StationPanel p;
  p.times.assign(times.begin() + static_cast<std::ptrdiff_t>(begin),
                 times.begin() + static_cast<std::ptrdiff_t>(end));
  p.stations = stations;
  p.has_coordinates = has_coordinates;
  p.channels = channels;
  std::size_t row = nodes() * width();
  p.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * row),
                  values.begin() + static_cast<std::ptrdiff_t>(end * row));
  return p;
}

StationPanel aggregate_availability(const std::vector<SnapshotRecord>& records,
                                    std::int64_t bin_seconds, double max_missing,
                                    std::vector<std::string>* dropped) {
  if (bin_seconds <= 0 || 3600 % bin_seconds != 0) {
    throw std::invalid_argument("aggregate_availability: bin of " + std::to_string(bin_seconds) +
                                " s does not divide an hour");
  }
  if (records.empty()) throw DataError("aggregate_availability: no snapshot records");

  // Station table, coordinates from each station's earliest reading.
  std::map<std::string, std::size_t, decltype(&station_id_less)> index(&station_id_less);
  for (const auto& r : records) index.emplace(r.station_id, 0);
  std::vector<graph::Station> stations;
  for (auto& [id, i] : index) {
    i = stations.size();
    stations.push_back({id, kNaN, kNaN});
  }
  std::vector<Timestamp> first_seen(stations.size(), std::numeric_limits<Timestamp>::max());
  Timestamp tmin = records.front().time, tmax = tmin;
  for (const auto& r : records) {
    tmin = std::min(tmin, r.time);
    tmax = std::max(tmax, r.time);
    std::size_t s = index.at(r.station_id);
    auto key = std::make_tuple(r.time, r.latitude, r.longitude);
    if (std::make_tuple(first_seen[s], stations[s].latitude, stations[s].longitude) > key ||
        std::isnan(stations[s].latitude)) {
      first_seen[s] = r.time;
      stations[s].latitude = r.latitude;
      stations[s].longitude = r.longitude;
    }
  }
  Timestamp t0 = floor_div(tmin, bin_seconds) * bin_seconds;
  std::size_t steps = static_cast<std::size_t>((floor_div(tmax, bin_seconds) * bin_seconds - t0) / bin_seconds) + 1;
  std::size_t n = stations.size();

  // Sum readings in a canonical order so record order cannot change the mean.
  struct Key {
    std::size_t station, bin;
    double value;
  };
  std::vector<Key> keys;
  keys.reserve(records.size());
  for (const auto& r : records) {
    keys.push_back({index.at(r.station_id),
                    static_cast<std::size_t>((r.time - t0) / bin_seconds), r.available_bikes});
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return std::tie(a.station, a.bin, a.value) < std::tie(b.station, b.bin, b.value);
  });
  std::vector<double> sum(steps * n, 0.0);
  std::vector<std::size_t> count(steps * n, 0);
  for (const auto& k : keys) {
    sum[k.bin * n + k.station] += k.value;
    ++count[k.bin * n + k.station];
  }

  std::vector<std::size_t> kept;
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t empty = 0;
    for (std::size_t t = 0; t < steps; ++t) empty += count[t * n + s] == 0;
    double frac = static_cast<double>(empty) / static_cast<double>(steps);
    if (frac > max_missing) {
      spdlog::warn("station {} dropped: {:.1f}% of bins empty", stations[s].id, 100.0 * frac);
      if (dropped) dropped->push_back(stations[s].id);
    } else {
      kept.push_back(s);
    }
  }
  if (kept.empty()) throw DataError("aggregate_availability: every station exceeds the missing-bin limit");

  StationPanel p;
  p.channels = {"AB"};
  for (std::size_t t = 0; t < steps; ++t) p.times.push_back(t0 + static_cast<Timestamp>(t) * bin_seconds);
  for (std::size_t s : kept) p.stations.push_back(stations[s]);
  p.values.assign(steps * kept.size(), 0.0);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    std::size_t s = kept[j];
    std::optional<double> last;
    std::size_t leading = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      std::size_t c = count[t * n + s];
      if (c > 0) last = sum[t * n + s] / static_cast<double>(c);
      if (!last) {
        ++leading;
        continue;
      }
      p.at(t, j) = *last;
    }
    for (std::size_t t = 0; t < leading; ++t) p.at(t, j) = p.at(leading, j);
  }
  return p;
}

StationPanel trips_to_demand(const std::vector<TripRecord>& trips, std::int64_t bin_seconds,
                             std::size_t top_k) {
  if (bin_seconds <= 0) throw std::invalid_argument("trips_to_demand: bin must be positive");
  std::map<std::string, std::size_t, decltype(&station_id_less)> orders(&station_id_less);
  std::map<std::string, std::array<double, 2>> location;
  for (const auto& t : trips) {
    if (t.dropoff_time < t.pickup_time) {
      throw DataError("trip from " + t.pickup_station + " ends before it starts");
    }
    ++orders[t.pickup_station];
    ++orders[t.dropoff_station];
    if (t.pickup_location) location.emplace(t.pickup_station, *t.pickup_location);
    if (t.dropoff_location) location.emplace(t.dropoff_station, *t.dropoff_location);
  }
  if (top_k == 0 || top_k > orders.size()) {
    throw std::invalid_argument("trips_to_demand: top_k = " + std::to_string(top_k) + " but " +
                                std::to_string(orders.size()) + " distinct stations");
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(orders.begin(), orders.end());
  // `orders` iterates in id order, so a stable sort keeps ties id-ascending.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(top_k);
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return station_id_less(a.first, b.first); });

  StationPanel p;
  p.channels = {"pickups", "dropoffs"};
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& [id, count] : ranked) {
    index[id] = p.stations.size();
    auto loc = location.find(id);
    if (loc == location.end()) {
      p.has_coordinates = false;
      p.stations.push_back({id, 0.0, 0.0});
    } else {
      p.stations.push_back({id, loc->second[0], loc->second[1]});
    }
  }

  std::optional<Timestamp> tmin, tmax;
  for (const auto& t : trips) {
    if (!index.count(t.pickup_station) || !index.count(t.dropoff_station)) continue;
    tmin = std::min(tmin.value_or(t.pickup_time), t.pickup_time);
    tmax = std::max(tmax.value_or(t.dropoff_time), t.dropoff_time);
  }
  if (!tmin) throw DataError("trips_to_demand: no trip has both endpoints among the kept stations");
  Timestamp t0 = floor_div(*tmin, bin_seconds) * bin_seconds;
  std::size_t steps = static_cast<std::size_t>((floor_div(*tmax, bin_seconds) * bin_seconds - t0) / bin_seconds) + 1;
  for (std::size_t t = 0; t < steps; ++t) p.times.push_back(t0 + static_cast<Timestamp>(t) * bin_seconds);
  p.values.assign(steps * p.nodes() * 2, 0.0);
  for (const auto& t : trips) {
    auto a = index.find(t.pickup_station), b = index.find(t.dropoff_station);
    if (a == index.end() || b == index.end()) continue;
    p.at(static_cast<std::size_t>((t.pickup_time - t0) / bin_seconds), a->second, 0) += 1.0;
    p.at(static_cast<std::size_t>((t.dropoff_time - t0) / bin_seconds), b->second, 1) += 1.0;
  }
  return p;
}

// ---------------------------------------------------------------------------

std::string feature_name(Feature f) {
  switch (f) {
    case Feature::AB: return "AB";
    case Feature::TD: return "TD";
    case Feature::WD: return "WD";
    case Feature::WCD: return "WCD";
    case Feature::T: return "T";
    case Feature::WS: return "WS";
    case Feature::CC: return "CC";
    case Feature::H: return "H";
  }
  return "?";
}

bool needs_weather(Feature f) {
  return f == Feature::WCD || f == Feature::T || f == Feature::WS || f == Feature::CC ||
         f == Feature::H;
}

FeatureSet FeatureSet::parse(const std::string& text) {
  std::vector<bool> want(kAllFeatures.size(), false);
  want[0] = true;
  std::string rest = text;
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    std::size_t plus = rest.find('+', pos);
    std::string token = lower(trim(rest.substr(pos, plus == std::string::npos ? std::string::npos : plus - pos)));
    if (token == "all") {
      std::fill(want.begin(), want.end(), true);
    } else {
      bool found = false;
      for (std::size_t i = 0; i < kAllFeatures.size(); ++i) {
        if (lower(feature_name(kAllFeatures[i])) == token) {
          want[i] = true;
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("unknown feature '" + token + "' in '" + text + "'");
    }
    if (plus == std::string::npos) break;
    pos = plus + 1;
  }
  FeatureSet fs;
  fs.features.clear();
  for (std::size_t i = 0; i < kAllFeatures.size(); ++i)
    if (want[i]) fs.features.push_back(kAllFeatures[i]);
  return fs;
}

std::string FeatureSet::to_string() const {
  std::string s;
  for (Feature f : features) s += (s.empty() ? "" : "+") + feature_name(f);
  return s;
}

bool FeatureSet::contains(Feature f) const {
  return std::find(features.begin(), features.end(), f) != features.end();
}

bool FeatureSet::needs_weather() const {
  return std::any_of(features.begin(), features.end(), [](Feature f) { return data::needs_weather(f); });
}

std::size_t FeatureSet::dim(std::size_t base_channels) const {
  std::size_t d = 0;
  for (Feature f : features) d += f == Feature::AB ? base_channels : f == Feature::WCD ? kWeatherConditionCount : 1;
  return d;
}

std::string condition_name(WeatherCondition c) {
  switch (c) {
    case WeatherCondition::Clear: return "clear";
    case WeatherCondition::Cloudy: return "cloudy";
    case WeatherCondition::Rain: return "rain";
    case WeatherCondition::Fog: return "fog";
    case WeatherCondition::Other: return "other";
  }
  return "other";
}

WcdMapping WcdMapping::defaults() {
  using C = WeatherCondition;
  return {{{"rain", C::Rain},
           {"drizzle", C::Rain},
           {"shower", C::Rain},
           {"snow", C::Rain},
           {"sleet", C::Rain},
           {"thunder", C::Rain},
           {"fog", C::Fog},
           {"mist", C::Fog},
           {"haze", C::Fog},
           {"cloud", C::Cloudy},
           {"overcast", C::Cloudy},
           {"clear", C::Clear},
           {"sunny", C::Clear},
           {"fair", C::Clear}}};
}

WcdMapping WcdMapping::from_json(const nlohmann::json& j) {
  WcdMapping m;
  for (const auto& e : j.at("keywords")) {
    std::string cat = lower(e.at("category").get<std::string>());
    std::optional<WeatherCondition> c;
    for (auto w : {WeatherCondition::Clear, WeatherCondition::Cloudy, WeatherCondition::Rain,
                   WeatherCondition::Fog, WeatherCondition::Other})
      if (condition_name(w) == cat) c = w;
    if (!c) throw std::invalid_argument("unknown weather category '" + cat + "'");
    m.keywords.emplace_back(lower(e.at("keyword").get<std::string>()), *c);
  }
  return m;
}

nlohmann::json WcdMapping::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [k, c] : keywords) arr.push_back({{"keyword", k}, {"category", condition_name(c)}});
  return {{"keywords", arr}};
}

WeatherCondition WcdMapping::classify(const std::string& description) const {
  std::string d = lower(description);
  for (const auto& [k, c] : keywords)
    if (d.find(k) != std::string::npos) return c;
  return WeatherCondition::Other;
}

StationPanel encode_features(const StationPanel& base, const std::vector<WeatherRecord>& weather_in,
                             const FeatureSet& set, const WcdMapping& mapping) {
  std::size_t steps = base.steps(), nodes = base.nodes(), bw = base.width();
  std::vector<std::string> channels = base.channels;

  std::vector<WeatherRecord> weather = weather_in;
  std::stable_sort(weather.begin(), weather.end(),
                   [](const WeatherRecord& a, const WeatherRecord& b) { return a.time < b.time; });
  if (set.needs_weather() && weather.empty()) {
    throw DataError("feature set " + set.to_string() + " needs a weather table");
  }

  // Nearest weather record per step (ties to the earlier record).
  std::vector<std::size_t> nearest;
  if (set.needs_weather()) {
    for (Timestamp t : base.times) {
      auto it = std::lower_bound(weather.begin(), weather.end(), t,
                                 [](const WeatherRecord& r, Timestamp v) { return r.time < v; });
      std::size_t j = static_cast<std::size_t>(it - weather.begin());
      if (j == weather.size() || (j > 0 && t - weather[j - 1].time <= weather[j].time - t)) --j;
      if (std::llabs(weather[j].time - t) > kWeatherJoinWindowSeconds) {
        throw DataError("weather table does not cover " + format_timestamp(t) +
                        " (nearest record " + format_timestamp(weather[j].time) + ")");
      }
      nearest.push_back(j);
    }
  }

  // Per-step values for each appended (broadcast) feature column.
  std::vector<std::vector<double>> extra;
  auto weather_scalar = [&](Feature f, double WeatherRecord::*member) {
    double mean = 0.0, var = 0.0;
    for (const auto& r : weather) {
      if (!std::isfinite(r.*member)) {
        throw DataError("weather table has no usable " + feature_name(f) + " column");
      }
      mean += r.*member;
    }
    mean /= static_cast<double>(weather.size());
    for (const auto& r : weather) var += (r.*member - mean) * (r.*member - mean);
    double sd = std::sqrt(var / static_cast<double>(weather.size()));
    if (sd == 0.0) sd = 1.0;
    std::vector<double> col;
    for (std::size_t j : nearest) col.push_back((weather[j].*member - mean) / sd);
    channels.push_back(feature_name(f));
    extra.push_back(std::move(col));
  };

  for (Feature f : set.features) {
    switch (f) {
      case Feature::AB:
        break;
      case Feature::TD: {
        std::vector<double> col;
        for (Timestamp t : base.times) col.push_back(minutes_since_midnight(t) / 1440.0);
        channels.push_back("TD");
        extra.push_back(std::move(col));
        break;
      }
      case Feature::WD: {
        std::vector<double> col;
        for (Timestamp t : base.times) col.push_back(weekday(t) / 6.0);
        channels.push_back("WD");
        extra.push_back(std::move(col));
        break;
      }
      case Feature::WCD: {
        std::vector<std::vector<double>> cols(kWeatherConditionCount);
        for (std::size_t j : nearest) {
          if (!weather[j].has_condition) throw DataError("weather table has no condition column");
          auto c = static_cast<std::size_t>(mapping.classify(weather[j].condition));
          for (std::size_t k = 0; k < kWeatherConditionCount; ++k) cols[k].push_back(k == c ? 1.0 : 0.0);
        }
        for (std::size_t k = 0; k < kWeatherConditionCount; ++k) {
          channels.push_back("WCD_" + condition_name(static_cast<WeatherCondition>(k)));
          extra.push_back(std::move(cols[k]));
        }
        break;
      }
      case Feature::T: weather_scalar(f, &WeatherRecord::temperature); break;
      case Feature::WS: weather_scalar(f, &WeatherRecord::wind_speed); break;
      case Feature::CC: weather_scalar(f, &WeatherRecord::cloud_cover); break;
      case Feature::H: weather_scalar(f, &WeatherRecord::humidity); break;
    }
  }

  StationPanel p;
  p.times = base.times;
  p.stations = base.stations;
  p.has_coordinates = base.has_coordinates;
  p.channels = std::move(channels);
  std::size_t d = p.width();
  p.values.resize(steps * nodes * d);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t n = 0; n < nodes; ++n) {
      for (std::size_t c = 0; c < bw; ++c) p.at(t, n, c) = base.at(t, n, c);
      for (std::size_t e = 0; e < extra.size(); ++e) p.at(t, n, bw + e) = extra[e][t];
    }
  return p;
}

// ---------------------------------------------------------------------------

void Scaler::apply(std::vector<double>& values) const {
  if (width() == 0 || values.size() % width() != 0) throw std::invalid_argument("scaler: width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = apply_value(values[i], i % width());
}

void Scaler::invert(std::vector<double>& values) const {
  if (width() == 0 || values.size() % width() != 0) throw std::invalid_argument("scaler: width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = invert_value(values[i], i % width());
}

nlohmann::json Scaler::to_json() const {
  return {{"names", names}, {"mean", mean}, {"std", stddev}};
}

Scaler Scaler::from_json(const nlohmann::json& j) {
  Scaler s;
  s.names = j.at("names").get<std::vector<std::string>>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.stddev.size() || s.names.size() != s.mean.size()) {
    throw std::invalid_argument("scaler: inconsistent parameter lengths");
  }
  return s;
}

Scaler fit_scaler(const StationPanel& panel, std::size_t train_steps) {
  if (train_steps == 0 || train_steps > panel.steps()) {
    throw std::invalid_argument("fit_scaler: training split must be nonempty and inside the panel");
  }
  std::size_t d = panel.width(), rows = train_steps * panel.nodes();
  Scaler s;
  s.names = panel.channels;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += panel.values[i * d + c];
  for (auto& m : s.mean) m /= static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double dev = panel.values[i * d + c] - s.mean[c];
      s.stddev[c] += dev * dev;
    }
  for (std::size_t c = 0; c < d; ++c) {
    s.stddev[c] = std::sqrt(s.stddev[c] / static_cast<double>(rows));
    if (s.stddev[c] == 0.0) {
      spdlog::warn("feature {} is constant on the training split; std clamped to 1", s.names[c]);
      s.stddev[c] = 1.0;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::size_t SplitBounds::begin(Split s) const {
  return s == Split::Train ? 0 : s == Split::Val ? train_end : val_end;
}

std::size_t SplitBounds::end(Split s) const {
  return s == Split::Train ? train_end : s == Split::Val ? val_end : total;
}

SplitBounds fractional_split(std::size_t steps, double train_fraction, double val_fraction) {
  if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction >= 1.0) {
    throw std::invalid_argument("fractional_split: need 0 < train, 0 <= val, train + val < 1");
  }
  SplitBounds b;
  b.total = steps;
  b.train_end = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(steps)));
  b.val_end = static_cast<std::size_t>(std::floor((train_fraction + val_fraction) * static_cast<double>(steps)));
  return b;
}

SplitBounds weekly_split(std::size_t steps, std::int64_t bin_seconds) {
  if (bin_seconds <= 0 || (7 * kDay) % bin_seconds != 0) {
    throw std::invalid_argument("weekly_split: bin must divide a week");
  }
  std::size_t fortnight = static_cast<std::size_t>(14 * kDay / bin_seconds);
  if (steps <= 2 * fortnight) {
    throw DataError("weekly_split: " + std::to_string(steps) + " steps leave no training data before the last four weeks");
  }
  SplitBounds b;
  b.total = steps;
  b.val_end = steps - fortnight;
  b.train_end = b.val_end - fortnight;
  return b;
}

SampleSet::SampleSet(Split split, StationPanel segment, std::size_t offset, std::size_t m,
                     std::size_t n, std::size_t target_channels)
    : split_(split), segment_(std::move(segment)), offset_(offset), m_(m), n_(n), c_(target_channels) {
  if (m == 0 || n == 0) throw std::invalid_argument("window lengths m and n must be >= 1");
  if (c_ == 0 || c_ > segment_.width()) throw std::invalid_argument("target channels out of range");
  if (segment_.steps() < m + n) {
    throw DataError(split_name(split) + " split has " + std::to_string(segment_.steps()) +
                    " steps; windows need at least m + n = " + std::to_string(m + n));
  }
}

std::size_t SampleSet::size() const {
  return segment_.steps() < m_ + n_ || m_ == 0 ? 0 : segment_.steps() - m_ - n_ + 1;
}

Tensor SampleSet::inputs(const std::vector<std::size_t>& windows) const {
  std::size_t row = nodes() * features();
  std::vector<double> out;
  out.reserve(windows.size() * m_ * row);
  for (std::size_t w : windows) {
    if (w >= size()) throw std::out_of_range("window index out of range");
    auto first = segment_.values.begin() + static_cast<std::ptrdiff_t>(w * row);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(m_ * row));
  }
  return Tensor::from({windows.size(), m_, nodes(), features()}, std::move(out));
}

Tensor SampleSet::targets(const std::vector<std::size_t>& windows) const {
  std::vector<double> out;
  out.reserve(windows.size() * n_ * nodes() * c_);
  for (std::size_t w : windows) {
    if (w >= size()) throw std::out_of_range("window index out of range");
    for (std::size_t t = w + m_; t < w + m_ + n_; ++t)
      for (std::size_t n = 0; n < nodes(); ++n)
        for (std::size_t c = 0; c < c_; ++c) out.push_back(segment_.at(t, n, c));
  }
  return Tensor::from({windows.size(), n_, nodes(), c_}, std::move(out));
}

std::array<SampleSet, 3> window_and_split(const StationPanel& scaled, const SplitBounds& bounds,
                                          std::size_t m, std::size_t n, std::size_t target_channels) {
  if (bounds.total != scaled.steps()) throw std::invalid_argument("split bounds do not match the panel length");
  std::array<SampleSet, 3> out;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    out[static_cast<std::size_t>(s)] = SampleSet(s, scaled.slice_steps(bounds.begin(s), bounds.end(s)),
                                                 bounds.begin(s), m, n, target_channels);
  }
  return out;
}

// ---------------------------------------------------------------------------

Dataset make_dataset(StationPanel encoded, const SplitBounds& bounds, std::size_t target_channels,
                     std::int64_t bin_seconds) {
  if (target_channels == 0 || target_channels > encoded.width()) {
    throw std::invalid_argument("make_dataset: target channels out of range");
  }
  Dataset ds;
  ds.scaler = fit_scaler(encoded, bounds.train_end);
  ds.scaled = encoded;
  ds.scaler.apply(ds.scaled.values);
  ds.raw = std::move(encoded);
  ds.bounds = bounds;
  ds.target_channels = target_channels;
  ds.bin_seconds = bin_seconds;
  return ds;
}

namespace {
constexpr char kCacheMagic[8] = {'A', 'S', 'T', 'G', 'C', 'N', 'D', 'S'};
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void save_cache(const std::string& path, const Dataset& ds) {
  nlohmann::json stations = nlohmann::json::array();
  for (const auto& s : ds.raw.stations) stations.push_back({s.id, s.latitude, s.longitude});
  nlohmann::json header{{"config_hash", ds.config_hash},
                        {"times", ds.raw.times},
                        {"stations", stations},
                        {"has_coordinates", ds.raw.has_coordinates},
                        {"channels", ds.raw.channels},
                        {"scaler", ds.scaler.to_json()},
                        {"bounds", {ds.bounds.train_end, ds.bounds.val_end, ds.bounds.total}},
                        {"target_channels", ds.target_channels},
                        {"bin_seconds", ds.bin_seconds}};
  std::string text = header.dump();
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write cache " + path);
    std::uint64_t len = text.size(), count = ds.raw.values.size();
    out.write(kCacheMagic, sizeof kCacheMagic);
    out.write(reinterpret_cast<const char*>(&kCacheVersion), sizeof kCacheVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(ds.raw.values.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
    if (!out) throw DataError("failed writing cache " + path);
  }
  std::filesystem::rename(tmp, path);
}

std::optional<Dataset> load_cache(const std::string& path, const std::string& expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0 || version != kCacheVersion) {
    spdlog::warn("{} is not a readable dataset cache; rebuilding", path);
    return std::nullopt;
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
  if (!in || header.is_discarded()) {
    spdlog::warn("{} has a corrupt header; rebuilding", path);
    return std::nullopt;
  }
  if (header.value("config_hash", std::string()) != expected_hash) {
    spdlog::info("{} was built under a different configuration; rebuilding", path);
    return std::nullopt;
  }
  Dataset ds;
  ds.config_hash = expected_hash;
  ds.raw.times = header.at("times").get<std::vector<Timestamp>>();
  for (const auto& s : header.at("stations"))
    ds.raw.stations.push_back({s.at(0).get<std::string>(), s.at(1).get<double>(), s.at(2).get<double>()});
  ds.raw.has_coordinates = header.at("has_coordinates").get<bool>();
  ds.raw.channels = header.at("channels").get<std::vector<std::string>>();
  ds.scaler = Scaler::from_json(header.at("scaler"));
  auto b = header.at("bounds");
  ds.bounds = {b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()};
  ds.target_channels = header.at("target_channels").get<std::size_t>();
  ds.bin_seconds = header.at("bin_seconds").get<std::int64_t>();
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || count != ds.raw.steps() * ds.raw.nodes() * ds.raw.width()) {
    spdlog::warn("{} is truncated; rebuilding", path);
    return std::nullopt;
  }
  ds.raw.values.resize(count);
  in.read(reinterpret_cast<char*>(ds.raw.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) {
    spdlog::warn("{} is truncated; rebuilding", path);
    return std::nullopt;
  }
  ds.scaled = ds.raw;
  ds.scaler.apply(ds.scaled.values);
  return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<graph::Station> ring_stations(std::size_t n) {
  std::vector<graph::Station> out;
  for (std::size_t i = 0; i < n; ++i) {
    double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    out.push_back({std::to_string(i + 1), 53.3498 + 0.01 * std::sin(a), -6.2603 + 0.01 * std::cos(a)});
  }
  return out;
}

}  // namespace

StationPanel synthetic_sinusoid(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.nodes == 0 || spec.steps == 0 || !(spec.period > 0.0)) {
    throw std::invalid_argument("synthetic_sinusoid: nodes, steps and period must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  StationPanel p;
  p.channels = {"AB"};
  p.stations = ring_stations(spec.nodes);
  for (std::size_t t = 0; t < spec.steps; ++t) p.times.push_back(spec.start + static_cast<Timestamp>(t) * spec.bin_seconds);
  p.values.resize(spec.steps * spec.nodes);
  for (std::size_t t = 0; t < spec.steps; ++t)
    for (std::size_t i = 0; i < spec.nodes; ++i) {
      double phase = 2.0 * std::numbers::pi *
                     (static_cast<double>(t) / spec.period + static_cast<double>(i) / static_cast<double>(spec.nodes));
      double v = spec.offset + spec.amplitude * std::sin(phase);
      if (spec.noise > 0.0) v += spec.noise * noise(rng);
      p.at(t, i) = v;
    }
  return p;
}

std::vector<SnapshotRecord> synthetic_snapshots(const SyntheticSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto stations = ring_stations(spec.nodes);
  std::vector<SnapshotRecord> out;
  const std::int64_t every = 300;
  std::int64_t span = static_cast<std::int64_t>(spec.steps) * spec.bin_seconds;
  for (std::int64_t dt = 0; dt < span; dt += every) {
    double step = static_cast<double>(dt) / static_cast<double>(spec.bin_seconds);
    for (std::size_t i = 0; i < spec.nodes; ++i) {
      double phase = 2.0 * std::numbers::pi *
                     (step / spec.period + static_cast<double>(i) / static_cast<double>(spec.nodes));
      double v = 10.0 + 5.0 * std::sin(phase);
      if (spec.noise > 0.0) v += spec.noise * noise(rng);
      out.push_back({spec.start + dt, stations[i].id, std::max(0.0, std::round(v)), stations[i].latitude,
                     stations[i].longitude});
    }
  }
  return out;
}

std::vector<WeatherRecord> synthetic_weather(const SyntheticSpec& spec, std::uint64_t seed) {
  static const char* kConditions[] = {"Clear", "Partly cloudy", "Light rain", "Mist", "Overcast"};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<WeatherRecord> out;
  std::int64_t span = static_cast<std::int64_t>(spec.steps) * spec.bin_seconds;
  for (std::int64_t dt = 0; dt <= span + 3600; dt += 3600) {
    double day = 2.0 * std::numbers::pi * static_cast<double>(dt % kDay) / static_cast<double>(kDay);
    WeatherRecord r;
    r.time = spec.start + dt;
    r.condition = kConditions[static_cast<std::size_t>(dt / (6 * 3600)) % 5];
    r.temperature = 15.0 + 4.0 * std::sin(day) + noise(rng);
    r.wind_speed = 12.0 + 3.0 * std::cos(day) + noise(rng);
    r.cloud_cover = 60.0 + 30.0 * std::sin(day / 2.0);
    r.humidity = 75.0 + 10.0 * std::cos(day) + noise(rng);
    out.push_back(r);
  }
  return out;
}

}  // namespace astgcn::data
