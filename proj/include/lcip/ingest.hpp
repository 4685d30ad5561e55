#pragma once

// Recording ingest: levelX-style tracks/meta CSVs, the lane configuration
// that replaces map parsing, and the on/off-ramp exclusion mask.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"

namespace lcip {

enum class VehicleClass { Car, Truck, Other };
enum class LaneType { Mainline, OnRamp, OffRamp };

inline bool is_ramp(LaneType t) { return t == LaneType::OnRamp || t == LaneType::OffRamp; }

struct TrackPoint {
  long long frame = 0;
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  int lane_id = 0;
  std::vector<int> lanelet_ids;  // empty when the source row has none

  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

struct Track {
  int track_id = 0;
  std::vector<TrackPoint> frames;
  double width = 0.0;
  double length = 0.0;
  VehicleClass vehicle_class = VehicleClass::Car;

  long long first_frame() const { return frames.front().frame; }
  long long last_frame() const { return frames.back().frame; }

  friend bool operator==(const Track&, const Track&) = default;
};

struct RecordingBundle {
  std::string recording_id;
  double frequency_hz = 25.0;
  std::vector<Track> tracks;
  std::string location_id;
  DriveSide drive_side = DriveSide::Right;

  friend bool operator==(const RecordingBundle&, const RecordingBundle&) = default;
};

/// Lanes of one travel direction at one location.
struct DirectionLanes {
  std::string direction;
  std::vector<int> lanes;             // inside -> outside
  std::vector<double> lane_centers;   // Frenet l of each lane center, same order
  std::map<int, LaneType> lane_types;
  std::map<int, LaneType> lanelet_types;
  std::array<int, 2> svm_lanes{};     // {own innermost lane, opposite innermost lane}
  double lane_width = 3.75;

  std::optional<std::size_t> lane_index(int lane_id) const {
    auto it = std::find(lanes.begin(), lanes.end(), lane_id);
    if (it == lanes.end()) return std::nullopt;
    return static_cast<std::size_t>(it - lanes.begin());
  }

  /// Index of the lane whose center is nearest to l (ties: inner lane).
  std::size_t nearest_lane(double l) const {
    std::size_t best = 0;
    double best_d = std::abs(l - lane_centers[0]);
    for (std::size_t i = 1; i < lane_centers.size(); ++i) {
      const double d = std::abs(l - lane_centers[i]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  LaneType type_of_lane_index(std::size_t i) const {
    auto it = lane_types.find(lanes[i]);
    return it == lane_types.end() ? LaneType::Mainline : it->second;
  }

  /// Index of the lane adjacent on the left of travel (larger l), if any.
  std::optional<std::size_t> left_of(std::size_t i) const {
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < lane_centers.size(); ++j) {
      if (lane_centers[j] > lane_centers[i] &&
          (!best || lane_centers[j] < lane_centers[*best])) {
        best = j;
      }
    }
    return best;
  }

  std::optional<std::size_t> right_of(std::size_t i) const {
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < lane_centers.size(); ++j) {
      if (lane_centers[j] < lane_centers[i] &&
          (!best || lane_centers[j] > lane_centers[*best])) {
        best = j;
      }
    }
    return best;
  }

  /// Reflection l -> -l used for left-hand-traffic data.
  DirectionLanes mirrored() const {
    DirectionLanes m = *this;
    for (double& c : m.lane_centers) c = -c;
    return m;
  }
};

struct LaneConfig {
  // location id -> direction key -> lanes
  std::map<std::string, std::map<std::string, DirectionLanes>> locations;

  const std::map<std::string, DirectionLanes>& location(const std::string& id) const {
    auto it = locations.find(id);
    if (it == locations.end()) throw Error(ErrorCode::InvalidConfig, "no lane config for location " + id);
    return it->second;
  }

  /// Direction owning lane_id at location.
  const DirectionLanes& direction_of_lane(const std::string& location_id, int lane_id) const {
    for (const auto& [key, dir] : location(location_id)) {
      if (dir.lane_index(lane_id)) return dir;
    }
    throw Error(ErrorCode::UnknownLaneId, std::to_string(lane_id));
  }

  LaneType lane_type(const std::string& location_id, int lane_id) const {
    const DirectionLanes& dir = direction_of_lane(location_id, lane_id);
    auto it = dir.lane_types.find(lane_id);
    return it == dir.lane_types.end() ? LaneType::Mainline : it->second;
  }

  /// Lanelet typing is location-wide; nullopt when the location types no lanelets.
  std::optional<LaneType> lanelet_type(const std::string& location_id, int lanelet_id) const {
    bool any = false;
    for (const auto& [key, dir] : location(location_id)) {
      if (!dir.lanelet_types.empty()) any = true;
      auto it = dir.lanelet_types.find(lanelet_id);
      if (it != dir.lanelet_types.end()) return it->second;
    }
    if (any) throw Error(ErrorCode::UnknownLaneId, "lanelet " + std::to_string(lanelet_id));
    return std::nullopt;
  }

  void validate() const {
    for (const auto& [loc, dirs] : locations) {
      for (const auto& [key, d] : dirs) {
        const std::string where = loc + "/" + key;
        if (d.lanes.empty() || d.lanes.size() != d.lane_centers.size()) {
          throw Error(ErrorCode::InvalidConfig, where + ": lanes and lane_centers must match");
        }
        bool inc = true, dec = true;
        for (std::size_t i = 1; i < d.lane_centers.size(); ++i) {
          inc = inc && d.lane_centers[i] > d.lane_centers[i - 1];
          dec = dec && d.lane_centers[i] < d.lane_centers[i - 1];
        }
        if (d.lane_centers.size() > 1 && !inc && !dec) {
          throw Error(ErrorCode::InvalidConfig, where + ": lane centers not strictly monotone");
        }
        if (d.lane_width <= 0.0) throw Error(ErrorCode::InvalidConfig, where + ": lane_width");
      }
    }
  }
};

inline std::string_view lane_type_name(LaneType t) {
  switch (t) {
    case LaneType::OnRamp: return "OnRamp";
    case LaneType::OffRamp: return "OffRamp";
    default: return "Mainline";
  }
}

inline LaneType parse_lane_type(const std::string& s) {
  if (s == "Mainline") return LaneType::Mainline;
  if (s == "OnRamp") return LaneType::OnRamp;
  if (s == "OffRamp") return LaneType::OffRamp;
  throw Error(ErrorCode::InvalidConfig, "lane type " + s);
}

inline LaneConfig lane_config_from_json(const nlohmann::json& j) {
  LaneConfig cfg;
  try {
    for (const auto& [loc, dirs] : j.items()) {
      for (const auto& [key, d] : dirs.items()) {
        DirectionLanes lanes;
        lanes.direction = key;
        lanes.lanes = d.at("lanes").get<std::vector<int>>();
        lanes.lane_centers = d.at("lane_centers").get<std::vector<double>>();
        for (const auto& [id, t] : d.at("lane_types").items()) {
          lanes.lane_types[std::stoi(id)] = parse_lane_type(t.get<std::string>());
        }
        if (d.contains("lanelet_types")) {
          for (const auto& [id, t] : d.at("lanelet_types").items()) {
            lanes.lanelet_types[std::stoi(id)] = parse_lane_type(t.get<std::string>());
          }
        }
        const auto svm = d.at("svm_lanes").get<std::vector<int>>();
        if (svm.size() != 2) throw Error(ErrorCode::InvalidConfig, loc + "/" + key + ": svm_lanes needs 2 ids");
        lanes.svm_lanes = {svm[0], svm[1]};
        lanes.lane_width = d.value("lane_width", 3.75);
        cfg.locations[loc][key] = std::move(lanes);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::json lane_config_to_json(const LaneConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [loc, dirs] : cfg.locations) {
    for (const auto& [key, d] : dirs) {
      nlohmann::json e;
      e["lanes"] = d.lanes;
      e["lane_centers"] = d.lane_centers;
      nlohmann::json types = nlohmann::json::object();
      for (const auto& [id, t] : d.lane_types) types[std::to_string(id)] = lane_type_name(t);
      e["lane_types"] = types;
      nlohmann::json lt = nlohmann::json::object();
      for (const auto& [id, t] : d.lanelet_types) lt[std::to_string(id)] = lane_type_name(t);
      e["lanelet_types"] = lt;
      e["svm_lanes"] = std::vector<int>{d.svm_lanes[0], d.svm_lanes[1]};
      e["lane_width"] = d.lane_width;
      j[loc][key] = e;
    }
  }
  return j;
}

inline LaneConfig load_lane_config(const std::filesystem::path& path) {
  try {
    return lane_config_from_json(nlohmann::json::parse(csv::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

namespace detail {

inline VehicleClass parse_class(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "car") return VehicleClass::Car;
  if (lower == "truck" || lower == "bus" || lower == "truck_bus") return VehicleClass::Truck;
  return VehicleClass::Other;
}

inline std::string_view class_name(VehicleClass c) {
  switch (c) {
    case VehicleClass::Car: return "car";
    case VehicleClass::Truck: return "truck";
    default: return "other";
  }
}

inline std::vector<int> parse_lanelets(std::string_view field) {
  std::vector<int> out;
  field = csv::trim(field);
  if (field.empty()) return out;
  for (auto part : csv::split(field, ';')) {
    part = csv::trim(part);
    if (part.empty()) continue;
    out.push_back(static_cast<int>(csv::to_int(part, "laneletId")));
  }
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& tracks_columns() {
  static const std::vector<std::string> cols = {"recordingId", "trackId", "frame",     "xCenter",
                                                "yCenter",     "xVelocity", "yVelocity", "laneId",
                                                "laneletId",   "width",   "length",    "class"};
  return cols;
}

/// Parses tracks.csv + recordingMeta.csv. Every lane id must be known to the
/// lane config for the recording's location.
inline RecordingBundle load_recording(const std::filesystem::path& tracks_path,
                                      const std::filesystem::path& meta_path,
                                      const LaneConfig& lane_config) {
  RecordingBundle bundle;
  {
    const auto meta = csv::Table::read(meta_path);
    const auto c_rec = meta.column("recordingId");
    const auto c_loc = meta.column("locationId");
    const auto c_rate = meta.column("frameRate");
    const auto c_side = meta.column("driveSide");
    if (meta.size() != 1) throw Error(ErrorCode::MalformedRow, meta_path.string() + ": expected one row");
    bundle.recording_id = std::string(meta.at(0, c_rec));
    bundle.location_id = std::string(meta.at(0, c_loc));
    bundle.frequency_hz = csv::to_double(meta.at(0, c_rate), "frameRate");
    if (bundle.frequency_hz <= 0.0) throw Error(ErrorCode::MalformedRow, "frameRate must be positive");
    std::string side(meta.at(0, c_side));
    std::transform(side.begin(), side.end(), side.begin(), [](unsigned char c) { return std::tolower(c); });
    if (side == "right") bundle.drive_side = DriveSide::Right;
    else if (side == "left") bundle.drive_side = DriveSide::Left;
    else throw Error(ErrorCode::MalformedRow, "driveSide='" + side + "'");
  }

  const auto table = csv::Table::read(tracks_path);
  std::vector<std::size_t> col;
  for (const auto& name : tracks_columns()) col.push_back(table.column(name));
  enum { REC, TID, FRAME, X, Y, VX, VY, LANE, LANELET, W, L, CLS };

  std::unordered_map<int, std::size_t> index;
  for (std::size_t r = 0; r < table.size(); ++r) {
    if (table.at(r, col[REC]) != bundle.recording_id) {
      throw Error(ErrorCode::MalformedRow, "row " + std::to_string(r + 1) + " belongs to recording " +
                                               std::string(table.at(r, col[REC])));
    }
    const int tid = static_cast<int>(csv::to_int(table.at(r, col[TID]), "trackId"));
    TrackPoint p;
    p.frame = csv::to_int(table.at(r, col[FRAME]), "frame");
    p.x = csv::to_double(table.at(r, col[X]), "xCenter");
    p.y = csv::to_double(table.at(r, col[Y]), "yCenter");
    p.vx = csv::to_double(table.at(r, col[VX]), "xVelocity");
    p.vy = csv::to_double(table.at(r, col[VY]), "yVelocity");
    p.lane_id = static_cast<int>(csv::to_int(table.at(r, col[LANE]), "laneId"));
    p.lanelet_ids = detail::parse_lanelets(table.at(r, col[LANELET]));
    lane_config.direction_of_lane(bundle.location_id, p.lane_id);

    auto [it, inserted] = index.try_emplace(tid, bundle.tracks.size());
    if (inserted) {
      Track t;
      t.track_id = tid;
      t.width = csv::to_double(table.at(r, col[W]), "width");
      t.length = csv::to_double(table.at(r, col[L]), "length");
      if (t.width <= 0.0 || t.length <= 0.0) {
        throw Error(ErrorCode::MalformedRow, "track " + std::to_string(tid) + " has non-positive extent");
      }
      t.vehicle_class = detail::parse_class(table.at(r, col[CLS]));
      bundle.tracks.push_back(std::move(t));
    }
    Track& track = bundle.tracks[it->second];
    if (!track.frames.empty() && p.frame != track.frames.back().frame + 1) {
      throw Error(ErrorCode::NonMonotoneFrames, std::to_string(tid));
    }
    track.frames.push_back(std::move(p));
  }
  return bundle;
}

inline std::string tracks_csv(const RecordingBundle& bundle) {
  std::string out;
  for (std::size_t i = 0; i < tracks_columns().size(); ++i) {
    if (i) out += ',';
    out += tracks_columns()[i];
  }
  out += '\n';
  for (const auto& t : bundle.tracks) {
    for (const auto& p : t.frames) {
      out += bundle.recording_id;
      out += ',' + std::to_string(t.track_id) + ',' + std::to_string(p.frame);
      out += ',' + csv::format_double(p.x) + ',' + csv::format_double(p.y);
      out += ',' + csv::format_double(p.vx) + ',' + csv::format_double(p.vy);
      out += ',' + std::to_string(p.lane_id) + ',';
      for (std::size_t k = 0; k < p.lanelet_ids.size(); ++k) {
        if (k) out += ';';
        out += std::to_string(p.lanelet_ids[k]);
      }
      out += ',' + csv::format_double(t.width) + ',' + csv::format_double(t.length);
      out += ',';
      out += detail::class_name(t.vehicle_class);
      out += '\n';
    }
  }
  return out;
}

inline std::string meta_csv(const RecordingBundle& bundle) {
  return "recordingId,locationId,frameRate,driveSide\n" + bundle.recording_id + "," + bundle.location_id +
         "," + csv::format_double(bundle.frequency_hz) + "," +
         (bundle.drive_side == DriveSide::Right ? "Right" : "Left") + "\n";
}

inline void write_recording(const RecordingBundle& bundle, const std::filesystem::path& tracks_path,
                            const std::filesystem::path& meta_path) {
  csv::write_text(tracks_path, tracks_csv(bundle));
  csv::write_text(meta_path, meta_csv(bundle));
}

/// True for frames where the vehicle stands fully or partially on a ramp:
/// its lane is a ramp lane, or any lanelet it occupies is a ramp lanelet.
inline std::vector<bool> ramp_exclusion_mask(const Track& track, const std::string& location_id,
                                             const LaneConfig& lane_config) {
  std::vector<bool> mask(track.frames.size(), false);
  for (std::size_t i = 0; i < track.frames.size(); ++i) {
    const auto& p = track.frames[i];
    bool ramp = is_ramp(lane_config.lane_type(location_id, p.lane_id));
    for (int lanelet : p.lanelet_ids) {
      const auto t = lane_config.lanelet_type(location_id, lanelet);
      if (t && is_ramp(*t)) ramp = true;
    }
    mask[i] = ramp;
  }
  return mask;
}

/// Travel direction key of a track (direction owning its first lane id).
inline const DirectionLanes& track_direction(const Track& track, const std::string& location_id,
                                             const LaneConfig& lane_config) {
  return lane_config.direction_of_lane(location_id, track.frames.front().lane_id);
}

}  // namespace lcip
