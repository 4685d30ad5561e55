#pragma once

// Synthetic highway recordings in the tracks/recordingMeta schema. A
// time-stepped simulation per travel direction: desired-speed tracking with
// a simple safe-gap follower rule, smoothed Ornstein-Uhlenbeck lateral
// jitter and scheduled lane changes with a quintic lateral profile. The
// pre-change cues (lateral drift, speed adjustment) are population
// parameters, which is what makes populations distinguishable.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/ingest.hpp"
#include "lcip/segment.hpp"

namespace lcip {

struct PopulationParams {
  std::string dataset_tag = "A";
  std::string recording_id = "1";
  std::string location_id = "synthA";
  DriveSide drive_side = DriveSide::Right;
  double frequency_hz = 25.0;

  // Road
  double road_length_m = 700.0;
  double radius_m = 0.0;  // 0 = straight; otherwise a left-curving arc
  int lanes_per_direction = 3;
  double lane_width_m = 3.75;
  double median_width_m = 4.0;
  bool on_ramp = true;
  double ramp_start_m = 50.0;
  double ramp_end_m = 300.0;
  double ramp_fraction = 0.05;

  // Traffic
  int n_tracks = 400;
  double duration_s = 600.0;
  double speed_mean = 30.0;
  double speed_std = 1.5;
  double truck_fraction = 0.05;
  double min_gap_m = 8.0;
  double time_headway_s = 1.0;

  // Behavior
  double lc_probability = 0.6;
  double lc_duration_s = 3.0;
  double max_lateral_velocity = 3.0;     // bound on the quintic peak
  double drift_displacement_m = 0.0;     // slow pre-change drift toward (>0) or away from (<0) the target lane
  double drift_lead_s = 7.0;             // drift starts this long before the quintic
  double speed_adjust = 0.0;             // m/s, + before left changes, - before right
  double speed_adjust_lead_s = 8.0;      // ramp starts this long before the crossing
  double speed_adjust_ramp_s = 5.0;
  double gap_acceptance_m = 15.0;
  double jitter_sigma_m = 0.08;
  double jitter_tau_s = 3.0;
  double jitter_clip_m = 1.0;

  std::uint64_t seed = 1;

  double quintic_peak_velocity() const {
    // Exact for drift >= 0; an upper bound when the drift points away.
    return 15.0 * (lane_width_m - drift_displacement_m) / (8.0 * lc_duration_s);
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParams, std::string(name) + " must be > 0");
    };
    positive(frequency_hz, "frequency_hz");
    positive(road_length_m, "road_length_m");
    positive(lane_width_m, "lane_width_m");
    positive(median_width_m, "median_width_m");
    positive(duration_s, "duration_s");
    positive(speed_mean, "speed_mean");
    positive(lc_duration_s, "lc_duration_s");
    positive(max_lateral_velocity, "max_lateral_velocity");
    positive(jitter_tau_s, "jitter_tau_s");
    positive(jitter_clip_m, "jitter_clip_m");
    positive(gap_acceptance_m, "gap_acceptance_m");
    if (radius_m < 0.0) throw Error(ErrorCode::InvalidParams, "radius_m must be >= 0");
    if (lanes_per_direction < 1) throw Error(ErrorCode::InvalidParams, "lanes_per_direction must be >= 1");
    if (n_tracks < 1) throw Error(ErrorCode::InvalidParams, "n_tracks must be >= 1");
    if (lc_duration_s >= 10.0) throw Error(ErrorCode::InvalidParams, "lc_duration_s must be < 10");
    if (speed_std < 0.0 || jitter_sigma_m < 0.0) {
      throw Error(ErrorCode::InvalidParams, "negative spread parameter");
    }
    if (std::abs(drift_displacement_m) >= lane_width_m / 2.0) {
      throw Error(ErrorCode::InvalidParams, "drift_displacement_m must stay inside the lane");
    }
    if (lc_probability < 0.0 || lc_probability > 1.0 || ramp_fraction < 0.0 || ramp_fraction > 1.0 ||
        truck_fraction < 0.0 || truck_fraction > 1.0) {
      throw Error(ErrorCode::InvalidParams, "probability outside [0, 1]");
    }
    if (quintic_peak_velocity() > max_lateral_velocity) {
      throw Error(ErrorCode::InvalidParams, "quintic peak lateral velocity exceeds max_lateral_velocity");
    }
    if (on_ramp && !(ramp_start_m >= 0.0 && ramp_end_m > ramp_start_m && ramp_end_m <= road_length_m)) {
      throw Error(ErrorCode::InvalidParams, "ramp span");
    }
  }

  nlohmann::json to_json() const {
    return {{"dataset_tag", dataset_tag},
            {"recording_id", recording_id},
            {"location_id", location_id},
            {"drive_side", drive_side == DriveSide::Right ? "Right" : "Left"},
            {"frequency_hz", frequency_hz},
            {"road_length_m", road_length_m},
            {"radius_m", radius_m},
            {"lanes_per_direction", lanes_per_direction},
            {"lane_width_m", lane_width_m},
            {"median_width_m", median_width_m},
            {"on_ramp", on_ramp},
            {"ramp_start_m", ramp_start_m},
            {"ramp_end_m", ramp_end_m},
            {"ramp_fraction", ramp_fraction},
            {"n_tracks", n_tracks},
            {"duration_s", duration_s},
            {"speed_mean", speed_mean},
            {"speed_std", speed_std},
            {"truck_fraction", truck_fraction},
            {"min_gap_m", min_gap_m},
            {"time_headway_s", time_headway_s},
            {"lc_probability", lc_probability},
            {"lc_duration_s", lc_duration_s},
            {"max_lateral_velocity", max_lateral_velocity},
            {"drift_displacement_m", drift_displacement_m},
            {"drift_lead_s", drift_lead_s},
            {"speed_adjust", speed_adjust},
            {"speed_adjust_lead_s", speed_adjust_lead_s},
            {"speed_adjust_ramp_s", speed_adjust_ramp_s},
            {"gap_acceptance_m", gap_acceptance_m},
            {"jitter_sigma_m", jitter_sigma_m},
            {"jitter_tau_s", jitter_tau_s},
            {"jitter_clip_m", jitter_clip_m},
            {"seed", seed}};
  }

  /// Fields absent from j keep the values of p.
  static PopulationParams from_json(const nlohmann::json& j, PopulationParams p) {
    try {
      p.dataset_tag = j.value("dataset_tag", p.dataset_tag);
      p.recording_id = j.value("recording_id", p.recording_id);
      p.location_id = j.value("location_id", p.location_id);
      if (j.contains("drive_side")) {
        const auto s = j.at("drive_side").get<std::string>();
        if (s == "Right") p.drive_side = DriveSide::Right;
        else if (s == "Left") p.drive_side = DriveSide::Left;
        else throw Error(ErrorCode::InvalidParams, "drive_side=" + s);
      }
#define LCIP_FIELD(name) p.name = j.value(#name, p.name)
      LCIP_FIELD(frequency_hz);
      LCIP_FIELD(road_length_m);
      LCIP_FIELD(radius_m);
      LCIP_FIELD(lanes_per_direction);
      LCIP_FIELD(lane_width_m);
      LCIP_FIELD(median_width_m);
      LCIP_FIELD(on_ramp);
      LCIP_FIELD(ramp_start_m);
      LCIP_FIELD(ramp_end_m);
      LCIP_FIELD(ramp_fraction);
      LCIP_FIELD(n_tracks);
      LCIP_FIELD(duration_s);
      LCIP_FIELD(speed_mean);
      LCIP_FIELD(speed_std);
      LCIP_FIELD(truck_fraction);
      LCIP_FIELD(min_gap_m);
      LCIP_FIELD(time_headway_s);
      LCIP_FIELD(lc_probability);
      LCIP_FIELD(lc_duration_s);
      LCIP_FIELD(max_lateral_velocity);
      LCIP_FIELD(drift_displacement_m);
      LCIP_FIELD(drift_lead_s);
      LCIP_FIELD(speed_adjust);
      LCIP_FIELD(speed_adjust_lead_s);
      LCIP_FIELD(speed_adjust_ramp_s);
      LCIP_FIELD(gap_acceptance_m);
      LCIP_FIELD(jitter_sigma_m);
      LCIP_FIELD(jitter_tau_s);
      LCIP_FIELD(jitter_clip_m);
      LCIP_FIELD(seed);
#undef LCIP_FIELD
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidParams, e.what());
    }
    return p;
  }

  static PopulationParams from_json(const nlohmann::json& j) { return from_json(j, PopulationParams{}); }
};

/// Right-hand traffic, 25 Hz, short lane changes announced by a slow lateral
/// drift; little lateral weaving while lane keeping.
inline PopulationParams population_a() {
  PopulationParams p;
  p.dataset_tag = "A";
  p.recording_id = "1";
  p.location_id = "synthA";
  p.drive_side = DriveSide::Right;
  p.frequency_hz = 25.0;
  p.speed_mean = 32.0;
  p.speed_std = 1.5;
  p.lc_duration_s = 3.0;
  p.drift_displacement_m = 1.2;
  p.drift_lead_s = 7.0;
  p.speed_adjust = 0.0;
  p.gap_acceptance_m = 20.0;
  p.jitter_sigma_m = 0.06;
  p.jitter_tau_s = 3.0;
  p.seed = 101;
  return p;
}

/// Left-hand traffic, 30 Hz, slow lane changes announced by a speed change;
/// strong lateral weaving while lane keeping, on a gentle arc.
inline PopulationParams population_b() {
  PopulationParams p;
  p.dataset_tag = "B";
  p.recording_id = "2";
  p.location_id = "synthB";
  p.drive_side = DriveSide::Left;
  p.frequency_hz = 30.0;
  p.radius_m = 4000.0;
  p.speed_mean = 22.0;
  p.duration_s = 1200.0;
  p.speed_std = 1.0;
  p.lc_duration_s = 6.0;
  p.drift_displacement_m = -1.4;
  p.drift_lead_s = 5.0;
  p.speed_adjust = 8.0;
  p.speed_adjust_lead_s = 7.0;
  p.speed_adjust_ramp_s = 7.0;
  p.gap_acceptance_m = 10.0;
  p.jitter_sigma_m = 0.2;
  p.jitter_tau_s = 2.5;
  p.jitter_clip_m = 0.8;
  p.seed = 202;
  return p;
}

struct SynthOutput {
  RecordingBundle bundle;
  std::vector<LcInstant> truth;
  LaneConfig lane_config;
};

namespace synth_detail {

inline double quintic(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
}

struct Road {
  double length = 0.0;
  double radius = 0.0;

  // Centerline point and left normal at arc length u from the start.
  void frame(double u, Point2& p, Point2& n) const {
    if (radius <= 0.0) {
      p = {u, 0.0};
      n = {0.0, 1.0};
      return;
    }
    const double phi = u / radius;
    p = {radius * std::sin(phi), radius - radius * std::cos(phi)};
    n = {-std::sin(phi), std::cos(phi)};
  }
};

struct LanePlan {
  double t_cross = 0.0;  // nominal crossing time
  int dir = 0;           // +1 left, -1 right, 0 none
  int from_lane = 0;
};

struct Vehicle {
  int id = 0;
  bool forward = true;
  double t_spawn = 0.0;
  bool active = false;
  bool done = false;
  double u = 0.0;       // travel-direction arc length
  double v = 0.0;
  double v_des = 0.0;
  double length = 4.5;
  double width = 1.8;
  VehicleClass cls = VehicleClass::Car;
  int start_lane = 0;   // lane index, 0 = innermost; lanes_per_direction = ramp
  LanePlan plan;
  double jitter_raw = 0.0;
  double jitter_smooth = 0.0;
  std::vector<long long> frames;
  std::vector<double> us, lats;
};

}  // namespace synth_detail

/// Lateral offset (left of travel positive) of lane k's center, k = 0 innermost.
inline double synth_lane_center(const PopulationParams& p, int k) {
  return -(p.median_width_m / 2.0 + p.lane_width_m / 2.0 + k * p.lane_width_m);
}

inline int synth_lane_id(const PopulationParams& p, bool forward, int k) {
  const int per_dir = p.lanes_per_direction + (p.on_ramp ? 1 : 0);
  return (forward ? 1 : 1 + per_dir) + k;
}

/// Lane configuration consistent with the generator's geometry: lane centers
/// are Frenet offsets relative to the median (negative for right-hand traffic).
inline LaneConfig synth_lane_config(const PopulationParams& p) {
  LaneConfig cfg;
  const int n_lanes = p.lanes_per_direction + (p.on_ramp ? 1 : 0);
  const int segments = static_cast<int>(std::ceil(p.road_length_m / 100.0)) + 1;
  const double sign = p.drive_side == DriveSide::Right ? 1.0 : -1.0;
  for (bool forward : {true, false}) {
    DirectionLanes d;
    d.direction = forward ? "forward" : "backward";
    d.lane_width = p.lane_width_m;
    for (int k = 0; k < n_lanes; ++k) {
      const int id = synth_lane_id(p, forward, k);
      d.lanes.push_back(id);
      d.lane_centers.push_back(sign * synth_lane_center(p, k));
      const LaneType type = (p.on_ramp && k == p.lanes_per_direction) ? LaneType::OnRamp : LaneType::Mainline;
      d.lane_types[id] = type;
      for (int s = 0; s < segments; ++s) d.lanelet_types[id * 1000 + s] = type;
    }
    d.svm_lanes = {synth_lane_id(p, forward, 0), synth_lane_id(p, !forward, 0)};
    cfg.locations[p.location_id][d.direction] = std::move(d);
  }
  cfg.validate();
  return cfg;
}

/// Runs the simulation and returns the recording, the ground-truth lane
/// changes (nearest-lane-center transitions of the simulated lateral
/// position) and the matching lane configuration.
inline SynthOutput generate_population(const PopulationParams& p) {
  using namespace synth_detail;
  p.validate();
  const double dt = 1.0 / p.frequency_hz;
  const long long n_frames = static_cast<long long>(std::floor(p.duration_s * p.frequency_hz));
  const Road road{p.road_length_m, p.radius_m};
  const int n_main = p.lanes_per_direction;
  const int ramp_lane = n_main;
  const double W = p.lane_width_m;

  Rng rng = derive_rng(p.seed, 0x5EED);
  std::vector<Vehicle> vehicles(static_cast<std::size_t>(p.n_tracks));
  const double spawn_window = std::max(p.duration_s - 10.0, p.duration_s * 0.5);
  std::vector<double> spawn_times(vehicles.size());
  for (auto& t : spawn_times) t = uniform(rng, 0.0, spawn_window);
  std::sort(spawn_times.begin(), spawn_times.end());
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    Vehicle& v = vehicles[i];
    v.id = static_cast<int>(i) + 1;
    v.forward = uniform01(rng) < 0.5;
    v.t_spawn = spawn_times[i];
    const bool truck = uniform01(rng) < p.truck_fraction;
    v.cls = truck ? VehicleClass::Truck : VehicleClass::Car;
    v.length = truck ? uniform(rng, 11.0, 14.0) : uniform(rng, 4.2, 5.0);
    v.width = truck ? 2.5 : uniform(rng, 1.7, 1.9);
    v.v_des = std::max(5.0, normal(rng, p.speed_mean, p.speed_std) - (truck ? 3.0 : 0.0));
    v.v = v.v_des;
    const bool on_ramp = p.on_ramp && uniform01(rng) < p.ramp_fraction;
    v.start_lane = on_ramp ? ramp_lane : static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_main)));
    v.u = on_ramp ? p.ramp_start_m : 0.0;
    v.jitter_raw = normal(rng, 0.0, p.jitter_sigma_m);
    v.jitter_smooth = v.jitter_raw;

    const double transit = (p.road_length_m - v.u) / v.v_des;
    if (on_ramp) {
      // Merge into the outer mainline lane well before the ramp ends.
      const double t_end = (p.ramp_end_m - p.ramp_start_m) / v.v_des - p.lc_duration_s;
      v.plan = {v.t_spawn + uniform(rng, std::min(2.0, t_end), std::max(2.0, t_end)), +1, ramp_lane};
    } else if (!truck && uniform01(rng) < p.lc_probability) {
      const double lo = std::max({8.5, p.drift_lead_s + p.lc_duration_s / 2.0 + 1.0, p.speed_adjust_lead_s + 0.5});
      const double hi = transit - p.lc_duration_s / 2.0 - 1.0;
      const bool can_left = v.start_lane > 0;
      const bool can_right = v.start_lane + 1 < n_main;
      if (hi > lo && (can_left || can_right)) {
        int dir = can_left && can_right ? (uniform01(rng) < 0.5 ? 1 : -1) : (can_left ? 1 : -1);
        v.plan = {v.t_spawn + uniform(rng, lo, hi), dir, v.start_lane};
      }
    }
  }

  auto lateral_plan = [&](const Vehicle& v, double t, double& taper) {
    taper = 1.0;
    const double base = synth_lane_center(p, v.start_lane);
    if (v.plan.dir == 0) return base;
    const double D = p.lc_duration_s;
    const double tq0 = v.plan.t_cross - D / 2.0;
    const double x = (t - tq0) / D;
    if (x > 0.0 && x < 1.0) taper = (2.0 * x - 1.0) * (2.0 * x - 1.0);
    double off = (W - p.drift_displacement_m) * quintic(x);
    if (p.drift_displacement_m != 0.0) {
      off += p.drift_displacement_m * quintic((t - (tq0 - p.drift_lead_s)) / (p.drift_lead_s + D));
    }
    // Left of travel is +lat; lane centers decrease outward.
    return base + v.plan.dir * off;
  };
  auto speed_offset = [&](const Vehicle& v, double t) {
    if (v.plan.dir == 0 || p.speed_adjust == 0.0 || v.start_lane == ramp_lane) return 0.0;
    const double x = (t - (v.plan.t_cross - p.speed_adjust_lead_s)) / p.speed_adjust_ramp_s;
    return v.plan.dir * p.speed_adjust * quintic(x);
  };

  // Gap acceptance: a planned change is dropped if, when the maneuver
  // starts, the target lane has a vehicle within the acceptance gap.
  std::vector<bool> plan_checked(vehicles.size(), false);
  const double ou_decay = std::exp(-dt / p.jitter_tau_s);
  const double ou_noise = p.jitter_sigma_m * std::sqrt(1.0 - ou_decay * ou_decay);
  const double smooth = 1.0 - std::exp(-dt / 1.0);

  std::vector<std::size_t> active;
  for (long long f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f) * dt;
    // Spawn when the entry point of the lane is free.
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      Vehicle& v = vehicles[i];
      if (v.active || v.done || v.t_spawn > t) continue;
      if (v.t_spawn < t - 30.0) {  // never found a free slot
        v.done = true;
        continue;
      }
      double taper;
      const double lat = lateral_plan(v, t, taper);
      bool free = true;
      for (std::size_t j : active) {
        const Vehicle& o = vehicles[j];
        if (o.forward != v.forward) continue;
        double unused;
        const double o_lat = o.lats.empty() ? lateral_plan(o, t, unused) : o.lats.back();
        if (std::abs(o_lat - lat) < W * 0.8 && std::abs(o.u - v.u) < 40.0 + o.length) free = false;
      }
      if (!free) continue;
      v.active = true;
      active.push_back(i);
    }
    // Longitudinal update with a safe-gap follower rule.
    for (std::size_t i : active) {
      Vehicle& v = vehicles[i];
      if (v.frames.empty()) {
        // First frame: record state, no update.
      } else {
        const double lat = v.lats.back();
        // The pre-change speed adjustment is applied on top of what the
        // leader allows; only the hard minimum gap overrides it.
        double v_target = v.v_des;
        double v_cap = std::numeric_limits<double>::infinity();
        for (std::size_t j : active) {
          if (j == i) continue;
          const Vehicle& o = vehicles[j];
          if (o.forward != v.forward || o.frames.empty()) continue;
          if (std::abs(o.lats.back() - lat) >= W * 0.8) continue;
          const double gap = o.u - v.u - (o.length + v.length) / 2.0;
          if (o.u <= v.u) continue;
          const double v_safe = std::max(0.0, (gap - p.min_gap_m) / p.time_headway_s);
          v_target = std::min(v_target, std::max(v_safe, std::min(o.v, v_target)));
          if (gap < p.min_gap_m) v_cap = std::min(v_cap, o.v * 0.9);
        }
        v_target = std::min(v_target + speed_offset(v, t), v_cap);
        const double a = std::clamp((v_target - v.v) * 1.0, -6.0, 2.5);
        v.v = std::max(0.0, v.v + a * dt);
        v.u += v.v * dt;
      }
      if (v.plan.dir != 0 && !plan_checked[i]) {
        const double start = v.plan.t_cross - p.lc_duration_s / 2.0 -
                             (p.drift_displacement_m != 0.0 ? p.drift_lead_s : 0.0);
        const double start2 = p.speed_adjust != 0.0 ? v.plan.t_cross - p.speed_adjust_lead_s : start;
        if (t >= std::min(start, start2)) {
          plan_checked[i] = true;
          const double target = synth_lane_center(p, v.start_lane) + v.plan.dir * W;
          bool ok = true;
          for (std::size_t j : active) {
            const Vehicle& o = vehicles[j];
            if (j == i || o.forward != v.forward || o.frames.empty()) continue;
            if (std::abs(o.lats.back() - target) < W / 2.0 && std::abs(o.u - v.u) < p.gap_acceptance_m) ok = false;
          }
          if (!ok && v.start_lane != ramp_lane) v.plan.dir = 0;
        }
      }
      v.jitter_raw = ou_decay * v.jitter_raw + ou_noise * normal(rng);
      v.jitter_smooth += smooth * (v.jitter_raw - v.jitter_smooth);
      double taper;
      const double base = lateral_plan(v, t, taper);
      const double jitter = p.jitter_clip_m * std::tanh(v.jitter_smooth / p.jitter_clip_m);
      v.frames.push_back(f);
      v.us.push_back(v.u);
      v.lats.push_back(base + taper * jitter);
    }
    // Retire vehicles that left the road.
    std::vector<std::size_t> still;
    for (std::size_t i : active) {
      Vehicle& v = vehicles[i];
      if (v.u >= p.road_length_m) {
        v.active = false;
        v.done = true;
        v.frames.pop_back();
        v.us.pop_back();
        v.lats.pop_back();
      } else {
        still.push_back(i);
      }
    }
    active.swap(still);
  }

  SynthOutput out;
  out.lane_config = synth_lane_config(p);
  out.bundle.recording_id = p.recording_id;
  out.bundle.location_id = p.location_id;
  out.bundle.frequency_hz = p.frequency_hz;
  out.bundle.drive_side = p.drive_side;
  const double mirror = p.drive_side == DriveSide::Right ? 1.0 : -1.0;
  const int n_lanes = n_main + (p.on_ramp ? 1 : 0);
  auto nearest = [&](double lat) {
    int best = 0;
    for (int k = 1; k < n_lanes; ++k) {
      if (std::abs(lat - synth_lane_center(p, k)) < std::abs(lat - synth_lane_center(p, best))) best = k;
    }
    return best;
  };

  for (const Vehicle& v : vehicles) {
    if (v.frames.size() < 2) continue;
    Track tr;
    tr.track_id = v.id;
    tr.width = v.width;
    tr.length = v.length;
    tr.vehicle_class = v.cls;
    const std::size_t n = v.frames.size();
    std::vector<Point2> pos(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double ug = v.forward ? v.us[k] : p.road_length_m - v.us[k];
      const double lat_world = v.forward ? v.lats[k] : -v.lats[k];  // left of +x is +y
      Point2 c, nrm;
      road.frame(ug, c, nrm);
      pos[k] = {c.x + lat_world * nrm.x, mirror * (c.y + lat_world * nrm.y)};
    }
    int prev_lane = nearest(v.lats[0]);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t a = k == 0 ? 0 : k - 1;
      const std::size_t b = k + 1 < n ? k + 1 : n - 1;
      const double span = static_cast<double>(b - a) * dt;
      TrackPoint tp;
      tp.frame = v.frames[k];
      tp.x = pos[k].x;
      tp.y = pos[k].y;
      tp.vx = (pos[b].x - pos[a].x) / span;
      tp.vy = (pos[b].y - pos[a].y) / span;
      const int lane = nearest(v.lats[k]);
      tp.lane_id = synth_lane_id(p, v.forward, lane);
      const int seg = static_cast<int>(std::floor(std::clamp(v.us[k], 0.0, p.road_length_m) / 100.0));
      tp.lanelet_ids.push_back(tp.lane_id * 1000 + seg);
      // Body overlapping a neighboring lane also occupies its lanelet.
      const double edge_in = v.lats[k] + v.width / 2.0, edge_out = v.lats[k] - v.width / 2.0;
      const double c = synth_lane_center(p, lane);
      if (edge_in > c + W / 2.0 && lane > 0) {
        tp.lanelet_ids.push_back(synth_lane_id(p, v.forward, lane - 1) * 1000 + seg);
      }
      if (edge_out < c - W / 2.0 && lane + 1 < n_lanes) {
        tp.lanelet_ids.push_back(synth_lane_id(p, v.forward, lane + 1) * 1000 + seg);
      }
      std::sort(tp.lanelet_ids.begin(), tp.lanelet_ids.end());
      tr.frames.push_back(std::move(tp));
      if (k > 0 && lane != prev_lane) {
        // Inner lanes (smaller index) are to the left for right-hand traffic.
        const bool left = (lane < prev_lane) == (p.drive_side == DriveSide::Right);
        out.truth.push_back({v.id, v.frames[k], left ? LcDirection::Left : LcDirection::Right});
      }
      prev_lane = lane;
    }
    out.bundle.tracks.push_back(std::move(tr));
  }
  return out;
}

inline void write_population(const SynthOutput& out, const std::filesystem::path& dir) {
  write_recording(out.bundle, dir / "tracks.csv", dir / "recordingMeta.csv");
  csv::write_text(dir / "groundtruth_lc.csv", instants_csv(out.truth));
  csv::write_text(dir / "lane_config.json", lane_config_to_json(out.lane_config).dump(2) + "\n");
}

}  // namespace lcip
