#pragma once

// Eight-slot neighborhood of a target vehicle at one frame.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lcip/frenet.hpp"
#include "lcip/ingest.hpp"

namespace lcip {

/// Slot order matches the per-slot feature blocks.
enum class Slot : int { P = 0, F, LP, LA, LF, RP, RA, RF };
inline constexpr std::size_t kSlotCount = 8;
inline constexpr std::array<std::string_view, kSlotCount> kSlotNames = {"p", "f", "lp", "la", "lf", "rp", "ra", "rf"};

/// lp <-> rp, la <-> ra, lf <-> rf; p and f fixed.
inline Slot mirror_slot(Slot s) {
  switch (s) {
    case Slot::LP: return Slot::RP;
    case Slot::LA: return Slot::RA;
    case Slot::LF: return Slot::RF;
    case Slot::RP: return Slot::LP;
    case Slot::RA: return Slot::LA;
    case Slot::RF: return Slot::LF;
    default: return s;
  }
}

inline constexpr double kRampLateralLimit = 6.0;  // m

struct VehicleAtFrame {
  int track_id = 0;
  FrenetState state;
  double length = 4.5;
  bool on_ramp = false;
};

struct Neighbor {
  int track_id = 0;
  FrenetState state;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

enum class SceneInvalidReason { None, DoubleAlongside };

struct SceneFrame {
  int target_id = 0;
  long long frame = 0;
  FrenetState target;
  double target_length = 0.0;
  std::array<std::optional<Neighbor>, kSlotCount> neighbors{};
  int left_alongside_count = 0;
  int right_alongside_count = 0;
  // Lateral offset of the adjacent lane centers from the target's lane center.
  double left_lane_offset = 0.0;
  double right_lane_offset = 0.0;
  bool valid = true;
  SceneInvalidReason reason = SceneInvalidReason::None;

  const std::optional<Neighbor>& at(Slot s) const { return neighbors[static_cast<std::size_t>(s)]; }
  std::optional<Neighbor>& at(Slot s) { return neighbors[static_cast<std::size_t>(s)]; }

  friend bool operator==(const SceneFrame&, const SceneFrame&) = default;
};

namespace detail {

// Candidate c beats incumbent when strictly nearer, ties to the lower track id.
inline bool nearer(double d_c, int id_c, double d_inc, int id_inc) {
  return d_c < d_inc || (d_c == d_inc && id_c < id_inc);
}

}  // namespace detail

/// Lane bands come from the lane-center offsets; longitudinal classes from
/// extent overlap (alongside) or the sign of ds (preceding/following).
/// Ramp vehicles are admitted only within 6 m laterally.
inline SceneFrame assign_neighbors(std::span<const VehicleAtFrame> vehicles, int target_id, const DirectionLanes& lanes,
                                   long long frame = 0) {
  SceneFrame scene;
  scene.target_id = target_id;
  scene.frame = frame;
  const VehicleAtFrame* target = nullptr;
  for (const auto& v : vehicles) {
    if (v.track_id == target_id) target = &v;
  }
  if (!target) throw Error(ErrorCode::InvalidScene, "target " + std::to_string(target_id) + " not at frame");
  scene.target = target->state;
  scene.target_length = target->length;

  const std::size_t own = lanes.nearest_lane(target->state.l);
  const auto left = lanes.left_of(own);
  const auto right = lanes.right_of(own);
  const double half = lanes.lane_width / 2.0;
  const double own_c = lanes.lane_centers[own];
  scene.left_lane_offset = left ? lanes.lane_centers[*left] - own_c : lanes.lane_width;
  scene.right_lane_offset = right ? lanes.lane_centers[*right] - own_c : -lanes.lane_width;

  std::array<double, kSlotCount> best_d;
  best_d.fill(std::numeric_limits<double>::infinity());

  for (const auto& c : vehicles) {
    if (c.track_id == target_id) continue;
    const double dl = c.state.l - target->state.l;
    const double ds = c.state.s - target->state.s;
    if (c.on_ramp && std::abs(dl) > kRampLateralLimit) continue;

    int side;  // 0 same lane, +1 left, -1 right
    if (std::abs(c.state.l - own_c) <= half) side = 0;
    else if (left && std::abs(c.state.l - lanes.lane_centers[*left]) <= half) side = 1;
    else if (right && std::abs(c.state.l - lanes.lane_centers[*right]) <= half) side = -1;
    else continue;

    const bool alongside = std::abs(ds) < (c.length + target->length) / 2.0;
    Slot slot;
    if (alongside) {
      if (side == 0) continue;
      slot = side > 0 ? Slot::LA : Slot::RA;
      (side > 0 ? scene.left_alongside_count : scene.right_alongside_count)++;
    } else if (ds > 0.0) {
      slot = side == 0 ? Slot::P : (side > 0 ? Slot::LP : Slot::RP);
    } else {
      slot = side == 0 ? Slot::F : (side > 0 ? Slot::LF : Slot::RF);
    }
    const std::size_t k = static_cast<std::size_t>(slot);
    const double d = std::abs(ds);
    auto& cur = scene.neighbors[k];
    if (!cur || detail::nearer(d, c.track_id, best_d[k], cur->track_id)) {
      cur = Neighbor{c.track_id, c.state};
      best_d[k] = d;
    }
  }
  return scene;
}

/// Invalid when two or more vehicles are alongside on the same side.
inline SceneFrame validate_scene(SceneFrame scene) {
  if (scene.left_alongside_count >= 2 || scene.right_alongside_count >= 2) {
    scene.valid = false;
    scene.reason = SceneInvalidReason::DoubleAlongside;
  } else {
    scene.valid = true;
    scene.reason = SceneInvalidReason::None;
  }
  return scene;
}

/// Lateral reflection: l, l_dot negated for every vehicle, left/right slots swapped.
inline SceneFrame mirror_scene(const SceneFrame& in) {
  SceneFrame out = in;
  auto flip = [](FrenetState st) {
    st.l = -st.l;
    st.l_dot = -st.l_dot;
    return st;
  };
  out.target = flip(in.target);
  for (std::size_t k = 0; k < kSlotCount; ++k) {
    const auto& n = in.neighbors[k];
    const std::size_t m = static_cast<std::size_t>(mirror_slot(static_cast<Slot>(k)));
    if (n) out.neighbors[m] = Neighbor{n->track_id, flip(n->state)};
    else out.neighbors[m].reset();
  }
  out.left_alongside_count = in.right_alongside_count;
  out.right_alongside_count = in.left_alongside_count;
  out.left_lane_offset = -in.right_lane_offset;
  out.right_lane_offset = -in.left_lane_offset;
  return out;
}

}  // namespace lcip
