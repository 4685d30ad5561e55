#include <gtest/gtest.h>

#include "lcip/frenet.hpp"
#include "lcip/scene.hpp"
#include "test_util.hpp"

namespace lcip {
namespace {

constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------- frenet

TEST(Frenet, NearestIndexCoincidentAndTie) {
  const auto p = test::straight_path(40);
  EXPECT_EQ(nearest_reference_index(p, p.points[17]), 17u);
  EXPECT_EQ(nearest_reference_index(p, {4.5, 2.0}), 4u);
}

TEST(Frenet, GridIndexMatchesLinearScan) {
  const auto p = test::arc_path(150.0, 3000, 0.0, 4.0);
  const NearestPointIndex index(p);
  Rng rng(9);
  for (int k = 0; k < 10000; ++k) {
    const Point2 q{uniform(rng, -250.0, 250.0), uniform(rng, -250.0, 250.0)};
    ASSERT_EQ(index.nearest(q), nearest_reference_index(p, q)) << q.x << "," << q.y;
  }
  // Exact ties on a straight grid path.
  const auto s = test::straight_path(100);
  const NearestPointIndex sidx(s, 3.0);
  for (int k = 0; k < 99; ++k) EXPECT_EQ(sidx.nearest({k + 0.5, 1.0}), static_cast<std::size_t>(k));
}

TEST(Frenet, AxisAlignedStraightPath) {
  const auto p = test::straight_path(101);
  const auto st = to_frenet(p, 10.0, -3.0, 20.0, 0.0, 0.0);
  EXPECT_EQ(st.s, 10.0);
  EXPECT_EQ(st.l, -3.0);
  EXPECT_EQ(st.s_dot, 20.0);
  EXPECT_EQ(st.l_dot, 0.0);
  EXPECT_FALSE(st.gated);
  const auto first = to_frenet(p, 0.0, 1.0, 5.0, 0.0, 0.0);
  EXPECT_EQ(first.s, 0.0);
  EXPECT_EQ(first.ref_index, 0u);
  for (int x = 0; x <= 100; x += 7) {
    for (double y : {-7.5, -0.25, 0.0, 4.0}) {
      const auto q = to_frenet(p, x, y, 30.0, 0.0, 0.0);
      EXPECT_NEAR(q.s, x, 1e-9);
      EXPECT_NEAR(q.l, y, 1e-9);
    }
  }
}

TEST(Frenet, ConcentricCircleClosedForm) {
  const double r = 100.0;
  const std::size_t n = 2000;
  const auto p = test::arc_path(r, n);
  for (std::size_t i = 100; i < n - 100; i += 97) {
    const double a = 2.0 * kPi * static_cast<double>(i) / n;
    for (double rad : {97.0, 103.0}) {
      const double v = 20.0;
      const double x = rad * std::cos(a), y = rad * std::sin(a);
      const double th = a + kPi / 2.0;
      const auto st = to_frenet(p, x, y, v * std::cos(th), v * std::sin(th), th);
      const double l = r - rad;  // CCW path: the centre is on the left
      EXPECT_EQ(st.ref_index, i);
      EXPECT_NEAR(st.l, l, 1e-9);
      const double k = p.curvature[i];
      EXPECT_NEAR(k, 1.0 / r, 0.01 / r);
      EXPECT_NEAR(st.s_dot, v / (1.0 - k * l) * std::cos(th - p.tangent[i]), 1e-9);
      EXPECT_NEAR(st.s_dot, v * r / rad, 0.01 * v);
      EXPECT_NEAR(st.l_dot, 0.0, 1e-6 * v);
      EXPECT_TRUE(st.gated);  // |k| = 0.01 > 0.001
    }
  }
}

TEST(Frenet, RigidMotionInvariance) {
  const auto path = test::arc_path(400.0, 4000, 0.0, 2.0);
  const auto track = test::arc_track(396.0, 300, 25.0, 25.0);
  const auto base = track_to_frenet(path, track);
  for (double phi : {0.7, -2.1, 3.0}) {
    const Point2 shift{1234.5, -987.25};
    const auto moved = track_to_frenet(test::transform(path, phi, shift), test::transform(track, phi, shift));
    ASSERT_EQ(moved.size(), base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
      EXPECT_EQ(moved[k].ref_index, base[k].ref_index);
      EXPECT_NEAR(moved[k].s, base[k].s, 1e-9);
      EXPECT_NEAR(moved[k].l, base[k].l, 1e-9);
      EXPECT_NEAR(moved[k].s_dot, base[k].s_dot, 1e-9);
      EXPECT_NEAR(moved[k].l_dot, base[k].l_dot, 1e-9);
    }
  }
}

TEST(Frenet, LdotFormulaSwitch) {
  const auto p = test::straight_path(200);
  // 1 m per frame on a 1 m path grid: every frame matches a node exactly.
  const Track t = test::make_track(1, 100, 0, 10.0, -5.0, 25.0, 0.0, 25.0, 1);
  FrenetOptions cos_opt;
  cos_opt.ldot_formula = LdotFormula::PaperCos;
  const auto sin_states = track_to_frenet(p, t);
  const auto cos_states = track_to_frenet(p, t, cos_opt);
  for (std::size_t k = 0; k < t.frames.size(); ++k) {
    EXPECT_LT(std::abs(sin_states[k].l_dot), 1e-9);
    EXPECT_EQ(sin_states[k].l, -5.0);
    EXPECT_NEAR(cos_states[k].l_dot, 25.0, 1e-9);  // the printed cosine gives |l_dot| = v
    EXPECT_EQ(cos_states[k].s_dot, sin_states[k].s_dot);
  }
  EXPECT_EQ(parse_ldot_formula("paper_cos"), LdotFormula::PaperCos);
  EXPECT_EQ(ldot_formula_name(LdotFormula::Sin), "sin");
  EXPECT_THROW(parse_ldot_formula("tan"), Error);
}

TEST(Frenet, MirroredTrackFlipsLateralSign) {
  const auto p = test::straight_path(200);
  const Track t = test::make_track(1, 50, 0, 5.0, 2.0, 30.0, 0.5, 25.0, 1);
  Track m = t;
  for (auto& f : m.frames) {
    f.y = -f.y;
    f.vy = -f.vy;
  }
  const auto a = track_to_frenet(p, t), b = track_to_frenet(p, m);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(b[k].l, -a[k].l);
    EXPECT_NEAR(b[k].l_dot, -a[k].l_dot, 1e-12);
  }
}

TEST(Frenet, CurvatureGateOnArcSection) {
  // straight, then an R = 500 arc (k = 0.002), then straight.
  std::vector<Point2> pts;
  for (int i = 0; i < 200; ++i) pts.push_back({static_cast<double>(i) - 200.0, 0.0});
  const double r = 500.0;
  for (int i = 0; i < 200; ++i) {
    const double a = i / r;
    pts.push_back({r * std::sin(a), r - r * std::cos(a)});
  }
  const double a_end = 200.0 / r;
  const Point2 e{r * std::sin(a_end), r - r * std::cos(a_end)};
  for (int i = 0; i < 200; ++i) pts.push_back({e.x + i * std::cos(a_end), e.y + i * std::sin(a_end)});
  const auto path = test::path_from_points(pts);

  Track t;
  t.track_id = 1;
  t.width = 1.8;
  t.length = 4.5;
  for (std::size_t i = 0; i < pts.size(); i += 4) {
    TrackPoint tp;
    tp.frame = static_cast<long long>(t.frames.size());
    const double th = path.tangent[i];
    tp.x = pts[i].x + 2.0 * std::sin(th);
    tp.y = pts[i].y - 2.0 * std::cos(th);
    tp.vx = 25.0 * std::cos(th);
    tp.vy = 25.0 * std::sin(th);
    t.frames.push_back(tp);
  }
  const auto st = track_to_frenet(path, t);
  std::size_t gated = 0;
  for (std::size_t k = 0; k < st.size(); ++k) {
    EXPECT_EQ(st[k].gated, std::abs(path.curvature[st[k].ref_index]) > 0.001);
    gated += st[k].gated;
    if (k > 0) EXPECT_GE(st[k].s, st[k - 1].s);
    EXPECT_NEAR(st[k].l, -2.0, 0.05);
  }
  EXPECT_GE(gated, 45u);
  EXPECT_LE(gated, 55u);
}

TEST(Frenet, KinematicConsistency) {
  const auto path = test::arc_path(2000.0, 40000, 0.0, 1.0);  // 0.05 m spacing
  const double hz = 25.0;
  Track t;
  t.track_id = 1;
  t.width = 1.8;
  t.length = 4.5;
  const double rad = 1996.0, v = 30.0;
  for (std::size_t k = 0; k < 500; ++k) {
    const double a = 0.1 + v * k / hz / rad;
    t.frames.push_back({static_cast<long long>(k), rad * std::cos(a), rad * std::sin(a), -v * std::sin(a),
                        v * std::cos(a), 1, {}});
  }
  const auto st = track_to_frenet(path, t);
  for (std::size_t k = 0; k + 25 < st.size(); k += 25) {
    double mean = 0.0;
    for (std::size_t j = k; j < k + 25; ++j) mean += st[j].s_dot;
    mean /= 25.0;
    const double fd = (st[k + 25].s - st[k].s) * hz / 25.0;
    EXPECT_NEAR(fd, mean, 0.02 * mean);
  }
}

TEST(Frenet, SingularProjectionGatesOrThrows) {
  const auto p = test::arc_path(10.0, 400);
  // Vehicle at the circle centre: l = 10 = 1/k.
  const auto st = to_frenet_at(p, 50, 0.0, 0.0, 1.0, 0.0, 0.0);
  EXPECT_TRUE(st.singular);
  EXPECT_TRUE(st.gated);
  EXPECT_THROW(to_frenet(p, 0.0, 0.0, 1.0, 0.0, 0.0), Error);
}

TEST(Frenet, CsvRoundTrip) {
  test::TempDir dir("frenet_csv");
  const auto p = test::arc_path(300.0, 1000, 0.0, 1.0);
  const auto t = test::arc_track(297.0, 50, 20.0, 25.0);
  const auto st = track_to_frenet(p, t);
  std::vector<FrenetRow> rows;
  for (std::size_t k = 0; k < st.size(); ++k) rows.push_back({t.track_id, t.frames[k].frame, st[k]});
  csv::write_text(dir / "f.csv", frenet_csv(rows));
  const auto back = read_frenet_csv(dir / "f.csv");
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(back[k].state.s, rows[k].state.s);
    EXPECT_EQ(back[k].state.l_dot, rows[k].state.l_dot);
    EXPECT_EQ(back[k].state.gated, rows[k].state.gated);
  }
}

// ---------------------------------------------------------------- scene

DirectionLanes lanes3() {
  DirectionLanes d;
  d.direction = "east";
  d.lanes = {1, 2, 3};
  d.lane_centers = {-1.875, -5.625, -9.375};
  d.lane_width = 3.75;
  return d;
}

VehicleAtFrame veh(int id, double s, double l, double length = 4.5, bool ramp = false) {
  VehicleAtFrame v;
  v.track_id = id;
  v.state.s = s;
  v.state.l = l;
  v.length = length;
  v.on_ramp = ramp;
  return v;
}

int slot_id(const SceneFrame& sc, Slot s) { return sc.at(s) ? sc.at(s)->track_id : -1; }

TEST(Scene, SingleVehicleAhead) {
  const std::vector<VehicleAtFrame> vs = {veh(1, 100, -5.625), veh(2, 130, -5.7)};
  const auto sc = validate_scene(assign_neighbors(vs, 1, lanes3()));
  EXPECT_EQ(slot_id(sc, Slot::P), 2);
  for (std::size_t k = 1; k < kSlotCount; ++k) EXPECT_FALSE(sc.neighbors[k].has_value());
  EXPECT_TRUE(sc.valid);
}

TEST(Scene, RampLateralLimit) {
  DirectionLanes d = lanes3();
  d.lane_centers = {-1.875, -5.625, -12.825};  // ramp lane center 7.2 m right of lane 2
  d.lane_types[3] = LaneType::OnRamp;
  const std::vector<VehicleAtFrame> far = {veh(1, 100, -5.625), veh(2, 120, -12.825, 4.5, true)};
  const auto a = assign_neighbors(far, 1, d);
  for (const auto& n : a.neighbors) EXPECT_FALSE(n.has_value());
  const std::vector<VehicleAtFrame> near = {veh(1, 100, -5.625), veh(2, 120, -11.5, 4.5, true)};
  EXPECT_EQ(slot_id(assign_neighbors(near, 1, d), Slot::RP), 2);
}

TEST(Scene, DoubleAlongsideInvalidates) {
  const std::vector<VehicleAtFrame> vs = {veh(1, 100, -5.625), veh(2, 101, -1.875), veh(3, 97, -2.0)};
  const auto sc = validate_scene(assign_neighbors(vs, 1, lanes3()));
  EXPECT_FALSE(sc.valid);
  EXPECT_EQ(sc.reason, SceneInvalidReason::DoubleAlongside);
  EXPECT_EQ(sc.left_alongside_count, 2);
}

TEST(Scene, FullAndEmptyScenesAreValid) {
  const std::vector<VehicleAtFrame> full = {veh(1, 100, -5.625), veh(2, 130, -5.6), veh(3, 70, -5.6),
                                            veh(4, 120, -1.9),   veh(5, 101, -1.9), veh(6, 80, -1.9),
                                            veh(7, 125, -9.4),   veh(8, 99, -9.4),  veh(9, 75, -9.4)};
  const auto sc = validate_scene(assign_neighbors(full, 1, lanes3()));
  EXPECT_TRUE(sc.valid);
  const std::array<int, kSlotCount> want = {2, 3, 4, 5, 6, 7, 8, 9};
  for (std::size_t k = 0; k < kSlotCount; ++k) EXPECT_EQ(slot_id(sc, static_cast<Slot>(k)), want[k]) << k;
  const std::vector<VehicleAtFrame> alone = {veh(1, 100, -5.625)};
  EXPECT_TRUE(validate_scene(assign_neighbors(alone, 1, lanes3())).valid);
  EXPECT_THROW(assign_neighbors(alone, 42, lanes3()), Error);
}

// Exhaustive oracle: every candidate is classified independently, then the
// nearest (ties: lowest id) is kept per slot.
std::array<int, kSlotCount> brute_force(const std::vector<VehicleAtFrame>& vs, int target, const DirectionLanes& d) {
  const VehicleAtFrame* t = nullptr;
  for (const auto& v : vs)
    if (v.track_id == target) t = &v;
  std::size_t own = 0;
  for (std::size_t i = 1; i < d.lane_centers.size(); ++i)
    if (std::abs(t->state.l - d.lane_centers[i]) < std::abs(t->state.l - d.lane_centers[own])) own = i;
  std::array<int, kSlotCount> ids;
  ids.fill(-1);
  std::array<double, kSlotCount> dist;
  dist.fill(1e300);
  for (const auto& c : vs) {
    if (c.track_id == target) continue;
    const double dl = c.state.l - t->state.l, ds = c.state.s - t->state.s;
    if (c.on_ramp && std::abs(dl) > 6.0) continue;
    int band = -99;
    for (std::size_t i = 0; i < d.lane_centers.size(); ++i) {
      if (std::abs(c.state.l - d.lane_centers[i]) > d.lane_width / 2.0) continue;
      const double off = d.lane_centers[i] - d.lane_centers[own];
      if (i == own) band = 0;
      else if (std::abs(std::abs(off) - d.lane_width) < 1e-9) band = off > 0 ? 1 : -1;
      break;
    }
    if (band == -99) continue;
    const bool overlap = c.state.s - c.length / 2 < t->state.s + t->length / 2 &&
                         t->state.s - t->length / 2 < c.state.s + c.length / 2;
    Slot s;
    if (overlap) {
      if (band == 0) continue;
      s = band > 0 ? Slot::LA : Slot::RA;
    } else if (ds > 0) {
      s = band == 0 ? Slot::P : band > 0 ? Slot::LP : Slot::RP;
    } else {
      s = band == 0 ? Slot::F : band > 0 ? Slot::LF : Slot::RF;
    }
    const auto k = static_cast<std::size_t>(s);
    if (std::abs(ds) < dist[k] || (std::abs(ds) == dist[k] && c.track_id < ids[k])) {
      dist[k] = std::abs(ds);
      ids[k] = c.track_id;
    }
  }
  return ids;
}

TEST(Scene, RandomScenesMatchBruteForce) {
  const auto d = lanes3();
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<VehicleAtFrame> vs;
    for (int i = 0; i < 20; ++i) {
      const double s = std::round(uniform(rng, -60.0, 60.0) * 4.0) / 4.0;  // quantized to create ties
      const double l = uniform(rng, -12.0, 0.5);
      vs.push_back(veh(i + 1, s, l, uniform(rng, 3.5, 16.0), uniform01(rng) < 0.1));
    }
    vs[0].state.l = d.lane_centers[uniform_index(rng, 3)] + uniform(rng, -1.5, 1.5);
    vs[0].on_ramp = false;
    const auto sc = assign_neighbors(vs, 1, d);
    const auto want = brute_force(vs, 1, d);
    for (std::size_t k = 0; k < kSlotCount; ++k) {
      ASSERT_EQ(slot_id(sc, static_cast<Slot>(k)), want[k]) << "trial " << trial << " slot " << kSlotNames[k];
    }
    // Mirroring the scene equals assigning on mirrored inputs.
    auto mv = vs;
    for (auto& v : mv) v.state.l = -v.state.l;
    const auto direct = assign_neighbors(mv, 1, d.mirrored());
    const auto mirrored = mirror_scene(sc);
    for (std::size_t k = 0; k < kSlotCount; ++k) {
      ASSERT_EQ(slot_id(direct, static_cast<Slot>(k)), slot_id(mirrored, static_cast<Slot>(k)));
    }
    EXPECT_EQ(mirror_scene(mirrored), sc);
    EXPECT_EQ(assign_neighbors(vs, 1, d), sc);
  }
}

TEST(Scene, MirrorSlotInvolution) {
  for (std::size_t k = 0; k < kSlotCount; ++k) {
    const auto s = static_cast<Slot>(k);
    EXPECT_EQ(mirror_slot(mirror_slot(s)), s);
  }
  EXPECT_EQ(mirror_slot(Slot::P), Slot::P);
  EXPECT_EQ(mirror_slot(Slot::LA), Slot::RA);
}

}  // namespace
}  // namespace lcip
