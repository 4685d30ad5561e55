#include <gtest/gtest.h>

#include "lcip/frenet.hpp"
#include "lcip/ingest.hpp"
#include "lcip/segment.hpp"
#include "lcip/synth.hpp"
#include "test_util.hpp"

namespace lcip {
namespace {

// Straight road without ramp so that the median line is an exact reference path.
PopulationParams straight(PopulationParams p, int n_tracks, double duration_s) {
  p.radius_m = 0.0;
  p.on_ramp = false;
  p.n_tracks = n_tracks;
  p.duration_s = duration_s;
  return p;
}

struct Converted {
  SynthOutput out;
  std::vector<std::vector<FrenetState>> states;  // per track
  std::vector<LcInstant> detected;
};

Converted convert(const PopulationParams& p) {
  Converted c;
  c.out = generate_population(p);
  const auto forward = test::straight_path(1481, 0.5, -20.0);
  const auto backward = reverse_path(forward, "backward");
  const auto& loc = c.out.bundle.location_id;
  for (const auto& t : c.out.bundle.tracks) {
    const auto& lanes = track_direction(t, loc, c.out.lane_config);
    const auto states = track_to_frenet(lanes.direction == "forward" ? forward : backward, t);
    const auto inst = detect_lc_instants(t.track_id, t.first_frame(), states, lanes);
    c.detected.insert(c.detected.end(), inst.begin(), inst.end());
    c.states.push_back(states);
  }
  return c;
}

void expect_matches_truth(const Converted& c) {
  ASSERT_EQ(c.detected.size(), c.out.truth.size());
  std::size_t matched = 0;
  for (const auto& t : c.out.truth) {
    for (const auto& d : c.detected) {
      if (d.track_id == t.track_id && d.direction == t.direction && std::llabs(d.frame - t.frame) <= 2) {
        ++matched;
        break;
      }
    }
  }
  EXPECT_EQ(matched, c.out.truth.size());
}

TEST(Synth, PresetsAreValidAndRoundTripJson) {
  for (const auto& p : {population_a(), population_b()}) {
    EXPECT_NO_THROW(p.validate());
    EXPECT_EQ(PopulationParams::from_json(p.to_json()).to_json(), p.to_json());
    EXPECT_LE(p.quintic_peak_velocity(), p.max_lateral_velocity);
  }
  EXPECT_EQ(population_b().drive_side, DriveSide::Left);
  EXPECT_DOUBLE_EQ(population_b().frequency_hz, 30.0);
  EXPECT_DOUBLE_EQ(population_b().lc_duration_s, 2.0 * population_a().lc_duration_s);
}

TEST(Synth, InvalidParamsRejected) {
  auto expect_invalid = [](PopulationParams p) {
    try {
      p.validate();
      ADD_FAILURE() << p.to_json().dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidParams);
    }
  };
  PopulationParams p = population_a();
  p.lc_duration_s = 10.0;
  expect_invalid(p);
  p = population_a();
  p.lane_width_m = -1.0;
  expect_invalid(p);
  p = population_a();
  p.lc_duration_s = 1.0;  // peak lateral velocity above the bound
  expect_invalid(p);
  p = population_a();
  p.drift_displacement_m = 2.0;
  expect_invalid(p);
  p = population_a();
  p.lc_probability = 1.5;
  expect_invalid(p);
  EXPECT_THROW(generate_population(p), Error);
}

TEST(Synth, SameSeedSameFiles) {
  test::TempDir a("synth_a"), b("synth_b"), c("synth_c");
  PopulationParams p = population_a();
  p.n_tracks = 40;
  p.duration_s = 90.0;
  write_population(generate_population(p), a.path());
  write_population(generate_population(p), b.path());
  p.seed += 1;
  write_population(generate_population(p), c.path());
  for (const char* f : {"tracks.csv", "recordingMeta.csv", "groundtruth_lc.csv", "lane_config.json"}) {
    EXPECT_EQ(csv::read_text(a / f), csv::read_text(b / f)) << f;
  }
  EXPECT_NE(csv::read_text(a / "tracks.csv"), csv::read_text(c / "tracks.csv"));
}

TEST(Synth, TracksGapFreeInBoundsAndKinematicallyConsistent) {
  for (const auto& base : {population_a(), population_b()}) {
    const PopulationParams p = straight(base, 80, 120.0);
    const auto out = generate_population(p);
    ASSERT_FALSE(out.bundle.tracks.empty());
    const double dt = 1.0 / p.frequency_hz;
    const double y_max = p.median_width_m / 2.0 + (p.lanes_per_direction + 1) * p.lane_width_m;
    for (const auto& t : out.bundle.tracks) {
      for (std::size_t k = 0; k < t.frames.size(); ++k) {
        const auto& f = t.frames[k];
        if (k > 0) ASSERT_EQ(f.frame, t.frames[k - 1].frame + 1);
        ASSERT_GE(f.x, 0.0);
        ASSERT_LE(f.x, p.road_length_m);
        ASSERT_LE(std::abs(f.y), y_max);
        if (k == 0 || k + 1 == t.frames.size()) continue;
        const double vx = (t.frames[k + 1].x - t.frames[k - 1].x) / (2.0 * dt);
        const double vy = (t.frames[k + 1].y - t.frames[k - 1].y) / (2.0 * dt);
        const double scale = std::max(std::hypot(f.vx, f.vy), 1.0);
        ASSERT_LE(std::hypot(vx - f.vx, vy - f.vy), 0.01 * scale) << t.track_id << " " << k;
      }
    }
  }
}

TEST(Synth, NoLaneChangesWithoutProbability) {
  for (const auto& base : {population_a(), population_b()}) {
    PopulationParams p = straight(base, 120, 150.0);
    p.lc_probability = 0.0;
    const auto c = convert(p);
    EXPECT_TRUE(c.out.truth.empty());
    EXPECT_TRUE(c.detected.empty());
  }
}

TEST(Synth, DetectedInstantsMatchSidecarTruth) {
  for (const auto& base : {population_a(), population_b()}) {
    const auto c = convert(straight(base, 300, 300.0));
    EXPECT_GT(c.out.truth.size(), 50u);
    expect_matches_truth(c);
    // The sidecar file carries the same instants.
    test::TempDir dir("synth_truth");
    write_population(c.out, dir.path());
    EXPECT_EQ(read_instants_csv(dir / "groundtruth_lc.csv"), c.out.truth);
  }
}

TEST(Synth, LaneChangeDurationShowsInLateralVelocity) {
  auto peak_ldot = [](double duration) {
    PopulationParams p = straight(population_a(), 300, 300.0);
    p.lc_duration_s = duration;
    p.drift_displacement_m = 0.0;
    const auto c = convert(p);
    std::vector<double> v;
    for (const auto& in : c.out.truth) {
      for (std::size_t i = 0; i < c.out.bundle.tracks.size(); ++i) {
        const auto& t = c.out.bundle.tracks[i];
        if (t.track_id != in.track_id) continue;
        v.push_back(std::abs(c.states[i][static_cast<std::size_t>(in.frame - t.first_frame())].l_dot));
      }
    }
    return v;
  };
  const auto fast = peak_ldot(3.0), slow = peak_ldot(6.0);
  ASSERT_GT(fast.size(), 30u);
  ASSERT_GT(slow.size(), 30u);
  EXPECT_LT(test::ks_two_sample_pvalue(fast, slow), 0.01);
  // Mid-maneuver lateral speed is close to the quintic peak 15 W / (8 D).
  double mean_fast = 0.0;
  for (double v : fast) mean_fast += v / static_cast<double>(fast.size());
  EXPECT_NEAR(mean_fast, 15.0 * 3.75 / (8.0 * 3.0), 0.4);
}

}  // namespace
}  // namespace lcip
