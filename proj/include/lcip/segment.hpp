#pragma once

// Lane-change instants and labeled observation windows.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/frenet.hpp"
#include "lcip/ingest.hpp"

namespace lcip {

enum class LcDirection { Left, Right };

struct LcInstant {
  int track_id = 0;
  long long frame = 0;
  LcDirection direction = LcDirection::Left;

  friend bool operator==(const LcInstant&, const LcInstant&) = default;
};

struct Segment {
  std::string dataset_tag;
  int track_id = 0;
  long long start_frame = 0;
  long long end_frame = 0;  // inclusive
  Label label = Label::LK;
  std::optional<double> prediction_time;  // seconds, LC segments only

  long long length() const { return end_frame - start_frame + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentOptions {
  double observation_s = 2.0;      // window length
  double max_prediction_s = 4.0;   // upper bound of the prediction horizon
  int retries = 10;                // extra prediction-time draws per instant
};

inline long long frames_for(double seconds, double frequency_hz) {
  return std::llround(seconds * frequency_hz);
}

/// One instant per change of the nearest lane center between consecutive
/// frames; Left when the new lane center lies at larger l (left of travel).
inline std::vector<LcInstant> detect_lc_instants(int track_id, long long first_frame,
                                                 std::span<const FrenetState> states, const DirectionLanes& lanes) {
  std::vector<LcInstant> out;
  if (states.empty()) return out;
  std::size_t prev = lanes.nearest_lane(states[0].l);
  for (std::size_t i = 1; i < states.size(); ++i) {
    const std::size_t cur = lanes.nearest_lane(states[i].l);
    if (cur != prev) {
      const auto dir = lanes.lane_centers[cur] > lanes.lane_centers[prev] ? LcDirection::Left : LcDirection::Right;
      out.push_back({track_id, first_frame + static_cast<long long>(i), dir});
    }
    prev = cur;
  }
  return out;
}

/// Frames of one track with the per-frame frames-of-interest flag.
struct TrackWindowContext {
  int track_id = 0;
  long long first_frame = 0;
  std::vector<bool> of_interest;  // indexed by frame - first_frame
  double frequency_hz = 25.0;

  long long last_frame() const { return first_frame + static_cast<long long>(of_interest.size()) - 1; }
};

namespace detail {

inline bool window_clean(const TrackWindowContext& ctx, long long start, long long end,
                         std::span<const LcInstant> instants) {
  if (start < ctx.first_frame || end > ctx.last_frame() || start > end) return false;
  for (long long f = start; f <= end; ++f) {
    if (!ctx.of_interest[static_cast<std::size_t>(f - ctx.first_frame)]) return false;
  }
  for (const auto& in : instants) {
    if (in.frame >= start && in.frame <= end) return false;
  }
  return true;
}

}  // namespace detail

inline double draw_prediction_time(Rng& rng, double max_prediction_s) { return uniform(rng, 0.0, max_prediction_s); }

/// Window of the observation length ending a uniformly drawn prediction
/// time before the instant; redrawn up to options.retries times.
inline std::optional<Segment> cut_lc_segment(const TrackWindowContext& ctx, std::span<const LcInstant> instants,
                                             const LcInstant& instant, const SegmentOptions& opt, Rng& rng,
                                             const std::string& dataset_tag = "") {
  const long long n = frames_for(opt.observation_s, ctx.frequency_hz);
  for (int attempt = 0; attempt <= opt.retries; ++attempt) {
    const double tp = draw_prediction_time(rng, opt.max_prediction_s);
    const long long end = instant.frame - frames_for(tp, ctx.frequency_hz);
    const long long start = end - n + 1;
    if (detail::window_clean(ctx, start, end, instants)) {
      Segment seg;
      seg.dataset_tag = dataset_tag;
      seg.track_id = ctx.track_id;
      seg.start_frame = start;
      seg.end_frame = end;
      seg.label = instant.direction == LcDirection::Left ? Label::LLC : Label::RLC;
      seg.prediction_time = tp;
      return seg;
    }
  }
  return std::nullopt;
}

/// Uniform choice among windows of frames of interest that contain no
/// instant and do not end within the prediction horizon before one.
inline std::optional<Segment> sample_lk_segment(const TrackWindowContext& ctx, std::span<const LcInstant> instants,
                                                const SegmentOptions& opt, Rng& rng,
                                                const std::string& dataset_tag = "") {
  const long long n = frames_for(opt.observation_s, ctx.frequency_hz);
  const long long horizon = frames_for(opt.max_prediction_s, ctx.frequency_hz);
  const std::size_t len = ctx.of_interest.size();
  if (static_cast<long long>(len) < n) return std::nullopt;
  // bad[i] = number of non-interest frames among the first i.
  std::vector<long long> bad(len + 1, 0);
  for (std::size_t i = 0; i < len; ++i) bad[i + 1] = bad[i] + (ctx.of_interest[i] ? 0 : 1);

  std::vector<long long> starts;
  for (long long s = ctx.first_frame; s + n - 1 <= ctx.last_frame(); ++s) {
    const long long e = s + n - 1;
    const auto i0 = static_cast<std::size_t>(s - ctx.first_frame);
    if (bad[i0 + static_cast<std::size_t>(n)] - bad[i0] != 0) continue;
    bool ok = true;
    for (const auto& in : instants) {
      // Contained, or ahead of the window end by at most the horizon.
      if (in.frame >= s && in.frame - e <= horizon) {
        ok = false;
        break;
      }
    }
    if (ok) starts.push_back(s);
  }
  if (starts.empty()) return std::nullopt;
  const long long s = starts[uniform_index(rng, starts.size())];
  Segment seg;
  seg.dataset_tag = dataset_tag;
  seg.track_id = ctx.track_id;
  seg.start_frame = s;
  seg.end_frame = s + n - 1;
  seg.label = Label::LK;
  return seg;
}

inline std::string segments_csv(const std::vector<Segment>& segs) {
  std::string out = "datasetTag,trackId,startFrame,endFrame,label,predTime\n";
  for (const auto& s : segs) {
    out += s.dataset_tag + ',' + std::to_string(s.track_id) + ',' + std::to_string(s.start_frame) + ',' +
           std::to_string(s.end_frame) + ',' + std::string(label_name(s.label)) + ',' +
           (s.prediction_time ? csv::format_double(*s.prediction_time) : std::string()) + '\n';
  }
  return out;
}

inline std::vector<Segment> read_segments_csv(const std::filesystem::path& file) {
  const auto t = csv::Table::read(file);
  const auto c_tag = t.column("datasetTag"), c_tid = t.column("trackId"), c_s = t.column("startFrame"),
             c_e = t.column("endFrame"), c_l = t.column("label"), c_p = t.column("predTime");
  std::vector<Segment> out;
  for (std::size_t r = 0; r < t.size(); ++r) {
    Segment s;
    s.dataset_tag = std::string(t.at(r, c_tag));
    s.track_id = static_cast<int>(csv::to_int(t.at(r, c_tid), "trackId"));
    s.start_frame = csv::to_int(t.at(r, c_s), "startFrame");
    s.end_frame = csv::to_int(t.at(r, c_e), "endFrame");
    s.label = parse_label(t.at(r, c_l));
    if (!t.at(r, c_p).empty()) s.prediction_time = csv::to_double(t.at(r, c_p), "predTime");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string instants_csv(const std::vector<LcInstant>& instants) {
  std::string out = "trackId,frame,direction\n";
  for (const auto& in : instants) {
    out += std::to_string(in.track_id) + ',' + std::to_string(in.frame) + ',' +
           (in.direction == LcDirection::Left ? "Left" : "Right") + '\n';
  }
  return out;
}

inline std::vector<LcInstant> read_instants_csv(const std::filesystem::path& file) {
  const auto t = csv::Table::read(file);
  const auto c_tid = t.column("trackId"), c_f = t.column("frame"), c_d = t.column("direction");
  std::vector<LcInstant> out;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const auto d = t.at(r, c_d);
    if (d != "Left" && d != "Right") throw Error(ErrorCode::MalformedRow, "direction " + std::string(d));
    out.push_back({static_cast<int>(csv::to_int(t.at(r, c_tid), "trackId")), csv::to_int(t.at(r, c_f), "frame"),
                   d == "Left" ? LcDirection::Left : LcDirection::Right});
  }
  return out;
}

}  // namespace lcip
