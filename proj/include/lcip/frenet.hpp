#pragma once

// Cartesian -> Frenet conversion against a discrete reference path:
// nearest reference point, signed lateral offset, projected velocities,
// and the reference-curvature gate.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/ingest.hpp"
#include "lcip/refpath.hpp"

namespace lcip {

/// Lateral velocity formula. PaperCos reproduces the printed v*cos(dtheta),
/// which equals the longitudinal direction cosine; Sin is the kinematic one.
enum class LdotFormula { Sin, PaperCos };

inline std::string_view ldot_formula_name(LdotFormula f) { return f == LdotFormula::Sin ? "sin" : "paper_cos"; }

inline LdotFormula parse_ldot_formula(const std::string& s) {
  if (s == "sin") return LdotFormula::Sin;
  if (s == "paper_cos") return LdotFormula::PaperCos;
  throw Error(ErrorCode::InvalidConfig, "frenet.ldot_formula=" + s);
}

struct FrenetOptions {
  double curvature_threshold = 0.001;  // 1/m
  double singular_epsilon = 1e-6;
  LdotFormula ldot_formula = LdotFormula::Sin;
};

struct FrenetState {
  double s = 0.0;
  double l = 0.0;
  double s_dot = 0.0;
  double l_dot = 0.0;
  std::size_t ref_index = 0;  // 0-based; s == 0 iff ref_index == 0
  bool gated = false;         // curvature gate or singular projection
  bool singular = false;

  friend bool operator==(const FrenetState&, const FrenetState&) = default;
};

/// argmin_i |p - path_i|, ties to the smaller index.
inline std::size_t nearest_reference_index(const ReferencePath& path, const Point2& p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < path.size(); ++i) {
    const double d = distance_sq(path.points[i], p);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Uniform-grid bucket index over the reference points. Returns exactly
/// what the linear scan returns, ties included.
class NearestPointIndex {
 public:
  explicit NearestPointIndex(const ReferencePath& path, double cell_size = 0.0) : path_(&path) {
    const auto& pts = path.points;
    if (pts.empty()) return;
    if (cell_size <= 0.0) {
      const double len = path.cum_arclen.empty() ? 0.0 : path.cum_arclen.back();
      cell_size = std::max(1.0, 4.0 * len / static_cast<double>(std::max<std::size_t>(pts.size(), 1)));
    }
    cell_ = cell_size;
    min_i_ = max_i_ = cell_of(pts[0].x);
    min_j_ = max_j_ = cell_of(pts[0].y);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const long long i = cell_of(pts[k].x);
      const long long j = cell_of(pts[k].y);
      min_i_ = std::min(min_i_, i);
      max_i_ = std::max(max_i_, i);
      min_j_ = std::min(min_j_, j);
      max_j_ = std::max(max_j_, j);
      buckets_[key(i, j)].push_back(k);
    }
  }

  std::size_t nearest(const Point2& p) const {
    const auto& pts = path_->points;
    const long long ci = cell_of(p.x);
    const long long cj = cell_of(p.y);
    const long long di = ci < min_i_ ? min_i_ - ci : (ci > max_i_ ? ci - max_i_ : 0);
    const long long dj = cj < min_j_ ? min_j_ - cj : (cj > max_j_ ? cj - max_j_ : 0);
    const long long r_start = std::max(di, dj);
    const long long r_end = std::max({std::abs(ci - min_i_), std::abs(ci - max_i_), std::abs(cj - min_j_),
                                      std::abs(cj - max_j_)});
    std::size_t best = pts.size();
    double best_d = std::numeric_limits<double>::infinity();
    auto visit = [&](long long i, long long j) {
      if (i < min_i_ || i > max_i_ || j < min_j_ || j > max_j_) return;
      auto it = buckets_.find(key(i, j));
      if (it == buckets_.end()) return;
      for (std::size_t k : it->second) {
        const double d = distance_sq(pts[k], p);
        if (d < best_d || (d == best_d && k < best)) {
          best_d = d;
          best = k;
        }
      }
    };
    for (long long r = r_start; r <= r_end; ++r) {
      if (r == 0) {
        visit(ci, cj);
      } else {
        for (long long i = ci - r; i <= ci + r; ++i) {
          visit(i, cj - r);
          visit(i, cj + r);
        }
        for (long long j = cj - r + 1; j <= cj + r - 1; ++j) {
          visit(ci - r, j);
          visit(ci + r, j);
        }
      }
      // Unvisited cells lie at least r * cell away.
      const double bound = static_cast<double>(r) * cell_;
      if (best < pts.size() && best_d < bound * bound) break;
    }
    return best;
  }

 private:
  long long cell_of(double v) const { return static_cast<long long>(std::floor(v / cell_)); }
  static std::uint64_t key(long long i, long long j) {
    return (static_cast<std::uint64_t>(i) << 32) ^ (static_cast<std::uint64_t>(j) & 0xffffffffull);
  }

  const ReferencePath* path_;
  double cell_ = 1.0;
  long long min_i_ = 0, max_i_ = 0, min_j_ = 0, max_j_ = 0;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

/// Converts one Cartesian state given the matched reference index.
inline FrenetState to_frenet_at(const ReferencePath& path, std::size_t r, double x, double y, double vx, double vy,
                                double theta_traj, const FrenetOptions& opt = {}) {
  FrenetState st;
  st.ref_index = r;
  const Point2 pr = path.points[r];
  const double theta_r = path.tangent[r];
  const double k_r = path.curvature[r];
  st.s = path.cum_arclen[r];
  const double dist = std::sqrt(distance_sq({x, y}, pr));
  const double side = (y - pr.y) * std::cos(theta_r) - (x - pr.x) * std::sin(theta_r);
  st.l = side < 0.0 ? -dist : dist;
  const double v = std::sqrt(vx * vx + vy * vy);
  const double dtheta = theta_traj - theta_r;
  const double denom = 1.0 - k_r * st.l;
  if (std::abs(denom) < opt.singular_epsilon) {
    st.singular = true;
    st.s_dot = v * std::cos(dtheta);
  } else {
    st.s_dot = v / denom * std::cos(dtheta);
  }
  st.l_dot = opt.ldot_formula == LdotFormula::Sin ? v * std::sin(dtheta) : v * std::cos(dtheta);
  st.gated = st.singular || std::abs(k_r) > opt.curvature_threshold;
  return st;
}

/// Throws SingularProjection where the per-frame conversion would only gate.
inline FrenetState to_frenet(const ReferencePath& path, double x, double y, double vx, double vy, double theta_traj,
                             const FrenetOptions& opt = {}) {
  if (path.size() == 0) throw Error(ErrorCode::TooFewPoints, "empty reference path");
  const std::size_t r = nearest_reference_index(path, {x, y});
  FrenetState st = to_frenet_at(path, r, x, y, vx, vy, theta_traj, opt);
  if (st.singular) throw Error(ErrorCode::SingularProjection, "|1 - k l| < eps at ref " + std::to_string(r));
  return st;
}

/// Heading of the trajectory at each frame from central position differences
/// (one-sided at the ends, velocity heading if the vehicle does not move).
inline std::vector<double> trajectory_headings(const Track& track) {
  const auto& f = track.frames;
  const std::size_t n = f.size();
  std::vector<double> th(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i == 0 ? 0 : i - 1;
    const std::size_t b = i + 1 < n ? i + 1 : n - 1;
    const double dx = f[b].x - f[a].x;
    const double dy = f[b].y - f[a].y;
    th[i] = (dx == 0.0 && dy == 0.0) ? std::atan2(f[i].vy, f[i].vx) : std::atan2(dy, dx);
  }
  return th;
}

inline std::vector<FrenetState> track_to_frenet(const ReferencePath& path, const Track& track,
                                                const FrenetOptions& opt = {},
                                                const NearestPointIndex* index = nullptr) {
  const auto headings = trajectory_headings(track);
  std::vector<FrenetState> out;
  out.reserve(track.frames.size());
  for (std::size_t i = 0; i < track.frames.size(); ++i) {
    const auto& p = track.frames[i];
    const std::size_t r = index ? index->nearest({p.x, p.y}) : nearest_reference_index(path, {p.x, p.y});
    out.push_back(to_frenet_at(path, r, p.x, p.y, p.vx, p.vy, headings[i], opt));
  }
  return out;
}

struct FrenetRow {
  int track_id = 0;
  long long frame = 0;
  FrenetState state;
};

inline std::string frenet_csv(const std::vector<FrenetRow>& rows) {
  std::string out = "trackId,frame,s,l,sdot,ldot,refIdx,gated\n";
  for (const auto& r : rows) {
    out += std::to_string(r.track_id) + ',' + std::to_string(r.frame) + ',' + csv::format_double(r.state.s) + ',' +
           csv::format_double(r.state.l) + ',' + csv::format_double(r.state.s_dot) + ',' +
           csv::format_double(r.state.l_dot) + ',' + std::to_string(r.state.ref_index) + ',' +
           (r.state.gated ? "1" : "0") + '\n';
  }
  return out;
}

inline std::vector<FrenetRow> read_frenet_csv(const std::filesystem::path& file) {
  const auto t = csv::Table::read(file);
  const auto c_tid = t.column("trackId"), c_fr = t.column("frame"), c_s = t.column("s"), c_l = t.column("l"),
             c_sd = t.column("sdot"), c_ld = t.column("ldot"), c_ref = t.column("refIdx"), c_g = t.column("gated");
  std::vector<FrenetRow> rows;
  rows.reserve(t.size());
  for (std::size_t r = 0; r < t.size(); ++r) {
    FrenetRow row;
    row.track_id = static_cast<int>(csv::to_int(t.at(r, c_tid), "trackId"));
    row.frame = csv::to_int(t.at(r, c_fr), "frame");
    row.state.s = csv::to_double(t.at(r, c_s), "s");
    row.state.l = csv::to_double(t.at(r, c_l), "l");
    row.state.s_dot = csv::to_double(t.at(r, c_sd), "sdot");
    row.state.l_dot = csv::to_double(t.at(r, c_ld), "ldot");
    row.state.ref_index = static_cast<std::size_t>(csv::to_int(t.at(r, c_ref), "refIdx"));
    row.state.gated = csv::to_int(t.at(r, c_g), "gated") != 0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace lcip
