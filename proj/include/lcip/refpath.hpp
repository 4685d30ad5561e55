#pragma once

// Reference path: zero-level boundary of the inner-lane SVM, resampled,
// smoothed and decorated with finite-difference tangent and curvature.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/svm.hpp"

namespace lcip {

struct BoundingBox {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;
};

struct ReferencePath {
  std::vector<Point2> points;
  std::vector<double> tangent;    // radians
  std::vector<double> curvature;  // 1/m
  std::vector<double> cum_arclen; // meters, first = 0
  std::string direction_tag;

  std::size_t size() const { return points.size(); }
};

/// Unit principal axis of a point set, sign fixed so its dominant component is positive.
inline Point2 principal_axis(std::span<const Point2> pts) {
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : pts) {
    sxx += (p.x - mx) * (p.x - mx);
    sxy += (p.x - mx) * (p.y - my);
    syy += (p.y - my) * (p.y - my);
  }
  // Major eigenvector of [[sxx, sxy], [sxy, syy]].
  const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  Point2 axis{std::cos(angle), std::sin(angle)};
  if (std::abs(axis.x) >= std::abs(axis.y) ? axis.x < 0.0 : axis.y < 0.0) {
    axis.x = -axis.x;
    axis.y = -axis.y;
  }
  return axis;
}

/// Points where the decision function changes sign along grid edges,
/// linearly refined, ordered by projection on the principal axis.
inline std::vector<Point2> extract_zero_boundary(const SvmModel& model, const BoundingBox& bbox, double grid_step) {
  if (!(grid_step > 0.0)) throw Error(ErrorCode::InvalidConfig, "grid_step must be positive");
  if (!(bbox.max_x > bbox.min_x) || !(bbox.max_y > bbox.min_y)) throw Error(ErrorCode::InvalidConfig, "empty bbox");
  // Nodes sit on integer multiples of grid_step, so a reflected input sees
  // the reflected grid and the extraction commutes with mirroring.
  const double x0 = std::floor(bbox.min_x / grid_step), y0 = std::floor(bbox.min_y / grid_step);
  const auto nx = static_cast<std::size_t>(std::ceil(bbox.max_x / grid_step) - x0) + 1;
  const auto ny = static_cast<std::size_t>(std::ceil(bbox.max_y / grid_step) - y0) + 1;
  auto node = [&](std::size_t i, std::size_t j) {
    return Point2{(x0 + static_cast<double>(i)) * grid_step, (y0 + static_cast<double>(j)) * grid_step};
  };
  std::vector<double> f(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) f[j * nx + i] = decision_value(model, node(i, j));
  }

  std::vector<Point2> out;
  auto edge = [&](std::size_t ia, std::size_t ja, std::size_t ib, std::size_t jb) {
    const double fa = f[ja * nx + ia];
    const double fb = f[jb * nx + ib];
    if ((fa > 0.0) == (fb > 0.0)) return;
    const double t = fa / (fa - fb);
    const Point2 a = node(ia, ja);
    const Point2 b = node(ib, jb);
    out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  };
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      if (i + 1 < nx) edge(i, j, i + 1, j);
      if (j + 1 < ny) edge(i, j, i, j + 1);
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyBoundary, "no sign change inside bbox");

  const Point2 axis = principal_axis(out);
  const Point2 normal{-axis.y, axis.x};
  std::sort(out.begin(), out.end(), [&](const Point2& a, const Point2& b) {
    const double pa = a.x * axis.x + a.y * axis.y;
    const double pb = b.x * axis.x + b.y * axis.y;
    if (pa != pb) return pa < pb;
    return a.x * normal.x + a.y * normal.y < b.x * normal.x + b.y * normal.y;
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Reverses the order if the polyline runs against travel_direction.
inline std::vector<Point2> orient_along(std::vector<Point2> pts, const Point2& travel_direction) {
  if (pts.size() >= 2) {
    const double dx = pts.back().x - pts.front().x;
    const double dy = pts.back().y - pts.front().y;
    if (dx * travel_direction.x + dy * travel_direction.y < 0.0) std::reverse(pts.begin(), pts.end());
  }
  return pts;
}

/// Resamples a polyline at uniform arc-length spacing; the first point is kept.
inline std::vector<Point2> resample_polyline(std::span<const Point2> pts, double spacing) {
  std::vector<Point2> out;
  if (pts.empty()) return out;
  out.push_back(pts.front());
  double carried = 0.0;  // distance travelled since the last emitted sample
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const Point2 a = pts[k - 1];
    const Point2 b = pts[k];
    const double seg = std::sqrt(distance_sq(a, b));
    if (seg == 0.0) continue;
    double pos = spacing - carried;  // position of the next sample along this segment
    while (pos <= seg + 1e-12 * spacing) {
      const double t = std::min(pos / seg, 1.0);
      out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
      pos += spacing;
    }
    carried = seg - (pos - spacing);
  }
  return out;
}

/// Centered moving average; the window shrinks symmetrically near the ends.
inline std::vector<Point2> moving_average(std::span<const Point2> pts, std::size_t window) {
  const std::size_t n = pts.size();
  const std::size_t half = window / 2;
  std::vector<Point2> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = std::min({half, i, n - 1 - i});
    double sx = 0.0, sy = 0.0;
    for (std::size_t k = i - h; k <= i + h; ++k) {
      sx += pts[k].x;
      sy += pts[k].y;
    }
    const double cnt = static_cast<double>(2 * h + 1);
    out[i] = {sx / cnt, sy / cnt};
  }
  return out;
}

/// Tangent and curvature from central differences dx_i = x_{i+1} - x_{i-1}
/// and second differences of those; second-order one-sided at the ends.
inline void decorate_path(ReferencePath& path) {
  const auto& p = path.points;
  const std::size_t n = p.size();
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "reference path needs >= 3 points");
  // d_i ~ 2h f'(t_i) at every index.
  auto diff = [n](auto at) {
    std::vector<double> d(n);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = at(i + 1) - at(i - 1);
    d[0] = -3.0 * at(0) + 4.0 * at(1) - at(2);
    d[n - 1] = 3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3);
    return d;
  };
  const auto dx = diff([&](std::size_t i) { return p[i].x; });
  const auto dy = diff([&](std::size_t i) { return p[i].y; });
  const auto ddx = diff([&](std::size_t i) { return dx[i]; });
  const auto ddy = diff([&](std::size_t i) { return dy[i]; });
  path.tangent.resize(n);
  path.curvature.resize(n);
  path.cum_arclen.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    path.tangent[i] = std::atan2(dy[i], dx[i]);
    const double speed_sq = dx[i] * dx[i] + dy[i] * dy[i];
    path.curvature[i] = (dx[i] * ddy[i] - dy[i] * ddx[i]) / std::pow(speed_sq, 1.5);
    path.cum_arclen[i] = i == 0 ? 0.0 : path.cum_arclen[i - 1] + std::sqrt(distance_sq(p[i], p[i - 1]));
  }
}

inline ReferencePath build_reference_path(std::span<const Point2> boundary, std::size_t smoothing_window,
                                          double spacing) {
  if (boundary.size() < 5) throw Error(ErrorCode::TooFewPoints, std::to_string(boundary.size()));
  if (smoothing_window == 0 || smoothing_window % 2 == 0) {
    throw Error(ErrorCode::InvalidConfig, "smoothing_window must be odd");
  }
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidConfig, "spacing must be positive");
  const auto resampled = resample_polyline(boundary, spacing);
  if (resampled.size() < 5) throw Error(ErrorCode::TooFewPoints, "resampled " + std::to_string(resampled.size()));
  ReferencePath path;
  path.points = moving_average(resampled, smoothing_window);
  decorate_path(path);
  return path;
}

/// Same points, opposite travel direction.
inline ReferencePath reverse_path(const ReferencePath& path, std::string tag) {
  ReferencePath r;
  r.direction_tag = std::move(tag);
  r.points.assign(path.points.rbegin(), path.points.rend());
  r.tangent.resize(path.size());
  r.curvature.resize(path.size());
  r.cum_arclen.resize(path.size());
  const std::size_t n = path.size();
  for (std::size_t i = 0; i < n; ++i) {
    r.tangent[i] = wrap_angle(path.tangent[n - 1 - i] + std::numbers::pi);
    r.curvature[i] = -path.curvature[n - 1 - i];
    r.cum_arclen[i] = i == 0 ? 0.0 : r.cum_arclen[i - 1] + std::sqrt(distance_sq(r.points[i], r.points[i - 1]));
  }
  return r;
}

inline std::string reference_path_csv(const ReferencePath& path) {
  std::string out = "idx,x,y,theta,kappa,s\n";
  char buf[160];
  for (std::size_t i = 0; i < path.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, path.points[i].x, path.points[i].y,
                  path.tangent[i], path.curvature[i], path.cum_arclen[i]);
    out += buf;
  }
  return out;
}

inline ReferencePath read_reference_path(const std::filesystem::path& file, std::string tag) {
  const auto t = csv::Table::read(file);
  const auto cx = t.column("x"), cy = t.column("y"), ct = t.column("theta"), ck = t.column("kappa"),
             cs = t.column("s");
  ReferencePath p;
  p.direction_tag = std::move(tag);
  for (std::size_t r = 0; r < t.size(); ++r) {
    p.points.push_back({csv::to_double(t.at(r, cx), "x"), csv::to_double(t.at(r, cy), "y")});
    p.tangent.push_back(csv::to_double(t.at(r, ct), "theta"));
    p.curvature.push_back(csv::to_double(t.at(r, ck), "kappa"));
    p.cum_arclen.push_back(csv::to_double(t.at(r, cs), "s"));
  }
  if (p.size() == 0) throw Error(ErrorCode::TooFewPoints, file.string());
  return p;
}

}  // namespace lcip
