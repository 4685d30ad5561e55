#pragma once
// Shared helpers for the unit and acceptance tests: scratch directories, KS
// statistics, geometric fixtures and independent oracles.
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "lcip/ingest.hpp"
#include "lcip/refpath.hpp"
#include "lcip/segment.hpp"
#include "lcip/svm.hpp"

namespace lcip::test {

class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("lcip_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Asymptotic Kolmogorov survival function Q(lambda).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

// One-sample KS p-value against U[lo, hi].
inline double ks_uniform_pvalue(std::vector<double> x, double lo, double hi) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::clamp((x[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  const double sn = std::sqrt(n);
  return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

// Two-sample KS p-value.
inline double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  const double sn = std::sqrt(ne);
  return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

inline ReferencePath path_from_points(std::vector<Point2> pts) {
  ReferencePath p;
  p.points = std::move(pts);
  decorate_path(p);
  return p;
}

// Straight path along +x: points (i*spacing, 0).
inline ReferencePath straight_path(std::size_t n, double spacing = 1.0, double x0 = 0.0) {
  std::vector<Point2> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({x0 + static_cast<double>(i) * spacing, 0.0});
  return path_from_points(std::move(pts));
}

// Counterclockwise arc of radius r centred at the origin, from angle a0 to a1.
inline ReferencePath arc_path(double r, std::size_t n, double a0 = 0.0, double a1 = 2.0 * std::numbers::pi) {
  std::vector<Point2> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = a0 + (a1 - a0) * static_cast<double>(i) / static_cast<double>(n);
    pts.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return path_from_points(std::move(pts));
}

inline Track make_track(int id, std::size_t n, long long first_frame, double x0, double y0, double vx, double vy,
                        double hz, int lane_id) {
  Track t;
  t.track_id = id;
  t.width = 1.8;
  t.length = 4.5;
  for (std::size_t i = 0; i < n; ++i) {
    TrackPoint p;
    p.frame = first_frame + static_cast<long long>(i);
    p.x = x0 + vx * static_cast<double>(i) / hz;
    p.y = y0 + vy * static_cast<double>(i) / hz;
    p.vx = vx;
    p.vy = vy;
    p.lane_id = lane_id;
    t.frames.push_back(p);
  }
  return t;
}

struct Problem {
  std::vector<Point2> x;
  std::vector<int> y;
};

inline Problem two_clusters(std::size_t per_class, Point2 a, Point2 b, double spread, std::uint64_t seed) {
  Rng rng(seed);
  Problem p;
  for (std::size_t i = 0; i < per_class; ++i) {
    p.x.push_back({a.x + uniform(rng, -spread, spread), a.y + uniform(rng, -spread, spread)});
    p.y.push_back(-1);
    p.x.push_back({b.x + uniform(rng, -spread, spread), b.y + uniform(rng, -spread, spread)});
    p.y.push_back(+1);
  }
  return p;
}

// Dual objective sum(a) - 1/2 a'Qa recomputed from the model's coefficients.
inline double dual_objective(const SvmModel& m) {
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < m.support_points.size(); ++i) {
    lin += std::abs(m.dual_coefficients[i]);
    for (std::size_t j = 0; j < m.support_points.size(); ++j) {
      quad += m.dual_coefficients[i] * m.dual_coefficients[j] *
              std::exp(-m.gamma * distance_sq(m.support_points[i], m.support_points[j]));
    }
  }
  return lin - 0.5 * quad;
}

// Independent oracle: exhaustive pairwise coordinate ascent on the dual
// (every pair in turn, exact clipped line search), no working-set heuristics.
inline double coordinate_ascent_dual(const Problem& p, double c, double gamma, double tol) {
  const std::size_t n = p.x.size();
  std::vector<std::vector<double>> k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i][j] = std::exp(-gamma * distance_sq(p.x[i], p.x[j]));
  std::vector<double> a(n, 0.0), g(n, -1.0);  // g = Qa - e, Q_ij = y_i y_j K_ij
  for (int sweep = 0; sweep < 20000; ++sweep) {
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double yi = p.y[i], yj = p.y[j];
        // a_i += yi*d, a_j -= yj*d keeps sum(y a) fixed.
        const double curv = k[i][i] + k[j][j] - 2.0 * k[i][j];
        if (curv <= 1e-15) continue;
        double d = -(yi * g[i] - yj * g[j]) / curv;
        double lo = -1e300, hi = 1e300;
        auto bound = [&](double alpha, double coef) {  // 0 <= alpha + coef*d <= c
          if (coef > 0) {
            lo = std::max(lo, -alpha);
            hi = std::min(hi, c - alpha);
          } else {
            lo = std::max(lo, alpha - c);
            hi = std::min(hi, alpha);
          }
        };
        bound(a[i], yi);
        bound(a[j], -yj);
        d = std::clamp(d, lo, hi);
        if (d == 0.0) continue;
        const double di = yi * d, dj = -yj * d;
        a[i] += di;
        a[j] += dj;
        for (std::size_t t = 0; t < n; ++t) g[t] += p.y[t] * (yi * k[t][i] * di + yj * k[t][j] * dj);
        moved = std::max(moved, std::abs(d));
      }
    }
    if (moved < tol) break;
  }
  double obj = 0.0;
  for (std::size_t i = 0; i < n; ++i) obj += a[i] - 0.5 * a[i] * (g[i] + 1.0);
  return obj;
}

inline double train_accuracy(const SvmModel& m, const Problem& p) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.x.size(); ++i) ok += (decision_value(m, p.x[i]) > 0.0) == (p.y[i] > 0);
  return static_cast<double>(ok) / p.x.size();
}

inline Track transform(const Track& t, double phi, Point2 shift) {
  Track out = t;
  const double c = std::cos(phi), s = std::sin(phi);
  for (auto& f : out.frames) {
    const double x = f.x, y = f.y, vx = f.vx, vy = f.vy;
    f.x = c * x - s * y + shift.x;
    f.y = s * x + c * y + shift.y;
    f.vx = c * vx - s * vy;
    f.vy = s * vx + c * vy;
  }
  return out;
}

inline ReferencePath transform(const ReferencePath& p, double phi, Point2 shift) {
  std::vector<Point2> pts;
  const double c = std::cos(phi), s = std::sin(phi);
  for (const auto& q : p.points) pts.push_back({c * q.x - s * q.y + shift.x, s * q.x + c * q.y + shift.y});
  return path_from_points(pts);
}

inline Track arc_track(double rad, std::size_t n, double v, double hz) {
  Track t;
  t.track_id = 1;
  t.width = 1.8;
  t.length = 4.5;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 0.3 + v * k / hz / rad;
    TrackPoint tp;
    tp.frame = static_cast<long long>(k);
    tp.x = rad * std::cos(a);
    tp.y = rad * std::sin(a) + 0.3 * std::sin(0.05 * k);  // some lateral motion
    tp.vx = -v * std::sin(a);
    tp.vy = v * std::cos(a) + 0.3 * 0.05 * hz * std::cos(0.05 * k);
    t.frames.push_back(tp);
  }
  return t;
}

// Exhaustive admissibility check of one emitted segment; returns the first
// violated rule, or an empty string.
inline std::string admissibility_violation(const Segment& seg, const TrackWindowContext& ctx,
                                           std::span<const LcInstant> instants, const SegmentOptions& opt,
                                           const LcInstant* target) {
  const long long n = std::llround(opt.observation_s * ctx.frequency_hz);
  if (seg.end_frame - seg.start_frame + 1 != n) return "window length";
  if (seg.start_frame < ctx.first_frame || seg.end_frame > ctx.last_frame()) return "outside track";
  for (long long f = seg.start_frame; f <= seg.end_frame; ++f) {
    if (!ctx.of_interest[static_cast<std::size_t>(f - ctx.first_frame)]) return "frame not of interest";
  }
  for (const auto& in : instants) {
    if (in.frame >= seg.start_frame && in.frame <= seg.end_frame) return "contains an instant";
    if (seg.label == Label::LK && in.frame > seg.end_frame &&
        in.frame - seg.end_frame <= std::llround(opt.max_prediction_s * ctx.frequency_hz)) {
      return "LK window too close to a lane change";
    }
  }
  if (target) {
    if (!seg.prediction_time) return "missing prediction time";
    const double tp = *seg.prediction_time;
    if (tp < 0.0 || tp > opt.max_prediction_s) return "prediction time out of range";
    if (seg.end_frame != target->frame - std::llround(tp * ctx.frequency_hz)) return "end frame vs prediction time";
    if (seg.label != (target->direction == LcDirection::Left ? Label::LLC : Label::RLC)) return "label vs direction";
  }
  return {};
}

}  // namespace lcip::test
