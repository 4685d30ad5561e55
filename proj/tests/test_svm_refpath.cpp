#include <gtest/gtest.h>

#include <chrono>

#include "lcip/refpath.hpp"
#include "lcip/svm.hpp"
#include "test_util.hpp"

namespace lcip {
namespace {

TEST(Svm, SeparableClustersFullAccuracy) {
  const auto p = test::two_clusters(50, {0, 0}, {10, 10}, 0.1, 1);
  const auto m = fit_rbf_svm(p.x, p.y, 10.0, 0.5);
  EXPECT_EQ(test::train_accuracy(m, p), 1.0);
  EXPECT_LT(m.max_kkt_violation, 1e-6);
  double sum = 0.0;
  for (double a : m.dual_coefficients) {
    EXPECT_LE(std::abs(a), 10.0 + 1e-12);
    sum += a;
  }
  EXPECT_NEAR(sum, 0.0, 1e-8);
}

TEST(Svm, PointSymmetricProblemMidpointIsZero) {
  // Each class needs two points; the second pair mirrors the first about (5, 5).
  const std::vector<Point2> x = {{0, 0}, {10, 10}, {1, -1}, {9, 11}};
  const std::vector<int> y = {-1, 1, -1, 1};
  const auto m = fit_rbf_svm(x, y, 10.0, 0.01, 1e-12);
  EXPECT_NEAR(decision_value(m, {5, 5}), 0.0, 1e-9);
  EXPECT_NEAR(decision_value(m, {1e6, 1e6}), m.bias, 1e-12);
}

TEST(Svm, HardMarginSupportVectorsOnMargin) {
  const auto p = test::two_clusters(40, {0, 0}, {3, 3}, 1.0, 5);
  SvmOptions opt;
  opt.c = 1e6;
  opt.gamma = 0.5;
  const auto m = fit_rbf_svm(p.x, p.y, opt);
  ASSERT_EQ(test::train_accuracy(m, p), 1.0);
  for (std::size_t k = 0; k < m.support_indices.size(); ++k) {
    const auto i = m.support_indices[k];
    EXPECT_GE(std::abs(decision_value(m, p.x[i])), 1.0 - 1e-4);
    if (std::abs(m.dual_coefficients[k]) < opt.c) EXPECT_GT(p.y[i] * decision_value(m, p.x[i]), 0.0);
  }
}

TEST(Svm, DualObjectiveMatchesCoordinateAscentOracle) {
  const auto p = test::two_clusters(100, {0, 0}, {4, 1}, 2.5, 11);
  ASSERT_EQ(p.x.size(), 200u);
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = fit_rbf_svm(p.x, p.y, 10.0, 0.5);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 30.0);
  EXPECT_LT(m.max_kkt_violation, 1e-6);
  const double oracle = test::coordinate_ascent_dual(p, 10.0, 0.5, 1e-12);
  EXPECT_NEAR(m.objective, oracle, 1e-6 * std::abs(oracle));
  EXPECT_NEAR(test::dual_objective(m), oracle, 1e-6 * std::abs(oracle));
}

TEST(Svm, DegenerateInputRejected) {
  const std::vector<Point2> x = {{0, 0}, {1, 1}, {2, 2}};
  EXPECT_THROW(fit_rbf_svm(x, std::vector<int>{1, 1, 1}, 10.0, 0.1), Error);
  EXPECT_THROW(fit_rbf_svm(x, std::vector<int>{1, -1, 1}, 10.0, 0.1), Error);
}

TEST(Svm, JsonRoundTrip) {
  const auto p = test::two_clusters(10, {0, 0}, {5, 5}, 0.5, 2);
  const auto m = fit_rbf_svm(p.x, p.y, 10.0, 0.2);
  const auto r = svm_from_json(svm_to_json(m));
  for (const auto& q : p.x) EXPECT_EQ(decision_value(r, q), decision_value(m, q));
}

// Bands y < -2 (label -1) and y > 2 (label +1), sampled symmetrically.
SvmModel band_svm() {
  test::Problem p;
  for (int i = 0; i <= 20; ++i) {
    for (double y : {2.0, 3.0, 4.0, 5.0, 6.0}) {
      p.x.push_back({2.0 * i, -y});
      p.y.push_back(-1);
      p.x.push_back({2.0 * i, y});
      p.y.push_back(+1);
    }
  }
  return fit_rbf_svm(p.x, p.y, 10.0, 0.1);
}

TEST(Boundary, SymmetricBandsAndRefinement) {
  const auto m = band_svm();
  const BoundingBox box{0.0, -8.0, 40.0, 8.0};
  double prev_bound = 0.0;
  std::vector<Point2> prev;
  for (double step : {1.0, 0.5, 0.25}) {
    const auto b = extract_zero_boundary(m, box, step);
    ASSERT_FALSE(b.empty());
    double max_y = 0.0;
    for (const auto& q : b) max_y = std::max(max_y, std::abs(q.y));
    EXPECT_LT(max_y, step);
    if (!prev.empty()) {
      EXPECT_LT(max_y, 2.0 * step);
      for (const auto& q : b) {
        double best = 1e300;
        for (const auto& r : prev) best = std::min(best, std::sqrt(distance_sq(q, r)));
        EXPECT_LT(best, 2.0 * step);
      }
    }
    for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LE(b[i - 1].x, b[i].x + 1e-12);
    EXPECT_EQ(b, extract_zero_boundary(m, box, step));
    prev = b;
    prev_bound = max_y;
  }
  (void)prev_bound;
  try {
    extract_zero_boundary(m, {1000.0, 1000.0, 1100.0, 1100.0}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyBoundary);
  }
}

TEST(RefPath, StraightLineHasZeroHeadingAndCurvature) {
  const auto p = test::straight_path(100);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p.tangent[i], 0.0);
    EXPECT_LT(std::abs(p.curvature[i]), 1e-12);
    EXPECT_DOUBLE_EQ(p.cum_arclen[i], static_cast<double>(i));
  }
}

TEST(RefPath, CircleCurvatureWithinOnePercent) {
  const double r = 100.0;
  const auto ccw = test::arc_path(r, 1000);
  for (std::size_t i = 1; i + 1 < ccw.size(); ++i) EXPECT_LT(std::abs(ccw.curvature[i] - 1.0 / r) * r, 0.01);
  std::vector<Point2> rev(ccw.points.rbegin(), ccw.points.rend());
  const auto cw = test::path_from_points(rev);
  for (std::size_t i = 1; i + 1 < cw.size(); ++i) {
    EXPECT_NEAR(cw.curvature[i], -ccw.curvature[cw.size() - 1 - i], 1e-9);
  }
}

TEST(RefPath, ArclenAndReverseInvariants) {
  const auto p = test::arc_path(50.0, 200, 0.0, 2.0);
  double chords = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    chords += std::sqrt(distance_sq(p.points[i], p.points[i - 1]));
    EXPECT_GT(p.cum_arclen[i], p.cum_arclen[i - 1]);
  }
  EXPECT_NEAR(p.cum_arclen.back(), chords, 1e-9);
  const auto r = reverse_path(p, "rev");
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_NEAR(std::abs(wrap_angle(r.tangent[i] - p.tangent[n - 1 - i])), std::numbers::pi, 1e-12);
    EXPECT_EQ(r.curvature[i], -p.curvature[n - 1 - i]);
  }
  EXPECT_NEAR(r.cum_arclen.back(), p.cum_arclen.back(), 1e-9);
}

TEST(RefPath, ResampleSmoothAndBuild) {
  const std::vector<Point2> line = {{0, 0}, {3.3, 0}, {10, 0}};
  const auto rs = resample_polyline(line, 1.0);
  ASSERT_EQ(rs.size(), 11u);
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_NEAR(rs[i].x, static_cast<double>(i), 1e-12);
  const auto ma = moving_average(rs, 5);
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_NEAR(ma[i].x, rs[i].x, 1e-12);  // linear data is preserved
  const auto path = build_reference_path(rs, 3, 0.5);
  EXPECT_EQ(path.size(), 21u);
  EXPECT_THROW(build_reference_path(rs, 4, 0.5), Error);
  EXPECT_THROW(build_reference_path(std::vector<Point2>(rs.begin(), rs.begin() + 3), 3, 0.5), Error);
  const auto oriented = orient_along(rs, {-1.0, 0.0});
  EXPECT_EQ(oriented.front().x, 10.0);
}

TEST(RefPath, CsvRoundTrip) {
  test::TempDir dir("refpath_csv");
  const auto p = test::arc_path(80.0, 64, 0.0, 1.0);
  csv::write_text(dir / "p.csv", reference_path_csv(p));
  const auto r = read_reference_path(dir / "p.csv", "t");
  EXPECT_EQ(r.points, p.points);
  EXPECT_EQ(r.curvature, p.curvature);
  EXPECT_EQ(r.cum_arclen, p.cum_arclen);
}

}  // namespace
}  // namespace lcip
