#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dot/harness.hpp"
#include "dot/instances.hpp"
#include "dot/motion.hpp"
#include "dot/photo_tracker.hpp"
#include "support/oracles.hpp"

using namespace dot;

namespace {

const CameraModel kCam{260.0, 260.0, 159.5, 119.5, 320, 240};

// Smooth pattern on a fronto-parallel plane at 2 m.
Frame plane_frame(double offset = 0.0) {
  Frame f;
  f.intensity = oracle::smooth_image(kCam.width, kCam.height);
  for (auto& v : f.intensity.data()) v += offset;
  f.depth = DepthImage(kCam.width, kCam.height, 2.0);
  return build_pyramid(std::move(f), 4);
}

std::vector<PointSample> grid_points(const Frame& f, int step = 9) {
  std::vector<PointSample> pts;
  for (int y = 12; y < kCam.height - 12; y += step) {
    for (int x = 12; x < kCam.width - 12; x += step) {
      PointSample p;
      p.pixel = {static_cast<double>(x), static_cast<double>(y)};
      p.depth = f.depth(x, y);
      pts.push_back(p);
    }
  }
  attach_reference_intensities(f, kCam, pts);
  return pts;
}

std::vector<PointSample> scene_points(const Frame& f, const LabelImage& labels, int owner, const CameraModel& cam) {
  const auto sel = select_points(f, labels, SamplingConfig{});
  std::vector<PointSample> pts;
  for (const auto& c : sel.at(owner)) {
    PointSample p;
    p.pixel = {static_cast<double>(c.x), static_cast<double>(c.y)};
    p.depth = f.depth(c.x, c.y);
    p.owner = owner;
    pts.push_back(p);
  }
  attach_reference_intensities(f, cam, pts);
  return pts;
}

}  // namespace

TEST(CameraResiduals, SelfTrackingIsExactlyZero) {
  const Frame f = plane_frame();
  const auto rows = camera_residuals(f, f, grid_points(f), SE3Pose::identity(), kCam, SolverConfig{});
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_EQ(r.residual, 0.0);
}

TEST(CameraResiduals, GlobalOffsetGivesConstantResidual) {
  const Frame f = plane_frame();
  const Frame g = plane_frame(10.0);
  const auto rows = camera_residuals(f, g, grid_points(f), SE3Pose::identity(), kCam, SolverConfig{});
  for (const auto& r : rows) EXPECT_NEAR(r.residual, -10.0, 1e-12);
}

TEST(CameraResiduals, SmallAtGroundTruthOverTexturedPlanes) {
  // Room box only, camera translating sideways.
  const SceneSpec s = scene_from_json({{"frames", 2}, {"camera_motion", {{"linear", {0.01, 0.0, 0.0}}}}});
  const RenderedFrame r0 = render_frame(s, 0), r1 = render_frame(s, 1);
  const Frame f0 = build_pyramid(to_frame(r0, 0.0), 4), f1 = build_pyramid(to_frame(r1, 0.1), 4);
  const auto pts = scene_points(f0, r0.labels, 0, s.cam);
  const auto rows = camera_residuals(f0, f1, pts, gt_camera_motion(s, 0, 1), s.cam, SolverConfig{});
  ASSERT_GT(rows.size(), 700u);
  double sum = 0.0;
  for (const auto& r : rows) sum += r.residual * r.residual;
  EXPECT_LT(std::sqrt(sum / static_cast<double>(rows.size())), 0.5);
}

TEST(CameraResiduals, TooFewValidPoints) {
  const Frame f = plane_frame();
  SolverConfig cfg;
  cfg.min_valid_points = 10000;
  try {
    camera_residuals(f, f, grid_points(f), SE3Pose::identity(), kCam, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewValidPoints);
  }
}

TEST(GaussNewton, ZeroResidualsGiveZeroStep) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<ResidualRow> rows(50);
  for (auto& r : rows)
    for (int k = 0; k < 6; ++k) r.jacobian(k) = g(rng);
  const NormalEquations ne = gauss_newton_step(rows, SolverConfig{});
  EXPECT_EQ(ne.increment, TangentVector::Zero());
}

TEST(GaussNewton, OneDimensionalMean) {
  const double sigma = 2.0, c = 3.5;
  const int n = 40;
  std::vector<ResidualRowT<1>> rows(n);
  for (auto& r : rows) {
    r.residual = c;
    r.jacobian(0) = 1.0;
  }
  const auto ne = solve_normal_equations<1>(rows, sigma, 9.0);
  EXPECT_NEAR(ne.increment(0), -c, 1e-12);
  EXPECT_NEAR(ne.pose_covariance(0, 0), sigma * sigma / n, 1e-12);
}

TEST(GaussNewton, MatchesDenseSolveOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  const SolverConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ResidualRow> rows(120);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(6);
    for (auto& r : rows) {
      for (int k = 0; k < 6; ++k) r.jacobian(k) = g(rng);
      r.residual = 20.0 * g(rng);  // some rows beyond the Huber knee
      const double w = (std::abs(r.residual) <= cfg.huber_delta ? 1.0 : cfg.huber_delta / std::abs(r.residual)) /
                       (cfg.residual_sigma * cfg.residual_sigma);
      for (int i = 0; i < 6; ++i) {
        b(i) -= w * r.jacobian(i) * r.residual;
        for (int j = 0; j < 6; ++j) a(i, j) += w * r.jacobian(i) * r.jacobian(j);
      }
    }
    const NormalEquations ne = gauss_newton_step(rows, cfg);
    const Eigen::VectorXd x = oracle::solve(a, b);
    EXPECT_LT((ne.increment - x).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((ne.JtSJ - ne.JtSJ.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((ne.pose_covariance * ne.JtSJ - Matrix6d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(GaussNewton, SingularSystem) {
  std::vector<ResidualRow> rows(30);
  for (auto& r : rows) r.jacobian(0) = 1.0;  // only one direction constrained
  try {
    gauss_newton_step(rows, SolverConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularSystem);
  }
}

TEST(TrackCamera, SelfTrackingIsIdentity) {
  const Frame f = plane_frame();
  const TrackResult r = track_camera(f, f, grid_points(f), SE3Pose::identity(), kCam, SolverConfig{});
  EXPECT_LT(r.pose.translation().norm(), 1e-6);
  EXPECT_LT(se3_log(r.pose).tail<3>().norm(), 1e-6);
  EXPECT_NEAR(r.pearson, 1.0, 1e-9);
}

TEST(TrackCamera, TexturelessImageIsRejected) {
  Frame f;
  f.intensity = IntensityImage(kCam.width, kCam.height, 90.0);
  f.depth = DepthImage(kCam.width, kCam.height, 2.0);
  f = build_pyramid(std::move(f), 4);
  try {
    track_camera(f, f, grid_points(f), SE3Pose::identity(), kCam, SolverConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::SingularSystem || e.code() == ErrorCode::TrackingLost) << e.what();
  }
}

TEST(TrackCamera, RecoversPerturbedTranslation) {
  SceneSpec s = make_static_scene(2, 22);
  s.noise_sigma = 0.0;
  const RenderedFrame r0 = render_frame(s, 0), r1 = render_frame(s, 1);
  const Frame f0 = build_pyramid(to_frame(r0, 0.0), 4), f1 = build_pyramid(to_frame(r1, 0.1), 4);
  const auto pts = scene_points(f0, r0.labels, 0, s.cam);
  const SE3Pose gt = gt_camera_motion(s, 0, 1);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    TangentVector d;
    d.head<3>() = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized() * 0.02;
    d.tail<3>() = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized() * (0.5 * M_PI / 180.0);
    const TrackResult r = track_camera(f0, f1, pts, se3_exp(d) * gt, s.cam, SolverConfig{});
    EXPECT_LT((r.pose.translation() - gt.translation()).norm(), 1e-3);
    EXPECT_LT(se3_log(r.pose * gt.inverse()).tail<3>().norm() * 180.0 / M_PI, 0.05);
  }
}

TEST(TrackCamera, CostNeverIncreasesWithinALevel) {
  SceneSpec s = make_static_scene(2, 23);
  s.noise_sigma = 2.0;
  const RenderedFrame r0 = render_frame(s, 0), r1 = render_frame(s, 1);
  const Frame f0 = build_pyramid(to_frame(r0, 0.0), 4), f1 = build_pyramid(to_frame(r1, 0.1), 4);
  const auto pts = scene_points(f0, r0.labels, 0, s.cam);
  TangentVector d = TangentVector::Zero();
  d << 0.03, -0.02, 0.01, 0.01, -0.01, 0.005;
  const TrackResult r = track_camera(f0, f1, pts, se3_exp(d), s.cam, SolverConfig{});
  for (const auto& level : r.cost_history) {
    for (std::size_t i = 1; i < level.size(); ++i) EXPECT_LE(level[i], level[i - 1]);
  }
}

TEST(TrackObject, ReducesToCameraTrackingWithIdentityCamera) {
  SceneSpec s = make_static_scene(2, 24);
  const RenderedFrame r0 = render_frame(s, 0), r1 = render_frame(s, 1);
  const Frame f0 = build_pyramid(to_frame(r0, 0.0), 4), f1 = build_pyramid(to_frame(r1, 0.1), 4);
  const auto pts = scene_points(f0, r0.labels, 0, s.cam);
  const TrackResult cam = track_camera(f0, f1, pts, SE3Pose::identity(), s.cam, SolverConfig{});
  const TrackResult obj = track_object(f0, f1, pts, SE3Pose::identity(), SE3Pose::identity(), s.cam, SolverConfig{});
  EXPECT_EQ(cam.pose.matrix(), obj.pose.matrix());
  EXPECT_EQ(cam.normal_eq.entropy, obj.normal_eq.entropy);
}

TEST(TrackObject, StaticObjectsStayPutInTheImage) {
  SceneSpec s = make_static_scene(2, 25);
  s.noise_sigma = 0.0;
  const RenderedFrame r0 = render_frame(s, 0), r1 = render_frame(s, 1);
  const Frame f0 = build_pyramid(to_frame(r0, 0.0), 4), f1 = build_pyramid(to_frame(r1, 0.1), 4);
  const SE3Pose tc = gt_camera_motion(s, 0, 1);
  for (int id = 1; id <= 3; ++id) {
    const auto pts = scene_points(f0, r0.labels, id, s.cam);
    const TrackResult r = track_object(f0, f1, pts, tc, SE3Pose::identity(), s.cam, SolverConfig{});
    EXPECT_LT(dynamic_disparity(pts, tc, r.pose, s.cam), 0.5) << "object " << id;
  }
}

TEST(TrackObject, FullyOccludedObjectHasTooFewPoints) {
  const Frame f = plane_frame();
  auto pts = grid_points(f);
  // A camera motion that pushes every point behind the camera.
  const SE3Pose behind(Eigen::Matrix3d::Identity(), {0.0, 0.0, -5.0});
  try {
    track_object(f, f, pts, behind, SE3Pose::identity(), kCam, SolverConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewValidPoints);
  }
}

TEST(Pearson, ClosedForms) {
  const std::vector<double> x = {1, 4, 2, 8, 5, 7};
  std::vector<double> y, z;
  for (double v : x) {
    y.push_back(2 * v + 30);
    z.push_back(-v);
  }
  EXPECT_NEAR(pearson_quality(x, x), 1.0, 1e-15);
  EXPECT_NEAR(pearson_quality(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson_quality(x, z), -1.0, 1e-15);
}

TEST(Pearson, GainOffsetInvariantAndBounded) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(100.0, 30.0);
  std::uniform_real_distribution<double> gain(0.1, 5.0), off(-80.0, 80.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(50), b(50), c(50);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = g(rng);
      b[i] = g(rng);
    }
    const double k = gain(rng), o = off(rng);
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = k * b[i] + o;
    const double p = pearson_quality(a, b);
    EXPECT_GE(p, -1.0);
    EXPECT_LE(p, 1.0);
    EXPECT_NEAR(pearson_quality(a, c), p, 1e-12);
  }
}

TEST(Pearson, DegenerateVariance) {
  const std::vector<double> a = {1, 2, 3}, b = {5, 5, 5};
  try {
    pearson_quality(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateVariance);
  }
}

TEST(Outliers, LinearDataAllInliers) {
  std::vector<double> ref, cur;
  for (int i = 0; i < 60; ++i) {
    ref.push_back(20.0 + 3.0 * i);
    cur.push_back(0.8 * ref.back() + 12.0);
  }
  const auto keep = reject_outliers_relative(ref, cur, 5.0);
  EXPECT_TRUE(std::all_of(keep.begin(), keep.end(), [](bool b) { return b; }));
}

TEST(Outliers, SingleDisplacedPointMatchesBruteForce) {
  std::vector<double> ref, cur;
  for (int i = 0; i < 41; ++i) {
    ref.push_back(30.0 + 4.0 * i);
    cur.push_back(1.1 * ref.back() - 5.0 + 0.6 * std::sin(1.7 * i));
  }
  cur[17] += 50.0;
  const auto keep = reject_outliers_relative(ref, cur, 3.0);

  // Brute force: line by normal equations, MAD about the median residual.
  const auto [a, b] = oracle::fit_line(ref, cur);
  std::vector<double> e;
  for (std::size_t i = 0; i < ref.size(); ++i) e.push_back(cur[i] - (a * ref[i] + b));
  auto sorted = e;
  std::sort(sorted.begin(), sorted.end());
  const double med = sorted[sorted.size() / 2];
  std::vector<double> dev;
  for (double v : e) dev.push_back(std::abs(v - med));
  auto dsorted = dev;
  std::sort(dsorted.begin(), dsorted.end());
  const double mad = dsorted[dsorted.size() / 2];
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_EQ(keep[i], dev[i] <= 3.0 * mad) << i;
    EXPECT_EQ(keep[i], i != 17) << i;
  }
}

TEST(Outliers, GlobalOffsetIsAbsorbed) {
  const Frame f = plane_frame();
  const Frame g = plane_frame(40.0);
  std::vector<double> ref, cur;
  for (const auto& p : grid_points(f)) {
    ref.push_back(p.ref_intensity[0]);
    cur.push_back(sample_bilinear(g.intensity, p.pixel));
  }
  const auto keep = reject_outliers_relative(ref, cur, 5.0);
  EXPECT_EQ(std::count(keep.begin(), keep.end(), false), 0);
  // An absolute gate at 30 gray levels would discard every sample.
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_GT(std::abs(cur[i] - ref[i]), 30.0);
}

TEST(Entropy, UnitCovariance) {
  EXPECT_NEAR(pose_entropy<6>(Matrix6d::Identity()), 3.0 * std::log(2.0 * M_PI * M_E), 1e-12);
  EXPECT_NEAR(pose_entropy<6>(Matrix6d::Identity()), 8.5137, 1e-4);
}

TEST(Entropy, ScaledCovariance) {
  for (double c : {0.01, 0.5, 3.0, 1e4}) {
    EXPECT_NEAR(pose_entropy<6>(c * Matrix6d::Identity()) - pose_entropy<6>(Matrix6d::Identity()),
                3.0 * std::log(c), 1e-9);
  }
}

TEST(Entropy, MatchesDenseDeterminantOracle) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Eigen::MatrixXd cov = oracle::random_spd(6, rng);
    EXPECT_NEAR(pose_entropy<6>(Matrix6d(cov)), oracle::gaussian_entropy(cov), 1e-9);
  }
}

TEST(Entropy, NonDecreasingInEachEigenvalue) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd base = oracle::random_spd(6, rng);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(base);
  for (int k = 0; k < 6; ++k) {
    double prev = -std::numeric_limits<double>::infinity();
    for (double scale : {0.5, 1.0, 1.5, 4.0}) {
      Eigen::VectorXd l = eig.eigenvalues();
      l(k) *= scale;
      const Eigen::MatrixXd cov = eig.eigenvectors() * l.asDiagonal() * eig.eigenvectors().transpose();
      const double h = pose_entropy<6>(Matrix6d(0.5 * (cov + cov.transpose())));
      EXPECT_GE(h, prev);
      prev = h;
    }
  }
}

TEST(Entropy, RejectsIndefinite) {
  Matrix6d m = Matrix6d::Identity();
  m(2, 2) = -1.0;
  try {
    pose_entropy<6>(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
  }
}
