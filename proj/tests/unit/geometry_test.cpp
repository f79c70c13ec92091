#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dot/geometry.hpp"
#include "support/oracles.hpp"

using namespace dot;

namespace {

TangentVector random_tangent(std::mt19937_64& rng, double t_scale, double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TangentVector x;
  for (int i = 0; i < 3; ++i) x(i) = t_scale * u(rng);
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  axis.normalize();
  const double angle = max_angle * 0.5 * (u(rng) + 1.0);
  x.tail<3>() = axis * angle;
  return x;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

const CameraModel kCam{100.0, 100.0, 320.0, 240.0, 640, 480};

}  // namespace

TEST(Se3, ExpOfZeroIsIdentity) {
  const SE3Pose p = se3_exp(TangentVector::Zero());
  EXPECT_EQ(p.matrix(), Eigen::Matrix4d::Identity());
}

TEST(Se3, QuarterTurnAboutFirstAxis) {
  TangentVector x = TangentVector::Zero();
  x(3) = M_PI / 2;
  const SE3Pose p = se3_exp(x);
  Eigen::Matrix3d expected;
  expected << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  EXPECT_LT(max_abs(p.rotation() - expected), 1e-15);
  EXPECT_EQ(p.translation(), Eigen::Vector3d::Zero());
}

TEST(Se3, ExpMatchesMatrixExponentialOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const TangentVector x = random_tangent(rng, 2.0, M_PI - 0.1);
    EXPECT_LT(max_abs(se3_exp(x).matrix() - oracle::expm(oracle::twist(x))), 1e-12);
  }
}

TEST(Se3, LogInvertsExp) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const TangentVector x = random_tangent(rng, 2.0, M_PI - 0.1);
    EXPECT_LT((se3_log(se3_exp(x)) - x).cwiseAbs().maxCoeff(), 1e-9) << i;
  }
}

TEST(Se3, SmallAngleBranchIsContinuous) {
  TangentVector x;
  x << 0.3, -0.2, 0.1, 0.0, 0.0, 0.0;
  for (double a : {1e-12, 5e-9, 2e-8, 1e-6}) {
    x.tail<3>() = Eigen::Vector3d(1, 2, -1).normalized() * a;
    EXPECT_LT(max_abs(se3_exp(x).matrix() - oracle::expm(oracle::twist(x))), 1e-14) << a;
    EXPECT_LT((se3_log(se3_exp(x)) - x).norm(), 1e-12) << a;
  }
}

TEST(Se3, RotationStaysOrthonormal) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Matrix3d r = se3_exp(random_tangent(rng, 1.0, M_PI)).rotation();
    EXPECT_LT(max_abs(r.transpose() * r - Eigen::Matrix3d::Identity()), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
  }
}

TEST(Se3, GroupAxioms) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const SE3Pose a = se3_exp(random_tangent(rng, 1.0, 3.0));
    const SE3Pose b = se3_exp(random_tangent(rng, 1.0, 3.0));
    const SE3Pose c = se3_exp(random_tangent(rng, 1.0, 3.0));
    EXPECT_LT(max_abs(((a * b) * c).matrix() - (a * (b * c)).matrix()), 1e-9);
    EXPECT_LT(max_abs((a * a.inverse()).matrix() - Eigen::Matrix4d::Identity()), 1e-9);
    EXPECT_LT(max_abs((SE3Pose::identity() * a).matrix() - a.matrix()), 1e-15);
    EXPECT_LT(max_abs((a * SE3Pose::identity()).matrix() - a.matrix()), 1e-15);
  }
}

TEST(Se3, LeftUpdate) {
  std::mt19937_64 rng(5);
  const SE3Pose p = se3_exp(random_tangent(rng, 1.0, 2.0));
  EXPECT_EQ(se3_left_update(p, TangentVector::Zero()).matrix(), p.matrix());
  const TangentVector x = random_tangent(rng, 1.0, 2.0);
  EXPECT_LT(max_abs(se3_left_update(SE3Pose::identity(), x).matrix() - se3_exp(x).matrix()), 1e-15);
}

TEST(Se3, LeftUpdateUndoneByNegatedIncrement) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const SE3Pose p = se3_exp(random_tangent(rng, 1.0, 2.0));
    const TangentVector x = random_tangent(rng, 0.5, 1.0);
    const SE3Pose q = se3_left_update(p, x);
    const Eigen::Matrix4d oracle_p = se3_exp(x).matrix().inverse() * q.matrix();
    EXPECT_LT(max_abs(oracle_p - p.matrix()), 1e-8);
    EXPECT_LT(max_abs(se3_left_update(q, -x).matrix() - p.matrix()), 1e-8);
  }
}

TEST(Se3, RightIncrementEqualsAdjointTransportedLeftIncrement) {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 100; ++i) {
    const SE3Pose p = se3_exp(random_tangent(rng, 1.0, 2.0));
    const TangentVector y = random_tangent(rng, 0.3, 0.5);
    const SE3Pose right = p * se3_exp(y);
    EXPECT_LT(max_abs(se3_left_update(p, p.adjoint() * y).matrix() - right.matrix()), 1e-8);
  }
}

TEST(Se3, AdjointTransportsTwists) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const SE3Pose t = se3_exp(random_tangent(rng, 1.0, 2.0));
    const TangentVector x = random_tangent(rng, 0.3, 0.5);
    const Eigen::Matrix4d lhs = se3_exp(t.adjoint() * x).matrix();
    const Eigen::Matrix4d rhs = t.matrix() * se3_exp(x).matrix() * t.matrix().inverse();
    EXPECT_LT(max_abs(lhs - rhs), 1e-12);
  }
}

TEST(Camera, ProjectClosedForm) {
  const Eigen::Vector2d c = project(kCam, {0, 0, 1});
  EXPECT_EQ(c, Eigen::Vector2d(320, 240));
  EXPECT_DOUBLE_EQ(project(kCam, {1, 0, 2}).x(), 370.0);
}

TEST(Camera, BackprojectClosedForm) {
  EXPECT_EQ(backproject(kCam, {320, 240}, 1.0), Eigen::Vector3d(0, 0, 1));
  EXPECT_EQ(backproject(kCam, {370, 240}, 2.0), Eigen::Vector3d(1, 0, 2));
}

TEST(Camera, NonPositiveDepthRejected) {
  try {
    project(kCam, {0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDepth);
  }
  try {
    backproject(kCam, {1, 1}, -1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDepth);
  }
}

TEST(Camera, RoundTrip) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0), z(0.1, 50.0);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d x(5 * u(rng), 5 * u(rng), z(rng));
    const Eigen::Vector3d back = backproject(kCam, project(kCam, x), x.z());
    EXPECT_LT((back - x).norm(), 1e-9 * x.norm());
  }
}

TEST(Camera, IdentityChainMapsPixelsToThemselves) {
  for (int v = 0; v < kCam.height; v += 7) {
    for (int u = 0; u < kCam.width; u += 7) {
      const Eigen::Vector2d p(u, v);
      const Eigen::Vector2d q = project(kCam, SE3Pose::identity() * backproject(kCam, p, 1.7));
      EXPECT_LT((q - p).norm(), 1e-12);
    }
  }
}

TEST(Camera, LevelIntrinsicsFollowBoxFilterCentres) {
  const CameraModel c1 = kCam.at_level(1);
  const Eigen::Vector3d x(0.2, -0.1, 1.3);
  EXPECT_LT((project(c1, x) - pixel_at_level(project(kCam, x), 1)).norm(), 1e-12);
  EXPECT_EQ(kCam.at_level(2).width, 160);
}

TEST(Bilinear, ExactAtIntegersAndMidpoints) {
  IntensityImage img(4, 3, 0.0);
  img(1, 1) = 100.0;
  EXPECT_EQ(sample_bilinear(img, {1.0, 1.0}), 100.0);
  EXPECT_EQ(sample_bilinear(img, {0.5, 1.0}), 50.0);
  EXPECT_EQ(sample_bilinear(img, {3.0, 2.0}), 0.0);
}

TEST(Bilinear, ConstantImage) {
  IntensityImage img(9, 7, 42.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(0.0, 8.0), uy(0.0, 6.0);
  for (int i = 0; i < 100; ++i) EXPECT_DOUBLE_EQ(sample_bilinear(img, {ux(rng), uy(rng)}), 42.0);
}

TEST(Bilinear, ExactOnAffineRamps) {
  IntensityImage img(20, 15);
  for (int y = 0; y < 15; ++y)
    for (int x = 0; x < 20; ++x) img(x, y) = 3.0 * x - 2.0 * y + 7.0;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> ux(0.0, 19.0), uy(0.0, 14.0);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector2d p(ux(rng), uy(rng));
    EXPECT_NEAR(sample_bilinear(img, p), 3.0 * p.x() - 2.0 * p.y() + 7.0, 1e-12);
    const auto s = try_sample_bilinear(img, p);
    ASSERT_TRUE(s);
    EXPECT_NEAR(s->gradient.x(), 3.0, 1e-12);
    EXPECT_NEAR(s->gradient.y(), -2.0, 1e-12);
  }
}

TEST(Bilinear, OutOfBounds) {
  IntensityImage img(5, 5, 1.0);
  for (const Eigen::Vector2d& p : {Eigen::Vector2d(-0.01, 2), Eigen::Vector2d(4.01, 2), Eigen::Vector2d(2, 4.5),
                                  Eigen::Vector2d(NAN, 1)}) {
    try {
      sample_bilinear(img, p);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
    }
  }
}

TEST(Pyramid, LevelSizes) {
  Frame f;
  f.intensity = IntensityImage(640, 480, 1.0);
  f.depth = DepthImage(640, 480, 1.0);
  const Frame p = build_pyramid(f, 4);
  ASSERT_EQ(p.levels(), 4);
  const int sizes[4][2] = {{640, 480}, {320, 240}, {160, 120}, {80, 60}};
  for (int l = 0; l < 4; ++l) {
    EXPECT_EQ(p.pyramid[l].intensity.width(), sizes[l][0]);
    EXPECT_EQ(p.pyramid[l].intensity.height(), sizes[l][1]);
  }
}

TEST(Pyramid, OddSizesRoundUp) {
  Frame f;
  f.intensity = IntensityImage(101, 67, 1.0);
  f.depth = DepthImage(101, 67, 1.0);
  const Frame p = build_pyramid(f, 3);
  for (int l = 0; l < 3; ++l) {
    const int s = 1 << l;
    EXPECT_EQ(p.pyramid[l].intensity.width(), (101 + s - 1) / s);
    EXPECT_EQ(p.pyramid[l].intensity.height(), (67 + s - 1) / s);
  }
}

TEST(Pyramid, ConstantImageStaysConstant) {
  Frame f;
  f.intensity = IntensityImage(64, 48, 77.0);
  f.depth = DepthImage(64, 48, 2.0);
  for (const auto& level : build_pyramid(f, 3).pyramid) {
    for (double v : level.intensity.data()) EXPECT_EQ(v, 77.0);
    for (double v : level.depth.data()) EXPECT_EQ(v, 2.0);
  }
}

TEST(Pyramid, CheckerboardAveragesToMean) {
  Frame f;
  f.intensity = IntensityImage(32, 32);
  f.depth = DepthImage(32, 32, 1.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) f.intensity(x, y) = ((x + y) % 2) ? 200.0 : 10.0;
  for (double v : build_pyramid(f, 2).pyramid[1].intensity.data()) EXPECT_EQ(v, 105.0);
}

TEST(Pyramid, DepthTakesNearestValidNeverAverages) {
  Frame f;
  f.intensity = IntensityImage(16, 16, 0.0);
  f.depth = DepthImage(16, 16, 0.0);
  f.depth(0, 0) = 3.0;
  f.depth(1, 0) = 1.0;  // discontinuity inside the block
  f.depth(1, 1) = 0.0;
  f.depth(2, 0) = 0.0;  // fully invalid block stays invalid
  const Frame p = build_pyramid(f, 2);
  EXPECT_EQ(p.pyramid[1].depth(0, 0), 1.0);
  EXPECT_EQ(p.pyramid[1].depth(1, 0), 0.0);
}

TEST(Pyramid, TooSmall) {
  Frame f;
  f.intensity = IntensityImage(40, 40, 0.0);
  f.depth = DepthImage(40, 40, 1.0);
  EXPECT_NO_THROW(build_pyramid(f, 3));  // 10x10 coarsest
  try {
    build_pyramid(f, 4);  // 5x5 coarsest
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ImageTooSmall);
  }
}
