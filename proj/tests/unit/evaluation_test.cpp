#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dot/evaluation.hpp"
#include "support/oracles.hpp"

using namespace dot;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoError;
}

std::vector<Eigen::Vector3d> random_cloud(std::mt19937_64& rng, int n, double spread = 1.0) {
  std::normal_distribution<double> g(0.0, spread);
  std::vector<Eigen::Vector3d> p(n);
  for (auto& x : p) x = {g(rng), g(rng), g(rng)};
  return p;
}

SE3Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  TangentVector x;
  for (int i = 0; i < 6; ++i) x(i) = g(rng);
  return se3_exp(x);
}

// Kabsch: centroids plus SVD of the cross-covariance with a reflection guard.
SE3Pose kabsch(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst) {
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(src.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  return {r, cd - r * cs};
}

Trajectory stamped(const std::vector<Eigen::Vector3d>& p, double t0 = 0.0, double dt = 0.1) {
  Trajectory t;
  for (std::size_t i = 0; i < p.size(); ++i)
    t.push_back({t0 + dt * static_cast<double>(i), SE3Pose(Eigen::Matrix3d::Identity(), p[i])});
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Alignment and ATE

TEST(Align, IdentityForIdenticalTrajectories) {
  std::mt19937_64 rng(1);
  const auto p = random_cloud(rng, 20);
  const SE3Pose a = align_trajectories(p, p);
  EXPECT_LT((a.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Align, RecoversRigidOffsetLikeKabsch) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (int trial = 0; trial < 20; ++trial) {
    const auto est = random_cloud(rng, 30);
    const SE3Pose g = random_pose(rng);
    std::vector<Eigen::Vector3d> truth;
    for (const auto& p : est) truth.push_back(g * p + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)));
    const SE3Pose a = align_trajectories(est, truth);
    const SE3Pose k = kabsch(est, truth);
    EXPECT_LT((a.matrix() - k.matrix()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(a.rotation().determinant(), 1.0, 1e-12);
  }
}

TEST(Align, DegenerateInputs) {
  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 10; ++i) line.push_back({0.1 * i, 0.2 * i, 0.0});
  EXPECT_EQ(code_of([&] { align_trajectories(line, line); }), ErrorCode::DegenerateGeometry);
  const std::vector<Eigen::Vector3d> two = {{0, 0, 0}, {1, 0, 0}};
  EXPECT_EQ(code_of([&] { align_trajectories(two, two); }), ErrorCode::DegenerateGeometry);
  std::vector<Eigen::Vector3d> shorter(line.begin(), line.end() - 1);
  EXPECT_EQ(code_of([&] { align_trajectories(line, shorter); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { ate_rmse(line, shorter); }), ErrorCode::LengthMismatch);
}

TEST(Ate, RawRmseClosedForm) {
  std::mt19937_64 rng(3);
  const auto p = random_cloud(rng, 15);
  std::vector<Eigen::Vector3d> q;
  for (const auto& x : p) q.push_back(x + Eigen::Vector3d(0.1, 0.0, 0.0));
  EXPECT_NEAR(ate_rmse(q, p), 0.1, 1e-12);
  // A pure offset is removed by the alignment.
  EXPECT_LT(absolute_trajectory_error(q, p).rmse, 1e-12);
}

TEST(Ate, IsotropicNoiseGivesSigmaRootThree) {
  std::mt19937_64 rng(4);
  const double sigma = 0.01;
  std::normal_distribution<double> noise(0.0, sigma);
  const auto truth = random_cloud(rng, 20000, 2.0);
  std::vector<Eigen::Vector3d> est;
  for (const auto& p : truth) est.push_back(p + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)));
  EXPECT_NEAR(absolute_trajectory_error(est, truth).rmse, sigma * std::sqrt(3.0), 0.02 * sigma);
}

TEST(Ate, InvariantToRigidTransformOfEstimate) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    const auto truth = random_cloud(rng, 25);
    std::vector<Eigen::Vector3d> est, moved;
    for (const auto& p : truth) est.push_back(p + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)));
    const SE3Pose g = random_pose(rng);
    for (const auto& p : est) moved.push_back(g * p);
    EXPECT_NEAR(absolute_trajectory_error(est, truth).rmse, absolute_trajectory_error(moved, truth).rmse, 1e-10);
  }
}

TEST(Ate, CollinearFallsBackToCentroids) {
  std::vector<Eigen::Vector3d> truth, est;
  for (int i = 0; i < 10; ++i) {
    truth.push_back({0.0, 0.0, 0.1 * i});
    est.push_back({0.5, 0.0, 0.1 * i + 0.02 * (i % 2)});
  }
  const AteResult r = absolute_trajectory_error(est, truth);
  EXPECT_FALSE(r.rigid);
  // Centroid shift leaves the alternating 0.02 pattern, centred: +-0.01.
  EXPECT_NEAR(r.rmse, 0.01, 1e-12);
}

TEST(Ate, SelfIsZero) {
  std::mt19937_64 rng(6);
  const auto p = random_cloud(rng, 40);
  const AteResult r = absolute_trajectory_error(p, p);
  EXPECT_TRUE(r.rigid);
  EXPECT_LE(r.rmse, 1e-12);
}

TEST(Associate, NearestTimestampsOneToOne) {
  std::mt19937_64 rng(7);
  const auto p = random_cloud(rng, 10);
  const Trajectory truth = stamped(p, 0.0, 0.1);
  Trajectory est = stamped(p, 0.005, 0.1);
  est.erase(est.begin() + 4);
  est.push_back({5.0, SE3Pose()});
  const auto [e, t] = associate_by_timestamp(est, truth, 0.02);
  ASSERT_EQ(e.size(), 9u);
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_NEAR(e[i].timestamp - t[i].timestamp, 0.005, 1e-12);
    EXPECT_EQ(e[i].pose.translation(), t[i].pose.translation());
  }
}

// ---------------------------------------------------------------------------
// Normalized error

TEST(NormalizedError, Examples) {
  const std::map<std::string, std::map<std::string, double>> equal = {
      {"a", {{"dot", 0.1}, {"orb", 0.1}}}, {"b", {{"dot", 0.3}, {"orb", 0.3}}}};
  EXPECT_DOUBLE_EQ(normalized_error(equal).at("orb"), 1.0);
  EXPECT_DOUBLE_EQ(normalized_error(equal).at("dot"), 1.0);

  const std::map<std::string, std::map<std::string, double>> doubled = {
      {"a", {{"dot", 0.1}, {"orb", 0.2}}}, {"b", {{"dot", 0.3}, {"orb", 0.6}}}};
  EXPECT_DOUBLE_EQ(normalized_error(doubled).at("orb"), 2.0);

  // Mean of ratios, not ratio of means.
  const std::map<std::string, std::map<std::string, double>> mixed = {
      {"a", {{"dot", 0.1}, {"orb", 0.4}, {"mask", 0.1}}},
      {"b", {{"dot", 1.0}, {"orb", 1.0}}},
      {"c", {{"dot", 0.5}, {"orb", 0.25}, {"mask", 1.0}}}};
  const auto n = normalized_error(mixed);
  EXPECT_DOUBLE_EQ(n.at("orb"), (4.0 + 1.0 + 0.5) / 3.0);
  EXPECT_DOUBLE_EQ(n.at("mask"), (1.0 + 2.0) / 2.0);
}

TEST(NormalizedError, Errors) {
  EXPECT_EQ(code_of([] { normalized_error({{"a", {{"dot", 0.0}, {"orb", 0.1}}}}); }), ErrorCode::DivisionByZero);
  EXPECT_EQ(code_of([] { normalized_error({{"a", {{"orb", 0.1}}}}); }), ErrorCode::ConfigError);
}

// ---------------------------------------------------------------------------
// Trials

TEST(Trials, DeterministicSeedsAndStatistics) {
  auto trial = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return TrialOutcome{true, std::uniform_real_distribution<double>(0.0, 1.0)(rng), 1.0, {}};
  };
  const TrialReport a = run_trials(trial, 5, 100);
  const TrialReport b = run_trials(trial, 5, 100);
  ASSERT_EQ(a.trials.size(), 5u);
  std::vector<double> v;
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a.trials[i].ate, b.trials[i].ate);
    v.push_back(a.trials[i].ate);
  }
  std::sort(v.begin(), v.end());
  EXPECT_EQ(a.median, v[2]);
  EXPECT_EQ(a.min, v.front());
  EXPECT_EQ(a.max, v.back());
  EXPECT_EQ(a.failures, 0);
}

TEST(Trials, FailuresAreCountedNotAveraged) {
  auto trial = [](std::uint64_t seed) -> TrialOutcome {
    if (seed == 2) throw Error(ErrorCode::TrackingLost, "lost");
    if (seed == 4) return TrialOutcome{false, 0.0, 0.3, "too few frames tracked"};
    return TrialOutcome{true, static_cast<double>(seed), 1.0, {}};
  };
  const TrialReport r = run_trials(trial, 6, 0);
  EXPECT_EQ(r.failures, 2);
  EXPECT_DOUBLE_EQ(r.median, 2.0);  // {0, 1, 3, 5}
  EXPECT_DOUBLE_EQ(r.min, 0.0);
  EXPECT_DOUBLE_EQ(r.max, 5.0);
  EXPECT_FALSE(r.trials[2].error.empty());
}

TEST(Trials, SingleTrial) {
  const TrialReport r = run_trials([](std::uint64_t) { return TrialOutcome{true, 0.25, 1.0, {}}; }, 1);
  EXPECT_EQ(r.median, 0.25);
  EXPECT_EQ(r.min, 0.25);
  EXPECT_EQ(r.max, 0.25);
  const TrialReport none = run_trials([](std::uint64_t) { return TrialOutcome{}; }, 3);
  EXPECT_EQ(none.failures, 3);
  EXPECT_TRUE(std::isnan(none.median));
}

TEST(Results, CsvLayout) {
  oracle::TempDir dir("csv");
  write_results_csv(dir.path() / "r.csv", {{"seq1", "dot", 0.0125, 1.0, 5}, {"seq1", "orb", 0.025, 2.0, 4}});
  std::ifstream in(dir.path() / "r.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "sequence,method,ate_m,normalized,trials_ok\nseq1,dot,0.0125,1,5\nseq1,orb,0.025,2,4\n");
  EXPECT_EQ(code_of([&] { write_results_csv(dir.path() / "missing" / "r.csv", {}); }), ErrorCode::IoError);
}
