#include <gtest/gtest.h>

#include <random>

#include "diffgnss/wls.hpp"
#include "test_support.hpp"

using namespace diffgnss;
using testing_support::random_frame;
using testing_support::truth_state;

namespace {

// Central finite differences of the residual vector r(X) = rho - ||x - s|| - clock.
Eigen::MatrixXd fd_jacobian(const EpochFrame& f, const ReceiverState& x0, double h = 10.0) {
  Eigen::MatrixXd j(f.size(), 4);
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d xp = x0.vec(), xm = x0.vec();
    xp[k] += h;
    xm[k] -= h;
    for (std::size_t n = 0; n < f.size(); ++n) {
      j(n, k) = (corrected_residual(ReceiverState::from(xp), f.observations[n]) -
                 corrected_residual(ReceiverState::from(xm), f.observations[n])) /
                (2.0 * h);
    }
  }
  return j;
}

}  // namespace

TEST(Jacobian, SingleSatelliteAlongX) {
  EpochFrame f;
  for (int n = 0; n < 4; ++n) {
    SatelliteObservation o;
    o.prn = n + 1;
    o.sat_pos = {2e7 + n, n == 1 ? 1e7 : 0.0, n == 2 ? 1e7 : (n == 3 ? -1e7 : 0.0)};
    o.pseudorange_m = 2e7;
    f.observations.push_back(o);
  }
  const Eigen::MatrixXd j = jacobian(f, {6.4e6, 0.0, 0.0, 0.0});
  EXPECT_NEAR(j(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(j(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(j(0, 2), 0.0, 1e-12);
  EXPECT_EQ(j(0, 3), -1.0);
  const Eigen::MatrixXd fd = fd_jacobian(f, {6.4e6, 0.0, 0.0, 0.0});
  EXPECT_NEAR(fd(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(fd(0, 3), -1.0, 1e-9);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 50; ++t) {
    ReceiverState truth;
    const EpochFrame f = random_frame(rng, 8, {}, 10.0, &truth);
    Eigen::Vector4d x = truth.vec();
    x.head<3>() += 1000.0 * testing_support::random_unit(rng);
    const Eigen::MatrixXd j = jacobian(f, ReceiverState::from(x));
    const Eigen::MatrixXd fd = fd_jacobian(f, ReceiverState::from(x));
    EXPECT_LT((j - fd).norm() / j.norm(), 1e-6);
    for (Eigen::Index n = 0; n < j.rows(); ++n) EXPECT_EQ(j(n, 3), -1.0);
  }
}

TEST(Jacobian, RejectsTooFewSatellites) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(jacobian(random_frame(rng, 3), {}), GeometryError);
}

TEST(GaussNewton, ZeroErrorFrameFromEarthCenter) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const EpochFrame f = random_frame(rng, 4 + t % 9);
    const auto [x, diag] = gauss_newton_solve(f, {}, ReceiverState{});
    EXPECT_TRUE(diag.converged);
    EXPECT_LE(diag.iterations, 10);
    EXPECT_LT((x.vec() - truth_state(f).vec()).norm(), 1e-6);
  }
}

TEST(GaussNewton, CommonModeAbsorbedByClock) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    EpochFrame f = random_frame(rng, 8, testing_support::random_vector(rng, 8, 5.0));
    const auto [x0, d0] = gauss_newton_solve(f, {}, ReceiverState{});
    const double c = 123.456;
    for (auto& o : f.observations) o.pseudorange_m += c;
    const auto [x1, d1] = gauss_newton_solve(f, {}, ReceiverState{});
    EXPECT_LT((x1.position().vec() - x0.position().vec()).norm(), 1e-6);
    EXPECT_NEAR(x1.clock_offset_m - x0.clock_offset_m, c, 1e-6);
  }
}

TEST(GaussNewton, BiasVectorMatchesGainPrediction) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const int m = 6 + t % 7;
    const auto eps = testing_support::random_vector(rng, m, 2.0 / std::sqrt(m));
    const EpochFrame f = random_frame(rng, m, eps);
    const auto [x, diag] = gauss_newton_solve(f, {}, ReceiverState{});
    const Eigen::Vector4d predicted =
        predict_estimation_error(diag, Eigen::Map<const Eigen::VectorXd>(eps.data(), m));
    EXPECT_LT((x.vec() - truth_state(f).vec() - predicted).norm(), 1e-3);
  }
}

TEST(GaussNewton, LeftInverseAndWeightScaling) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    EpochFrame f = random_frame(rng, 9, testing_support::random_vector(rng, 9, 3.0));
    const auto [x, diag] = gauss_newton_solve(f, {}, ReceiverState{});
    EXPECT_LT((diag.gain * diag.jacobian - Eigen::Matrix4d::Identity()).norm(), 1e-6);
    for (auto& o : f.observations) o.pr_uncertainty_m *= 1.7;
    const auto [x2, diag2] = gauss_newton_solve(f, {}, ReceiverState{});
    EXPECT_LT((x2.position().vec() - x.position().vec()).norm(), 1e-6);
  }
}

TEST(GaussNewton, RandomInitializationsAgree) {
  std::mt19937_64 rng(6);
  const EpochFrame f = random_frame(rng, 10, testing_support::random_vector(rng, 10, 4.0));
  const auto [ref, d] = gauss_newton_solve(f, {}, ReceiverState{});
  std::uniform_real_distribution<double> u(0.0, 1e5);
  for (int t = 0; t < 100; ++t) {
    Eigen::Vector4d init = truth_state(f).vec();
    init.head<3>() += u(rng) * testing_support::random_unit(rng);
    const auto [x, diag] = gauss_newton_solve(f, {}, ReceiverState::from(init));
    EXPECT_LT((x.position().vec() - ref.position().vec()).norm(), 1e-4);
  }
}

TEST(GaussNewton, DegenerateGeometryIsRejected) {
  EpochFrame f;
  for (int n = 0; n < 5; ++n) {
    SatelliteObservation o;
    o.prn = n + 1;
    o.sat_pos = {2.6e7, 0.0, 0.0};
    o.pseudorange_m = 2e7;
    f.observations.push_back(o);
  }
  EXPECT_THROW(gauss_newton_solve(f, {}, ReceiverState{6.4e6, 0, 0, 0}), GeometryError);
}

TEST(GaussNewton, CorrectionsLengthChecked) {
  std::mt19937_64 rng(8);
  const EpochFrame f = random_frame(rng, 6);
  const std::vector<double> bad(5, 0.0);
  EXPECT_THROW(gauss_newton_solve(f, bad, ReceiverState{}), DimensionError);
}

TEST(PredictEstimationError, ZeroAndAllOnes) {
  std::mt19937_64 rng(9);
  const EpochFrame f = random_frame(rng, 8);
  const auto [x, diag] = gauss_newton_solve(f, {}, ReceiverState{});
  EXPECT_LT(predict_estimation_error(diag, Eigen::VectorXd::Zero(8)).norm(), 1e-15);
  // Estimate minus truth for a common +1 m error: the clock absorbs it.
  const Eigen::Vector4d e1 = predict_estimation_error(diag, Eigen::VectorXd::Ones(8));
  EXPECT_LT(e1.head<3>().norm(), 1e-9);
  EXPECT_NEAR(e1[3], 1.0, 1e-9);
  EXPECT_NEAR(diag.clock_sensitivity().sum(), 1.0, 1e-9);
  EXPECT_THROW(predict_estimation_error(diag, Eigen::VectorXd::Zero(7)), DimensionError);
}

TEST(PredictEstimationError, MatchesPerturbationOracle) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 50; ++t) {
    EpochFrame clean = random_frame(rng, 9, testing_support::random_vector(rng, 9, 2.0));
    const auto [x0, d0] = gauss_newton_solve(clean, {}, ReceiverState{});
    const auto eps = testing_support::random_vector(rng, 9, 3.0);
    EpochFrame biased = clean;
    for (int n = 0; n < 9; ++n) biased.observations[n].pseudorange_m += eps[n];
    const auto [x1, d1] = gauss_newton_solve(biased, {}, ReceiverState{});
    const Eigen::Vector4d pred = predict_estimation_error(d0, Eigen::Map<const Eigen::VectorXd>(eps.data(), 9));
    EXPECT_LT((x1.vec() - x0.vec() - pred).norm(), 1e-3);
  }
}

TEST(SolveTrace, WarmAndColdStartAgree) {
  std::mt19937_64 rng(12);
  std::vector<EpochFrame> frames;
  for (int k = 0; k < 5; ++k) frames.push_back(random_frame(rng, 7));
  const auto warm = solve_trace(frames, {}, false);
  const auto cold = solve_trace(frames, {}, true);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    EXPECT_LT((warm[k].solution.vec() - cold[k].solution.vec()).norm(), 1e-6);
  }
}
