#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <Eigen/Eigenvalues>

#include "diffgnss/neuralnet.hpp"
#include "test_support.hpp"

using namespace diffgnss;

namespace {

NetParams random_net(int input, int depth, int width, std::uint64_t seed) {
  NetParams p = NetParams::initialize({input, depth, width, 10.0}, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.3);
  for (double& v : p.w.back().reshaped()) v = g(rng);
  for (auto& b : p.b)
    for (double& v : b) v = g(rng) * 0.1;
  return p;
}

Eigen::MatrixXd random_inputs(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd x(rows, cols);
  for (double& v : x.reshaped()) v = u(rng);
  return x;
}

// Loss c . y and its central-difference gradient in parameter i.
double fd_param(NetParams p, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& c, std::size_t i, double h) {
  const double v = p.flat(i);
  p.flat(i) = v + h;
  const double lp = c.dot(nn::forward(p, x).first);
  p.flat(i) = v - h;
  const double lm = c.dot(nn::forward(p, x).first);
  return (lp - lm) / (2.0 * h);
}

double flat_grad(const NetGradients& g, std::size_t i) {
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    const auto nw = static_cast<std::size_t>(g.w[l].size());
    if (i < nw) return g.w[l].data()[i];
    i -= nw;
    const auto nb = static_cast<std::size_t>(g.b[l].size());
    if (i < nb) return g.b[l].data()[i];
    i -= nb;
  }
  return std::nan("");
}

EpochFrame frame_with_prns(std::mt19937_64& rng, const std::vector<int>& prns) {
  EpochFrame f = testing_support::random_frame(rng, static_cast<int>(prns.size()));
  for (std::size_t n = 0; n < prns.size(); ++n) f.observations[n].prn = prns[n];
  return f;
}

}  // namespace

TEST(Features, OneHotPrnAndLayout) {
  std::mt19937_64 rng(1);
  const EpochFrame f = frame_with_prns(rng, {7, 2, 30, 12});
  const ReceiverState fix = testing_support::truth_state(f);
  const FrameFeatures ff = build_features(f, fix, 0.3, FeatureStats{});
  ASSERT_EQ(ff.x.rows(), 42);
  EXPECT_EQ(ff.x(feature::kPrnOneHot + 6, 0), 1.0);
  EXPECT_EQ(ff.slot[0], 6);
  for (Eigen::Index n = 0; n < ff.x.cols(); ++n) {
    EXPECT_EQ(ff.x.block(feature::kPrnOneHot, n, kSlots, 1).sum(), 1.0);
    EXPECT_NEAR((ff.x.block<3, 1>(feature::kGeometry, n).norm()), 1.0, 1e-12);
    EXPECT_NEAR(ff.x(feature::kHeading, n), std::sin(0.3), 1e-15);
    EXPECT_NEAR(ff.x(feature::kHeading + 1, n), std::cos(0.3), 1e-15);
  }
}

TEST(Features, DeterministicAndImputed) {
  std::mt19937_64 rng(2);
  EpochFrame f = frame_with_prns(rng, {1, 5, 9, 13, 17});
  const ReceiverState fix = testing_support::truth_state(f);
  const FeatureStats st{40.0, 5.0, fix.position().vec(), Eigen::Vector3d::Constant(100.0)};
  const FrameFeatures a = build_features(f, fix, 1.0, st), b = build_features(f, fix, 1.0, st);
  EXPECT_EQ(a.x, b.x);
  f.observations[2].cn0_dbhz = std::nan("");
  const FrameFeatures c = build_features(f, fix, 1.0, st);
  EXPECT_EQ(c.imputed_cn0, 1);
  EXPECT_EQ(c.x(feature::kCn0, 2), 0.0);
  EXPECT_EQ((c.x.block<3, 1>(feature::kPosition, 0)), Eigen::Vector3d::Zero());
}

TEST(Features, StandardizedOverTrainingSet) {
  std::mt19937_64 rng(3);
  std::vector<EpochFrame> frames;
  std::vector<ReceiverState> fixes;
  for (int k = 0; k < 200; ++k) {
    frames.push_back(testing_support::random_frame(rng, 8));
    ReceiverState x = testing_support::truth_state(frames.back());
    fixes.push_back(x);
  }
  std::vector<const EpochFrame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  const FeatureStats st = fit_feature_stats(ptrs, fixes);
  double sum = 0.0, sum2 = 0.0, n = 0.0;
  Eigen::Vector3d psum = Eigen::Vector3d::Zero(), psum2 = Eigen::Vector3d::Zero();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const FrameFeatures ff = build_features(frames[k], fixes[k], 0.0, st);
    for (Eigen::Index c = 0; c < ff.x.cols(); ++c) {
      sum += ff.x(feature::kCn0, c);
      sum2 += ff.x(feature::kCn0, c) * ff.x(feature::kCn0, c);
      n += 1.0;
    }
    psum += ff.x.block<3, 1>(feature::kPosition, 0);
    psum2 += ff.x.block<3, 1>(feature::kPosition, 0).cwiseAbs2();
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-9);
  EXPECT_NEAR(sum2 / n, 1.0, 1e-9);
  EXPECT_LT((psum / 200.0).norm(), 1e-9);
  EXPECT_LT((psum2 / 200.0 - Eigen::Vector3d::Ones()).norm(), 1e-9);
}

TEST(Forward, ZeroWeightsGiveZeroAndHeadStartsAtZero) {
  std::mt19937_64 rng(4);
  NetParams p = NetParams::initialize({kFeatureCount, 4, 32, 10.0}, 9);
  EXPECT_EQ(p.parameter_count(), 42u * 32 + 32 + 3 * (32 * 32 + 32) + 33);
  const Eigen::MatrixXd x = random_inputs(rng, kFeatureCount, 20);
  EXPECT_EQ(nn::forward(p, x).first.cwiseAbs().maxCoeff(), 0.0);
  for (auto& w : p.w) w.setZero();
  EXPECT_EQ(nn::forward(p, x).first.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(nn::forward(p, Eigen::MatrixXd::Zero(41, 3)), DimensionError);
}

TEST(Forward, MaskedSlotIsExactlyZeroAndIndependent) {
  std::mt19937_64 rng(5);
  const NetParams p = random_net(kFeatureCount, 3, 16, 11);
  SlotBatch batch(2);
  batch.features = random_inputs(rng, kFeatureCount, 2 * kSlots);
  for (int s : {0, 4, 9, 20}) batch.mask[static_cast<std::size_t>(s)] = 1;
  for (int s : {1, 2, 31}) batch.mask[static_cast<std::size_t>(kSlots + s)] = 1;
  EXPECT_EQ(batch.row_count(0), 4);
  EXPECT_EQ(batch.row_count(1), 3);
  const auto [y, tape] = nn::forward_slots(p, batch);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_NE(y(0, 4), 0.0);

  const Eigen::MatrixXd g = Eigen::MatrixXd::Random(2, kSlots);
  const NetGradients g1 = nn::backward_slots(p, tape, g);

  SlotBatch altered = batch;
  altered.features.col(1) = random_inputs(rng, kFeatureCount, 1) * 100.0;
  altered.features.col(kSlots + 7).setConstant(1e6);
  const auto [y2, tape2] = nn::forward_slots(p, altered);
  EXPECT_EQ(y2, y);
  Eigen::MatrixXd g_alt = g;
  g_alt(0, 1) = 1e9;  // gradient on a masked slot is ignored
  const NetGradients g2 = nn::backward_slots(p, tape2, g_alt);
  for (std::size_t l = 0; l < p.layers(); ++l) {
    EXPECT_EQ(g1.w[l], g2.w[l]);
    EXPECT_EQ(g1.b[l], g2.b[l]);
  }
}

TEST(Forward, BoundedInputsGiveFiniteLipschitzOutputs) {
  std::mt19937_64 rng(6);
  const NetParams p = random_net(10, 4, 12, 3);
  double lipschitz = p.shape.output_scale;
  for (const auto& w : p.w) lipschitz *= w.operatorNorm();
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd a = random_inputs(rng, 10, 1) * 50.0;
    const Eigen::MatrixXd b = a + random_inputs(rng, 10, 1) * 0.1;
    const double ya = nn::forward(p, a).first[0], yb = nn::forward(p, b).first[0];
    ASSERT_TRUE(std::isfinite(ya));
    EXPECT_LE(std::abs(ya - yb), lipschitz * (a - b).norm() * (1 + 1e-12));
  }
}

TEST(Backward, TwoLayerToyMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const NetParams p = random_net(5, 2, 6, 21);
  const Eigen::MatrixXd x = random_inputs(rng, 5, 7);
  const Eigen::RowVectorXd c = Eigen::RowVectorXd::Random(7);
  const auto [y, tape] = nn::forward(p, x);
  const NetGradients g = nn::backward(p, tape, c);
  Eigen::VectorXd analytic(p.parameter_count()), numeric(p.parameter_count());
  for (std::size_t i = 0; i < p.parameter_count(); ++i) {
    analytic[static_cast<Eigen::Index>(i)] = flat_grad(g, i);
    numeric[static_cast<Eigen::Index>(i)] = fd_param(p, x, c, i, 1e-6);
  }
  EXPECT_LT(testing_support::rel_err(analytic, numeric), 1e-6);
}

TEST(Backward, RandomSmallNetsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const NetParams p = random_net(8, 2 + t % 3, 5 + t, 100 + static_cast<std::uint64_t>(t));
    const Eigen::MatrixXd x = random_inputs(rng, 8, 6);
    const Eigen::RowVectorXd c = Eigen::RowVectorXd::Random(6);
    const NetGradients g = nn::backward(p, nn::forward(p, x).second, c);
    Eigen::VectorXd a(p.parameter_count()), n(p.parameter_count());
    for (std::size_t i = 0; i < p.parameter_count(); ++i) {
      a[static_cast<Eigen::Index>(i)] = flat_grad(g, i);
      n[static_cast<Eigen::Index>(i)] = fd_param(p, x, c, i, 1e-6);
    }
    worst = std::max(worst, testing_support::rel_err(a, n));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Backward, ZeroUpstreamAndStaleTape) {
  std::mt19937_64 rng(9);
  NetParams p = random_net(6, 3, 8, 5);
  const Eigen::MatrixXd x = random_inputs(rng, 6, 4);
  const auto [y, tape] = nn::forward(p, x);
  EXPECT_EQ(nn::backward(p, tape, Eigen::RowVectorXd(Eigen::RowVectorXd::Zero(4))).squared_norm(), 0.0);
  NetGradients g = nn::backward(p, tape, Eigen::RowVectorXd(Eigen::RowVectorXd::Ones(4)));
  ASSERT_TRUE(adam_step(p, g));
  EXPECT_THROW(nn::backward(p, tape, Eigen::RowVectorXd(Eigen::RowVectorXd::Ones(4))), NumericalError);
  EXPECT_THROW(nn::backward(p, nn::forward(p, x).second, Eigen::RowVectorXd(Eigen::RowVectorXd::Ones(3))), DimensionError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  NetParams p = random_net(6, 2, 8, 1);
  const NetParams before = p;
  ASSERT_TRUE(adam_step(p, p.zero_gradients()));
  for (std::size_t l = 0; l < p.layers(); ++l) {
    EXPECT_EQ(p.w[l], before.w[l]);
    EXPECT_EQ(p.b[l], before.b[l]);
  }
  EXPECT_EQ(p.step, 1);
}

TEST(Adam, FirstStepMovesBySignOfGradient) {
  NetParams p = random_net(6, 2, 8, 2);
  const NetParams before = p;
  NetGradients g = p.zero_gradients();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& w : g.w)
    for (double& v : w.reshaped()) v = n(rng);
  for (auto& b : g.b)
    for (double& v : b) v = n(rng);
  const AdamConfig cfg;
  ASSERT_TRUE(adam_step(p, g, cfg));
  for (std::size_t l = 0; l < p.layers(); ++l) {
    const Eigen::ArrayXXd ga = g.w[l].array();
    const Eigen::ArrayXXd expected = -cfg.lr * ga / (ga.abs() + cfg.eps);
    EXPECT_LT(((p.w[l] - before.w[l]).array() - expected).abs().maxCoeff(), 1e-12);
    EXPECT_LT(((p.w[l] - before.w[l]).array() + cfg.lr * ga.sign()).abs().maxCoeff(), 1e-6 * cfg.lr / 1e-3);
  }
}

TEST(Adam, DeterministicAndSkipsNonFinite) {
  NetParams a = random_net(6, 2, 8, 4), b = random_net(6, 2, 8, 4);
  NetGradients g = a.zero_gradients();
  g.w[0].setConstant(0.5);
  g.b[1].setConstant(-2.0);
  for (int i = 0; i < 3; ++i) {
    adam_step(a, g);
    adam_step(b, g);
  }
  for (std::size_t l = 0; l < a.layers(); ++l) EXPECT_EQ(a.w[l], b.w[l]);
  const NetParams before = a;
  g.w[1](0, 0) = std::nan("");
  EXPECT_FALSE(adam_step(a, g));
  EXPECT_EQ(a.step, before.step);
  EXPECT_EQ(a.w[0], before.w[0]);
  EXPECT_EQ(a.version, before.version);
}

TEST(Checkpoint, RoundTripIsBitStable) {
  const NetParams p = random_net(kFeatureCount, 4, 32, 77);
  const FeatureStats st{38.123456789, 4.987654321, {-2.7e6, -4.3e6, 3.85e6}, {1234.5, 987.25, 1.0 / 3.0}};
  const auto path = std::filesystem::temp_directory_path() / "diffgnss_ckpt_test.json";
  save_checkpoint(p, st, path.string());
  const auto [q, st2] = load_checkpoint(path.string());
  EXPECT_EQ(q.shape, p.shape);
  EXPECT_EQ(st2, st);
  for (std::size_t l = 0; l < p.layers(); ++l) {
    EXPECT_EQ(q.w[l], p.w[l]);
    EXPECT_EQ(q.b[l], p.b[l]);
  }
  save_checkpoint(q, st2, path.string() + ".2");
  std::ifstream f1(path), f2(path.string() + ".2");
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".2");
  EXPECT_THROW(load_checkpoint(path.string()), DataError);
}
