#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "diffgnss/eval.hpp"
#include "test_support.hpp"

using namespace diffgnss;

namespace {

// Exact linear-interpolation percentile of an integer set: the rank
// q (n - 1) / 100 is kept as an integer numerator over 100.
double oracle_percentile(std::vector<long> v, long q) {
  std::sort(v.begin(), v.end());
  const long t = q * static_cast<long>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(t / 100);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const long scaled = v[lo] * 100 + (v[hi] - v[lo]) * (t % 100);
  return static_cast<double>(scaled) / 100.0;
}

double oracle_score(const std::vector<long>& v) { return 0.5 * (oracle_percentile(v, 50) + oracle_percentile(v, 95)); }

std::vector<double> as_double(const std::vector<long>& v) { return {v.begin(), v.end()}; }

// Meridian arc length for a small latitude step, from the radius of curvature.
double meridian_arc(double lat_deg, double dlat_deg) {
  const double s = std::sin(deg2rad(lat_deg));
  const double m = wgs84::kSemiMajorAxis * (1.0 - wgs84::kEccentricitySq) /
                   std::pow(1.0 - wgs84::kEccentricitySq * s * s, 1.5);
  return m * deg2rad(dlat_deg);
}

}  // namespace

TEST(HorizontalErrors, IdenticalFixesGiveZero) {
  std::vector<ReceiverState> fixes;
  std::vector<GeodeticPosition> truth;
  for (double lat : {-60.0, 0.0, 37.4, 80.0}) {
    const GeodeticPosition g{lat, -122.0 + 0.5 * lat, 30.0};
    truth.push_back(g);
    fixes.push_back(ReceiverState::from(geodetic_to_ecef(g), 0.0));
  }
  for (double e : horizontal_errors(fixes, truth)) EXPECT_LT(e, 1e-6);
  truth.pop_back();
  EXPECT_THROW(horizontal_errors(fixes, truth), DimensionError);
}

TEST(HorizontalErrors, NorthOffsetAtEquator) {
  const double dlat = 1e-5;
  const GeodeticPosition truth{0.0, 10.0, 0.0};
  const EcefPosition fix = geodetic_to_ecef({dlat, 10.0, 0.0});
  const double e = horizontal_error(fix, truth);
  EXPECT_NEAR(e, 1.1057, 1e-4);
  EXPECT_NEAR(e, meridian_arc(0.5 * dlat, dlat), 1e-6);
}

TEST(HorizontalErrors, HeightOffsetIgnored) {
  const GeodeticPosition truth{37.42, -122.08, 10.0};
  EXPECT_LT(horizontal_error(geodetic_to_ecef({37.42, -122.08, 85.0}), truth), 1e-6);
}

TEST(HorizontalScore, ConstantAndOneToHundred) {
  EXPECT_EQ(horizontal_score(std::vector<double>(17, 5.0)), 5.0);
  std::vector<long> v;
  for (long i = 1; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(horizontal_score(as_double(v)), oracle_score(v));
  EXPECT_EQ(horizontal_score(as_double(v)), 72.775);
  EXPECT_THROW(horizontal_score({}), DataError);
}

TEST(HorizontalScore, MatchesOracleOnRandomIntegerSets) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<long> val(0, 5000);
  std::uniform_int_distribution<int> len(1, 400);
  for (int t = 0; t < 500; ++t) {
    std::vector<long> v(static_cast<std::size_t>(len(rng)));
    for (auto& x : v) x = val(rng);
    ASSERT_EQ(horizontal_score(as_double(v)), oracle_score(v)) << "set size " << v.size();
  }
}

TEST(HorizontalScore, MonotoneUnderPointwiseIncrease) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(50), b(50);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = u(rng);
      b[i] = a[i] + 0.1 * u(rng);
    }
    EXPECT_LE(horizontal_score(a), horizontal_score(b));
  }
}

TEST(Ecdf, SingleValueAndDuplicates) {
  EXPECT_EQ(ecdf({3.5}), (std::vector<EcdfPoint>{{3.5, 1.0}}));
  const auto f = ecdf({2.0, 1.0, 2.0, 2.0, 4.0});
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0], (EcdfPoint{1.0, 0.2}));
  EXPECT_EQ(f[1], (EcdfPoint{2.0, 0.8}));
  EXPECT_EQ(f[2], (EcdfPoint{4.0, 1.0}));
  EXPECT_EQ(ecdf_at(f, 0.5), 0.0);
  EXPECT_EQ(ecdf_at(f, 2.0), 0.8);
  EXPECT_EQ(ecdf_at(f, 3.9), 0.8);
  EXPECT_THROW(ecdf({}), DataError);
}

TEST(Ecdf, DominatedSetLiesAbove) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> big(80), small(80);
  for (std::size_t i = 0; i < big.size(); ++i) {
    big[i] = u(rng);
    small[i] = 0.7 * big[i];
  }
  const auto fb = ecdf(big), fs = ecdf(small);
  for (double v = 0.0; v <= 10.0; v += 0.01) EXPECT_GE(ecdf_at(fs, v), ecdf_at(fb, v));
  for (std::size_t i = 1; i < fb.size(); ++i) EXPECT_GT(fb[i].fraction, fb[i - 1].fraction);
}

TEST(EvalReport, ErrorsCsvReproducesScore) {
  std::mt19937_64 rng(4);
  std::vector<EpochFrame> frames;
  std::vector<ReceiverState> fixes;
  std::normal_distribution<double> n(0.0, 3.0);
  for (int k = 0; k < 60; ++k) {
    EpochFrame f = testing_support::random_frame(rng, 5);
    f.epoch_index = k;
    ReceiverState x = testing_support::truth_state(f);
    x.x += n(rng) + 1.0;
    x.y += n(rng);
    x.clock_offset_m += 2.0;
    frames.push_back(f);
    fixes.push_back(x);
  }
  const EvalReport r = evaluate_fixes("wls", frames, fixes);
  EXPECT_EQ(r.score, horizontal_score(r.horizontal));
  EXPECT_NEAR(r.clock_errors[7], 2.0, 1e-9);
  EXPECT_EQ(r.ecdf_points.back().fraction, 1.0);

  std::stringstream csv;
  write_errors_csv(csv, r);
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,horizontal_m,dx_m,dy_m,dz_m,dclock_m");
  std::vector<double> parsed;
  while (std::getline(csv, line)) {
    const auto comma = line.find(',');
    parsed.push_back(std::stod(line.substr(comma + 1, line.find(',', comma + 1) - comma - 1)));
  }
  EXPECT_EQ(horizontal_score(parsed), r.score);
}

TEST(CorrectionReport, ZeroCorrectionsAndAlignment) {
  std::mt19937_64 rng(5);
  std::vector<EpochFrame> frames;
  std::vector<SolveDiagnostics> diags;
  for (int k = 0; k < 3; ++k) {
    frames.push_back(testing_support::random_frame(rng, 5 + k, testing_support::random_vector(rng, 5 + k, 2.0)));
    frames.back().epoch_index = k;
    diags.push_back(gauss_newton_solve(frames.back(), {}, ReceiverState{}).second);
  }
  const LabelSet noisy = noisy_label_set(frames, diags), smooth = smoothed_labels(frames, diags, 1);
  std::vector<Eigen::VectorXd> zero;
  for (const auto& f : frames) zero.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.size())));
  const auto report = correction_trace_report(frames, zero, noisy, smooth);
  ASSERT_EQ(report.at(1).size(), 3u);
  ASSERT_EQ(report.at(7).size(), 1u);
  EXPECT_EQ(report.at(7)[0].epoch, 2);
  EXPECT_EQ(report.at(7)[0].noisy_label_m, noisy.labels[2][6]);
  EXPECT_EQ(report.at(7)[0].smoothed_label_m, smooth.labels[2][6]);
  for (const auto& [prn, rows] : report)
    for (const auto& r : rows) EXPECT_EQ(r.correction_m, 0.0);
  std::ostringstream out;
  write_corrections_csv(out, report.at(1));
  EXPECT_EQ(out.str().rfind("epoch,prn,correction_m,noisy_label_m,smoothed_label_m\n0,1,0,", 0), 0u);
  zero.pop_back();
  EXPECT_THROW(correction_trace_report(frames, zero, noisy, smooth), DimensionError);
}
