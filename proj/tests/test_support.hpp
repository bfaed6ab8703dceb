#pragma once

// Test-only helpers: random geometries built directly from vector algebra
// (independent of the scenario simulator) and finite-difference oracles.

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <vector>

#include "diffgnss/geo.hpp"
#include "diffgnss/gnss_model.hpp"

namespace testing_support {

using diffgnss::EcefPosition;
using diffgnss::EpochFrame;
using diffgnss::GeodeticPosition;
using diffgnss::ReceiverState;
using diffgnss::SatelliteObservation;

inline constexpr double kOrbitRadius = 26'559'000.0;

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Random receiver near the surface and `m` satellites on the orbit sphere,
/// each at least `min_el_deg` above the geocentric horizon. Pseudoranges are
/// range + clock + errors[n].
inline EpochFrame random_frame(std::mt19937_64& rng, int m, const std::vector<double>& errors = {},
                               double min_el_deg = 10.0, ReceiverState* truth_out = nullptr) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d up = random_unit(rng);
  const Eigen::Vector3d rx = up * (6'371'000.0 + 500.0 * u(rng));
  const double clock = 1e4 * (u(rng) - 0.5);

  Eigen::Vector3d east = up.cross(Eigen::Vector3d::UnitZ());
  if (east.norm() < 1e-6) east = up.cross(Eigen::Vector3d::UnitX());
  east.normalize();
  const Eigen::Vector3d north = up.cross(east);

  EpochFrame frame;
  frame.epoch_index = 0;
  for (int n = 0; n < m; ++n) {
    const double el = diffgnss::deg2rad(min_el_deg + (89.0 - min_el_deg) * u(rng));
    const double az = 2.0 * diffgnss::kPi * (n + 0.8 * u(rng)) / m;
    const Eigen::Vector3d los =
        std::cos(el) * (std::sin(az) * east + std::cos(az) * north) + std::sin(el) * up;
    // |rx + t los| = R
    const double b = rx.dot(los);
    const double t = -b + std::sqrt(b * b - rx.squaredNorm() + kOrbitRadius * kOrbitRadius);
    const Eigen::Vector3d sat = rx + t * los;
    SatelliteObservation obs;
    obs.prn = n + 1;
    obs.sat_pos = EcefPosition::from(sat);
    const double err = n < static_cast<int>(errors.size()) ? errors[static_cast<std::size_t>(n)] : 0.0;
    obs.pseudorange_m = (sat - rx).norm() + clock + err;
    obs.cn0_dbhz = 30.0 + 20.0 * std::sin(el);
    obs.pr_uncertainty_m = 0.5 + 4.0 * u(rng);
    obs.elevation_rad = el;
    frame.observations.push_back(obs);
  }
  diffgnss::GroundTruth truth;
  truth.position = EcefPosition::from(rx);
  truth.geodetic = diffgnss::ecef_to_geodetic(truth.position);
  truth.clock_offset_m = clock;
  frame.truth = truth;
  if (truth_out) *truth_out = ReceiverState::from(truth.position, clock);
  return frame;
}

inline ReceiverState truth_state(const EpochFrame& f) {
  return ReceiverState::from(f.truth->position, *f.truth->clock_offset_m);
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / denom;
}

}  // namespace testing_support
