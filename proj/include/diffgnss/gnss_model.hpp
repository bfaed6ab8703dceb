#pragma once

// Pseudorange measurement model: per-satellite observations, epoch frames,
// receiver state, tropospheric delay and the synthetic error model.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffgnss/errors.hpp"
#include "diffgnss/geo.hpp"

namespace diffgnss {

inline constexpr int kMaxPrn = 32;

struct SatelliteObservation {
  int prn = 0;
  EcefPosition sat_pos;
  double pseudorange_m = 0.0;  // corrected pseudorange, receiver clock still included
  double cn0_dbhz = std::nan("");
  double pr_uncertainty_m = 1.0;
  double elevation_rad = std::nan("");

  friend bool operator==(const SatelliteObservation& a, const SatelliteObservation& b) {
    auto same = [](double u, double v) { return u == v || (std::isnan(u) && std::isnan(v)); };
    return a.prn == b.prn && a.sat_pos == b.sat_pos && a.pseudorange_m == b.pseudorange_m &&
           same(a.cn0_dbhz, b.cn0_dbhz) && a.pr_uncertainty_m == b.pr_uncertainty_m &&
           same(a.elevation_rad, b.elevation_rad);
  }
};

struct GroundTruth {
  EcefPosition position;
  GeodeticPosition geodetic;
  std::optional<double> clock_offset_m;  // known only for synthetic traces

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct EpochFrame {
  int epoch_index = 0;
  std::int64_t gps_time_ms = 0;
  std::vector<SatelliteObservation> observations;
  std::optional<GroundTruth> truth;

  std::size_t size() const { return observations.size(); }
  friend bool operator==(const EpochFrame&, const EpochFrame&) = default;
};

/// [x, y, z, clock] in meters; the receiver clock offset is expressed as range.
struct ReceiverState {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double clock_offset_m = 0.0;

  static ReceiverState from(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
  static ReceiverState from(const EcefPosition& p, double clock) { return {p.x, p.y, p.z, clock}; }
  Eigen::Vector4d vec() const { return {x, y, z, clock_offset_m}; }
  EcefPosition position() const { return {x, y, z}; }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(clock_offset_m);
  }

  friend bool operator==(const ReceiverState&, const ReceiverState&) = default;
};

/// Saastamoinen-style mapping used for the tropospheric correction:
/// T = 2.47 / (0.0121 + sin E).
inline double tropospheric_delay(double elevation_rad) {
  if (!(elevation_rad > 0.0) || elevation_rad > kPi / 2.0 + 1e-12) {
    throw DomainError("tropospheric_delay: elevation must lie in (0, pi/2], got " +
                      std::to_string(elevation_rad));
  }
  return 2.47 / (0.0121 + std::sin(elevation_rad));
}

/// Modeled measurement ||x - x_sat|| + clock + correction.
inline double predicted_pseudorange(const ReceiverState& state, const SatelliteObservation& obs,
                                    double correction_m = 0.0) {
  const double range = (state.position().vec() - obs.sat_pos.vec()).norm();
  return range + state.clock_offset_m + correction_m;
}

/// rho - correction - ||x - x_sat|| - clock
inline double corrected_residual(const ReceiverState& state, const SatelliteObservation& obs,
                                 double correction_m = 0.0) {
  return obs.pseudorange_m - predicted_pseudorange(state, obs, correction_m);
}

/// Pseudorange error implied by a known true state: rho - ||x - x_sat|| - clock.
inline Eigen::VectorXd true_pseudorange_errors(const EpochFrame& frame) {
  if (!frame.truth || !frame.truth->clock_offset_m) {
    throw DataError("true_pseudorange_errors: frame has no truth clock offset");
  }
  const ReceiverState truth = ReceiverState::from(frame.truth->position, *frame.truth->clock_offset_m);
  Eigen::VectorXd eps(frame.size());
  for (std::size_t n = 0; n < frame.size(); ++n) eps[n] = corrected_residual(truth, frame.observations[n]);
  return eps;
}

/// Pseudorange correction applied to raw measurements before range-model
/// processing. Shared by the CSV ingestion path and the simulator so that both
/// produce bit-identical values.
inline double corrected_pseudorange(double raw_pr_m, double sat_clk_bias_m, double isrb_m,
                                    double iono_delay_m, double tropo_delay_m) {
  // GSDC convention: satClkBiasM is added to the geometric range, so it is
  // removed by adding it back to the raw pseudorange.
  return raw_pr_m + sat_clk_bias_m - isrb_m - iono_delay_m - tropo_delay_m;
}

/// Multipath-like bias family: mu = a_prn / (0.1 + sin E) + b_prn (45 - C/N0) / 45
/// plus zero-mean Gaussian noise of standard deviation noise_sigma_m.
struct ErrorModelSpec {
  struct Coefficients {
    double a = 0.0;
    double b = 0.0;
  };
  std::map<int, Coefficients> per_prn;
  double noise_sigma_m = 0.0;

  double bias(int prn, double elevation_rad, double cn0_dbhz) const {
    const auto it = per_prn.find(prn);
    if (it == per_prn.end()) return 0.0;
    return it->second.a / (0.1 + std::sin(elevation_rad)) + it->second.b * (45.0 - cn0_dbhz) / 45.0;
  }
  bool zero() const {
    if (noise_sigma_m != 0.0) return false;
    for (const auto& [prn, c] : per_prn)
      if (c.a != 0.0 || c.b != 0.0) return false;
    return true;
  }
};

}  // namespace diffgnss
