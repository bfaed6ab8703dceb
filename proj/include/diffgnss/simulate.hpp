#pragma once

// Synthetic scenario generator: a receiver driving a closed waypoint loop under
// satellites on circular orbits, with elevation/C-N0 dependent biases. Output
// goes through the same CSV schema and epoch assembly as real data.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "diffgnss/config.hpp"
#include "diffgnss/data.hpp"
#include "diffgnss/errors.hpp"
#include "diffgnss/geo.hpp"
#include "diffgnss/gnss_model.hpp"

namespace diffgnss {

struct ScenarioSpec {
  std::string name = "synthetic";
  std::uint64_t seed = 1;
  int epochs = 100;
  std::int64_t start_time_ms = 1'273'000'000'000;
  std::int64_t interval_ms = 1000;

  std::vector<GeodeticPosition> waypoints{{37.4219, -122.0841, -30.0}};
  double speed_mps = 0.0;

  int satellites = 10;
  double orbit_radius_m = 26'559'000.0;
  double elevation_mask_deg = 10.0;
  double min_initial_elevation_deg = 20.0;
  double max_initial_elevation_deg = 85.0;

  double clock_offset_m = 0.0;
  double clock_drift_mps = 3.0;

  double cn0_base_dbhz = 30.0;
  double cn0_slope_dbhz = 20.0;
  double cn0_noise_dbhz = 0.0;
  double uncertainty_base_m = 1.0;  // reported sigma at 45 dB-Hz
  double sat_clock_bias_range_m = 3e4;

  ErrorModelSpec errors;
  // Coefficient ranges used for PRNs without an explicit entry in errors.
  double bias_a_min = 0.0, bias_a_max = 0.0;
  double bias_b_min = 0.0, bias_b_max = 0.0;

  AssemblyOptions assembly;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw ConfigError("scenario." + field + ": " + why);
    };
    if (epochs < 1) fail("epochs", "must be >= 1");
    if (interval_ms < 1) fail("interval_ms", "must be >= 1");
    if (waypoints.empty()) fail("waypoints", "at least one waypoint required");
    for (const auto& w : waypoints) {
      if (!(std::abs(w.latitude_deg) <= 90.0) || !(std::abs(w.longitude_deg) <= 180.0) || !std::isfinite(w.height_m))
        fail("waypoints", "coordinates out of range");
    }
    if (!(speed_mps >= 0.0)) fail("speed_mps", "must be >= 0");
    if (satellites < 4 || satellites > kMaxPrn) fail("satellites", "must lie in [4, 32]");
    if (!(orbit_radius_m > 7e6)) fail("orbit_radius_m", "must exceed 7e6 m");
    if (!(elevation_mask_deg >= 0.0 && elevation_mask_deg < 90.0)) fail("elevation_mask_deg", "must lie in [0, 90)");
    if (!(min_initial_elevation_deg > elevation_mask_deg && min_initial_elevation_deg <= max_initial_elevation_deg &&
          max_initial_elevation_deg < 90.0))
      fail("min_initial_elevation_deg", "need mask < min <= max < 90");
    if (!(uncertainty_base_m > 0.0)) fail("uncertainty_base_m", "must be > 0");
    if (!(errors.noise_sigma_m >= 0.0)) throw ConfigError("errors.noise_sigma_m: must be >= 0");
    if (!(cn0_noise_dbhz >= 0.0)) fail("cn0_noise_dbhz", "must be >= 0");
    if (bias_a_min > bias_a_max) throw ConfigError("errors.a_range: min exceeds max");
    if (bias_b_min > bias_b_max) throw ConfigError("errors.b_range: min exceeds max");
  }
};

namespace detail {

inline std::pair<double, double> parse_range(const std::string& text, const std::string& key) {
  const auto parts = split(text, ',');
  if (parts.size() != 2) throw ConfigError(key + ": expected 'min, max'");
  return {parse_double(parts[0], key), parse_double(parts[1], key)};
}

}  // namespace detail

/// Reads `scenario.*`, `errors.*` and `data.*` keys.
///   scenario.waypoints = lat,lon,h; lat,lon,h; ...
///   errors.coefficients = prn:a:b, prn:a:b   (explicit per-PRN bias terms)
///   errors.a_range / errors.b_range = min, max   (random per-PRN terms)
inline ScenarioSpec scenario_from_config(const Config& c) {
  ScenarioSpec s;
  s.name = c.get_string("scenario.name", s.name);
  s.seed = static_cast<std::uint64_t>(c.get_int("scenario.seed", static_cast<long long>(s.seed)));
  s.epochs = static_cast<int>(c.get_int("scenario.epochs", s.epochs));
  s.start_time_ms = c.get_int("scenario.start_time_ms", s.start_time_ms);
  s.interval_ms = c.get_int("scenario.interval_ms", s.interval_ms);
  if (c.has("scenario.waypoints")) {
    s.waypoints.clear();
    for (const auto& wp : split(c.require_string("scenario.waypoints"), ';')) {
      if (trim(wp).empty()) continue;
      const auto f = split(wp, ',');
      if (f.size() != 3) throw ConfigError("scenario.waypoints: expected 'lat,lon,height' triples");
      s.waypoints.push_back({parse_double(f[0], "scenario.waypoints"), parse_double(f[1], "scenario.waypoints"),
                             parse_double(f[2], "scenario.waypoints")});
    }
  }
  s.speed_mps = c.get_double("scenario.speed_mps", s.speed_mps);
  s.satellites = static_cast<int>(c.get_int("scenario.satellites", s.satellites));
  s.orbit_radius_m = c.get_double("scenario.orbit_radius_m", s.orbit_radius_m);
  s.elevation_mask_deg = c.get_double("scenario.elevation_mask_deg", s.elevation_mask_deg);
  s.min_initial_elevation_deg = c.get_double("scenario.min_initial_elevation_deg", s.min_initial_elevation_deg);
  s.max_initial_elevation_deg = c.get_double("scenario.max_initial_elevation_deg", s.max_initial_elevation_deg);
  s.clock_offset_m = c.get_double("scenario.clock_offset_m", s.clock_offset_m);
  s.clock_drift_mps = c.get_double("scenario.clock_drift_mps", s.clock_drift_mps);
  s.cn0_base_dbhz = c.get_double("scenario.cn0_base_dbhz", s.cn0_base_dbhz);
  s.cn0_slope_dbhz = c.get_double("scenario.cn0_slope_dbhz", s.cn0_slope_dbhz);
  s.cn0_noise_dbhz = c.get_double("scenario.cn0_noise_dbhz", s.cn0_noise_dbhz);
  s.uncertainty_base_m = c.get_double("scenario.uncertainty_base_m", s.uncertainty_base_m);
  s.sat_clock_bias_range_m = c.get_double("scenario.sat_clock_bias_range_m", s.sat_clock_bias_range_m);

  s.errors.noise_sigma_m = c.get_double("errors.noise_sigma_m", 0.0);
  if (c.has("errors.a_range")) std::tie(s.bias_a_min, s.bias_a_max) = detail::parse_range(c.require_string("errors.a_range"), "errors.a_range");
  if (c.has("errors.b_range")) std::tie(s.bias_b_min, s.bias_b_max) = detail::parse_range(c.require_string("errors.b_range"), "errors.b_range");
  if (c.has("errors.coefficients")) {
    for (const auto& item : split(c.require_string("errors.coefficients"), ',')) {
      if (trim(item).empty()) continue;
      const auto f = split(item, ':');
      if (f.size() != 3) throw ConfigError("errors.coefficients: expected 'prn:a:b' entries");
      const int prn = static_cast<int>(parse_int(f[0], "errors.coefficients"));
      if (prn < 1 || prn > kMaxPrn) throw ConfigError("errors.coefficients: PRN out of range");
      s.errors.per_prn[prn] = {parse_double(f[1], "errors.coefficients"), parse_double(f[2], "errors.coefficients")};
    }
  }

  s.assembly = assembly_options_from(c, s.elevation_mask_deg);
  s.validate();
  return s;
}

struct SimulatedSatellite {
  int prn = 0;
  Eigen::Vector3d p0;  // unit position at t = 0 (inertial = ECEF at t = 0)
  Eigen::Vector3d v0;  // unit direction of motion at t = 0
  double sat_clock_bias_m = 0.0;

  EcefPosition position(double t, double radius) const {
    const double w = std::sqrt(wgs84::kGravitationalParameter / (radius * radius * radius));
    const Eigen::Vector3d inertial = radius * (p0 * std::cos(w * t) + v0 * std::sin(w * t));
    const double th = wgs84::kEarthRotationRate * t;
    return {std::cos(th) * inertial.x() + std::sin(th) * inertial.y(),
            -std::sin(th) * inertial.x() + std::cos(th) * inertial.y(), inertial.z()};
  }
};

struct SimulatedRun {
  ScenarioSpec spec;  // with the per-PRN coefficients actually used
  std::vector<SimulatedSatellite> constellation;
  std::vector<RawDerivedRow> rows;
  std::vector<GroundTruthRow> truth;
  Trace trace;
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

enum StreamTag : std::uint64_t { kConstellation = 1, kBias = 2, kMeasurement = 3 };

/// Receiver position after traveling `distance` along the closed polyline.
inline GeodeticPosition route_position(const std::vector<EcefPosition>& nodes, const std::vector<double>& lengths,
                                       double loop_length, double distance) {
  if (nodes.size() == 1 || loop_length <= 0.0) return ecef_to_geodetic(nodes.front());
  double s = std::fmod(distance, loop_length);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (s <= lengths[i] || i + 1 == nodes.size()) {
      const Eigen::Vector3d a = nodes[i].vec(), b = nodes[(i + 1) % nodes.size()].vec();
      const double u = lengths[i] > 0.0 ? std::min(s / lengths[i], 1.0) : 0.0;
      return ecef_to_geodetic(EcefPosition::from(a + u * (b - a)));
    }
    s -= lengths[i];
  }
  return ecef_to_geodetic(nodes.front());
}

}  // namespace detail

/// Places satellites at sampled azimuth/elevation over the first waypoint at
/// t = 0, each moving along a random great circle.
inline std::vector<SimulatedSatellite> build_constellation(const ScenarioSpec& spec) {
  auto rng = detail::stream(spec.seed, 0, 0, detail::kConstellation);
  std::vector<int> prns(kMaxPrn);
  std::iota(prns.begin(), prns.end(), 1);
  std::shuffle(prns.begin(), prns.end(), rng);
  prns.resize(static_cast<std::size_t>(spec.satellites));
  std::sort(prns.begin(), prns.end());

  const EcefPosition rx = geodetic_to_ecef(spec.waypoints.front());
  const double lat = deg2rad(spec.waypoints.front().latitude_deg), lon = deg2rad(spec.waypoints.front().longitude_deg);
  const Eigen::Vector3d east(-std::sin(lon), std::cos(lon), 0.0);
  const Eigen::Vector3d north(-std::sin(lat) * std::cos(lon), -std::sin(lat) * std::sin(lon), std::cos(lat));
  const Eigen::Vector3d up = rx.vec().normalized();

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SimulatedSatellite> sats;
  for (int k = 0; k < spec.satellites; ++k) {
    const double az = 2.0 * kPi * (k + 0.8 * unit(rng)) / spec.satellites;
    const double el = deg2rad(spec.min_initial_elevation_deg +
                              (spec.max_initial_elevation_deg - spec.min_initial_elevation_deg) * unit(rng));
    const double psi = 2.0 * kPi * unit(rng);
    const double clk = spec.sat_clock_bias_range_m * (2.0 * unit(rng) - 1.0);
    const Eigen::Vector3d horiz = std::cos(az) * north + std::sin(az) * east;
    const Eigen::Vector3d u = (std::cos(el) * (horiz - horiz.dot(up) * up).normalized() + std::sin(el) * up).normalized();
    const Eigen::Vector3d r0 = rx.vec();
    const double ru = r0.dot(u);
    const double s = -ru + std::sqrt(ru * ru - r0.squaredNorm() + spec.orbit_radius_m * spec.orbit_radius_m);
    SimulatedSatellite sat;
    sat.prn = prns[static_cast<std::size_t>(k)];
    sat.p0 = (r0 + s * u).normalized();
    const Eigen::Vector3d e1 = Eigen::Vector3d::UnitZ().cross(sat.p0).normalized();
    const Eigen::Vector3d e2 = sat.p0.cross(e1);
    sat.v0 = std::cos(psi) * e1 + std::sin(psi) * e2;
    sat.sat_clock_bias_m = clk;
    sats.push_back(sat);
  }
  return sats;
}

/// Fills random per-PRN bias coefficients for PRNs without explicit terms.
inline void resolve_bias_coefficients(ScenarioSpec& spec, const std::vector<SimulatedSatellite>& sats) {
  auto rng = detail::stream(spec.seed, 0, 0, detail::kBias);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& sat : sats) {
    const double a = spec.bias_a_min + (spec.bias_a_max - spec.bias_a_min) * unit(rng);
    const double b = spec.bias_b_min + (spec.bias_b_max - spec.bias_b_min) * unit(rng);
    if (!spec.errors.per_prn.count(sat.prn) && (a != 0.0 || b != 0.0)) spec.errors.per_prn[sat.prn] = {a, b};
  }
}

/// Derived-file rows and truth rows. Each measurement draws from its own
/// (seed, epoch, prn) stream, so the result does not depend on satellite order.
inline void generate_measurements(const ScenarioSpec& spec, const std::vector<SimulatedSatellite>& sats,
                                  std::vector<RawDerivedRow>& rows, std::vector<GroundTruthRow>& truth) {
  std::vector<EcefPosition> nodes;
  for (const auto& w : spec.waypoints) nodes.push_back(geodetic_to_ecef(w));
  std::vector<double> lengths;
  double loop = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    lengths.push_back(nodes.size() > 1 ? (nodes[(i + 1) % nodes.size()].vec() - nodes[i].vec()).norm() : 0.0);
    loop += lengths.back();
  }

  const double mask = deg2rad(spec.elevation_mask_deg);
  for (int k = 0; k < spec.epochs; ++k) {
    const double t = static_cast<double>(k) * static_cast<double>(spec.interval_ms) / 1000.0;
    const std::int64_t t_ms = spec.start_time_ms + k * spec.interval_ms;
    GroundTruthRow tr;
    tr.gps_time_ms = t_ms;
    tr.geodetic = detail::route_position(nodes, lengths, loop, spec.speed_mps * t);
    tr.clock_offset_m = spec.clock_offset_m + spec.clock_drift_mps * t;
    const EcefPosition rx = geodetic_to_ecef(tr.geodetic);
    truth.push_back(tr);

    int visible = 0;
    for (const auto& sat : sats) {
      const EcefPosition sp = sat.position(t, spec.orbit_radius_m);
      const double el = elevation_angle(rx, sp);
      if (el < mask || !(el > 0.0)) continue;
      ++visible;
      auto rng = detail::stream(spec.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(sat.prn),
                                detail::kMeasurement);
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double cn0 = spec.cn0_base_dbhz + spec.cn0_slope_dbhz * std::sin(el) + spec.cn0_noise_dbhz * gauss(rng);
      const double noise = spec.errors.noise_sigma_m * gauss(rng);
      const double bias = spec.errors.bias(sat.prn, el, cn0);
      const double tropo = tropospheric_delay(el);
      const double range = (sp.vec() - rx.vec()).norm();

      RawDerivedRow r;
      r.gps_time_ms = t_ms;
      r.svid = sat.prn;
      r.sat_pos = sp;
      r.sat_clk_bias_m = sat.sat_clock_bias_m;
      r.tropo_delay_m = tropo;
      r.raw_pr_m = range + *tr.clock_offset_m + bias + noise + tropo - sat.sat_clock_bias_m;
      r.raw_pr_unc_m = spec.uncertainty_base_m * std::pow(10.0, (45.0 - cn0) / 20.0);
      r.cn0_dbhz = cn0;
      rows.push_back(r);
    }
    if (visible < 4) {
      throw DataError("scenario '" + spec.name + "': epoch " + std::to_string(k) + " has only " +
                      std::to_string(visible) + " satellites above the mask");
    }
  }
}

/// Generates the scenario and assembles it exactly as file ingestion would.
inline SimulatedRun simulate_run(ScenarioSpec spec) {
  spec.validate();
  SimulatedRun run;
  run.constellation = build_constellation(spec);
  resolve_bias_coefficients(spec, run.constellation);
  generate_measurements(spec, run.constellation, run.rows, run.truth);
  run.trace = assemble_epochs(run.rows, run.truth, spec.assembly);
  run.trace.name = spec.name;
  run.spec = std::move(spec);
  return run;
}

inline Trace simulate_trace(const ScenarioSpec& spec) { return simulate_run(spec).trace; }

}  // namespace diffgnss
