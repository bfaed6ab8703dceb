#pragma once

// WGS-84 coordinate conversions and geodesic distances.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "diffgnss/errors.hpp"

namespace diffgnss {

namespace wgs84 {
inline constexpr double kSemiMajorAxis = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kSemiMinorAxis = kSemiMajorAxis * (1.0 - kFlattening);
inline constexpr double kEccentricitySq = kFlattening * (2.0 - kFlattening);
inline constexpr double kEarthRotationRate = 7.2921151467e-5;  // rad/s
inline constexpr double kGravitationalParameter = 3.986005e14;  // m^3/s^2
}  // namespace wgs84

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct EcefPosition {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static EcefPosition from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
  Eigen::Vector3d vec() const { return {x, y, z}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

  friend bool operator==(const EcefPosition&, const EcefPosition&) = default;
};

/// Latitude/longitude in degrees (file boundary convention), height in meters
/// above the ellipsoid.
struct GeodeticPosition {
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;
  double height_m = 0.0;

  friend bool operator==(const GeodeticPosition&, const GeodeticPosition&) = default;
};

inline EcefPosition geodetic_to_ecef(const GeodeticPosition& p) {
  if (!std::isfinite(p.latitude_deg) || std::abs(p.latitude_deg) > 90.0) {
    throw DomainError("geodetic_to_ecef: latitude out of range: " + std::to_string(p.latitude_deg));
  }
  if (!std::isfinite(p.longitude_deg) || std::abs(p.longitude_deg) > 180.0) {
    throw DomainError("geodetic_to_ecef: longitude out of range: " +
                      std::to_string(p.longitude_deg));
  }
  if (!std::isfinite(p.height_m)) throw DomainError("geodetic_to_ecef: non-finite height");

  using namespace wgs84;
  const double lat = deg2rad(p.latitude_deg);
  const double lon = deg2rad(p.longitude_deg);
  const double sin_lat = std::sin(lat);
  const double cos_lat = std::cos(lat);
  const double n = kSemiMajorAxis / std::sqrt(1.0 - kEccentricitySq * sin_lat * sin_lat);
  return {(n + p.height_m) * cos_lat * std::cos(lon), (n + p.height_m) * cos_lat * std::sin(lon),
          (n * (1.0 - kEccentricitySq) + p.height_m) * sin_lat};
}

/// Closed-form inversion (Vermeille 2002). Valid outside the evolute, which the
/// 1e6 m norm precondition guarantees.
inline GeodeticPosition ecef_to_geodetic(const EcefPosition& p) {
  if (!p.finite() || p.norm() <= 1e6) {
    throw DomainError("ecef_to_geodetic: position too close to Earth center");
  }
  using namespace wgs84;
  const double a2 = kSemiMajorAxis * kSemiMajorAxis;
  const double e2 = kEccentricitySq;
  const double e4 = e2 * e2;
  const double rho2 = p.x * p.x + p.y * p.y;
  const double rho = std::sqrt(rho2);

  const double pp = rho2 / a2;
  const double q = (1.0 - e2) * p.z * p.z / a2;
  const double r = (pp + q - e4) / 6.0;
  const double s = e4 * pp * q / (4.0 * r * r * r);
  const double t = std::cbrt(1.0 + s + std::sqrt(s * (2.0 + s)));
  const double u = r * (1.0 + t + 1.0 / t);
  const double v = std::sqrt(u * u + e4 * q);
  const double w = e2 * (u + v - q) / (2.0 * v);
  const double k = std::sqrt(u + v + w * w) - w;
  const double d = k * rho / (k + e2);
  const double dz = std::sqrt(d * d + p.z * p.z);

  const double lat = 2.0 * std::atan2(p.z, d + dz);
  double lon = std::atan2(p.y, p.x);
  if (lon <= -kPi) lon = kPi;
  const double h = (k + e2 - 1.0) / k * dz;
  return {rad2deg(lat), rad2deg(lon), h};
}

/// Line-of-sight from `from` to `to`, normalized. Throws on coincident points.
inline Eigen::Vector3d line_of_sight(const EcefPosition& from, const EcefPosition& to) {
  const Eigen::Vector3d d = to.vec() - from.vec();
  const double n = d.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("line_of_sight: coincident points");
  return d / n;
}

/// Elevation of `satellite` above the plane orthogonal to the geocentric
/// radial direction at `receiver`. Result in [-pi/2, pi/2].
inline double elevation_angle(const EcefPosition& receiver, const EcefPosition& satellite) {
  const double rn = receiver.norm();
  if (!(rn > 1e6)) throw DomainError("elevation_angle: receiver too close to Earth center");
  const Eigen::Vector3d up = receiver.vec() / rn;
  const double sin_el = std::clamp(up.dot(line_of_sight(receiver, satellite)), -1.0, 1.0);
  return std::asin(sin_el);
}

/// Unit vector pointing from the satellite to the receiver.
inline Eigen::Vector3d unit_geometry_vector(const EcefPosition& receiver,
                                            const EcefPosition& satellite) {
  return line_of_sight(satellite, receiver);
}

/// Azimuth (radians, clockwise from north, in [0, 2pi)) of `to` seen from
/// `from`, measured in the geodetic east-north plane at `from`.
inline double azimuth_angle(const EcefPosition& from, const EcefPosition& to) {
  const GeodeticPosition g = ecef_to_geodetic(from);
  const double lat = deg2rad(g.latitude_deg);
  const double lon = deg2rad(g.longitude_deg);
  const Eigen::Vector3d east(-std::sin(lon), std::cos(lon), 0.0);
  const Eigen::Vector3d north(-std::sin(lat) * std::cos(lon), -std::sin(lat) * std::sin(lon),
                              std::cos(lat));
  const Eigen::Vector3d d = to.vec() - from.vec();
  double az = std::atan2(d.dot(east), d.dot(north));
  if (az < 0.0) az += 2.0 * kPi;
  return az;
}

namespace detail {

struct VincentyTerms {
  double lambda_next = 0.0;
  double sin_sigma = 0.0;
  double cos_sigma = 0.0;
  double sigma = 0.0;
  double cos2_alpha = 0.0;
  double cos_2sigma_m = 0.0;
};

inline VincentyTerms vincenty_terms(double lambda, double big_l, double sin_u1, double cos_u1,
                                    double sin_u2, double cos_u2) {
  constexpr double f = wgs84::kFlattening;
  VincentyTerms t;
  const double sin_l = std::sin(lambda);
  const double cos_l = std::cos(lambda);
  const double a = cos_u2 * sin_l;
  const double b = cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_l;
  t.sin_sigma = std::sqrt(a * a + b * b);
  t.cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_l;
  t.sigma = std::atan2(t.sin_sigma, t.cos_sigma);
  const double sin_alpha = t.sin_sigma == 0.0 ? 0.0 : cos_u1 * cos_u2 * sin_l / t.sin_sigma;
  t.cos2_alpha = 1.0 - sin_alpha * sin_alpha;
  t.cos_2sigma_m = t.cos2_alpha != 0.0 ? t.cos_sigma - 2.0 * sin_u1 * sin_u2 / t.cos2_alpha : 0.0;
  const double c = f / 16.0 * t.cos2_alpha * (4.0 + f * (4.0 - 3.0 * t.cos2_alpha));
  t.lambda_next =
      big_l + (1.0 - c) * f * sin_alpha *
                  (t.sigma + c * t.sin_sigma *
                                 (t.cos_2sigma_m +
                                  c * t.cos_sigma * (-1.0 + 2.0 * t.cos_2sigma_m * t.cos_2sigma_m)));
  return t;
}

inline double vincenty_length(const VincentyTerms& t) {
  using namespace wgs84;
  const double a2 = kSemiMajorAxis * kSemiMajorAxis;
  const double b2 = kSemiMinorAxis * kSemiMinorAxis;
  const double u2 = t.cos2_alpha * (a2 - b2) / b2;
  const double big_a = 1.0 + u2 / 16384.0 * (4096.0 + u2 * (-768.0 + u2 * (320.0 - 175.0 * u2)));
  const double big_b = u2 / 1024.0 * (256.0 + u2 * (-128.0 + u2 * (74.0 - 47.0 * u2)));
  const double c2 = t.cos_2sigma_m * t.cos_2sigma_m;
  const double delta_sigma =
      big_b * t.sin_sigma *
      (t.cos_2sigma_m +
       big_b / 4.0 *
           (t.cos_sigma * (-1.0 + 2.0 * c2) - big_b / 6.0 * t.cos_2sigma_m *
                                                  (-3.0 + 4.0 * t.sin_sigma * t.sin_sigma) *
                                                  (-3.0 + 4.0 * c2)));
  return kSemiMinorAxis * big_a * (t.sigma - delta_sigma);
}

}  // namespace detail

/// Inverse geodesic distance on the WGS-84 ellipsoid (Vincenty). Heights are
/// ignored. The fixed-point iteration on lambda is capped at 200 steps; if it
/// stalls (near-antipodal pairs) a bisection on the fixed-point residual is
/// tried before giving up with a NumericalError.
inline double vincenty_distance(const GeodeticPosition& p1, const GeodeticPosition& p2) {
  constexpr double f = wgs84::kFlattening;
  constexpr double kTol = 1e-12;
  constexpr int kMaxIter = 200;
  for (const auto* p : {&p1, &p2}) {
    if (!std::isfinite(p->latitude_deg) || std::abs(p->latitude_deg) > 90.0 ||
        !std::isfinite(p->longitude_deg)) {
      throw DomainError("vincenty_distance: invalid geodetic position");
    }
  }
  const double u1 = std::atan((1.0 - f) * std::tan(deg2rad(p1.latitude_deg)));
  const double u2 = std::atan((1.0 - f) * std::tan(deg2rad(p2.latitude_deg)));
  double big_l = deg2rad(p2.longitude_deg - p1.longitude_deg);
  big_l = std::remainder(big_l, 2.0 * kPi);
  const double su1 = std::sin(u1), cu1 = std::cos(u1);
  const double su2 = std::sin(u2), cu2 = std::cos(u2);

  double lambda = big_l;
  for (int i = 0; i < kMaxIter; ++i) {
    const detail::VincentyTerms t = detail::vincenty_terms(lambda, big_l, su1, cu1, su2, cu2);
    if (t.sin_sigma == 0.0) return 0.0;
    if (std::abs(t.lambda_next - lambda) < kTol) {
      return detail::vincenty_length(detail::vincenty_terms(t.lambda_next, big_l, su1, cu1, su2, cu2));
    }
    lambda = t.lambda_next;
  }

  // Fallback: |lambda - L| <= pi * f, so the fixed point lies in this bracket.
  auto residual = [&](double lam) {
    return detail::vincenty_terms(lam, big_l, su1, cu1, su2, cu2).lambda_next - lam;
  };
  double lo = big_l - 1.01 * kPi * f;
  double hi = big_l + 1.01 * kPi * f;
  double f_lo = residual(lo);
  if (f_lo * residual(hi) > 0.0) {
    throw NumericalError("vincenty_distance: no convergence (near-antipodal points)");
  }
  for (int i = 0; i < 200 && hi - lo > kTol; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = residual(mid);
    if (f_mid * f_lo <= 0.0) {
      hi = mid;
    } else {
      lo = mid;
      f_lo = f_mid;
    }
  }
  if (hi - lo > kTol) {
    throw NumericalError("vincenty_distance: bisection fallback did not converge");
  }
  return detail::vincenty_length(detail::vincenty_terms(0.5 * (lo + hi), big_l, su1, cu1, su2, cu2));
}

}  // namespace diffgnss
