#pragma once

// Metrics and reports: horizontal errors, ECDF, horizontal score, per-axis
// and clock errors, and correction-vs-label traces.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "diffgnss/errors.hpp"
#include "diffgnss/geo.hpp"
#include "diffgnss/gnss_model.hpp"
#include "diffgnss/labels.hpp"

namespace diffgnss {

/// Percentile q in [0, 100] with linear interpolation between order
/// statistics at rank q/100 * (n - 1).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw DomainError("percentile: q must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  // Rank kept as t / 100 so integer inputs interpolate with one rounding.
  const double t = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(t / 100.0));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double num = t - 100.0 * static_cast<double>(lo);
  return (100.0 * values[lo] + num * (values[hi] - values[lo])) / 100.0;
}

/// Mean of the 50th and 95th percentiles.
inline double horizontal_score(const std::vector<double>& errors) {
  if (errors.empty()) throw DataError("horizontal_score: empty error list");
  return 0.5 * (percentile(errors, 50.0) + percentile(errors, 95.0));
}

inline double horizontal_error(const EcefPosition& fix, const GeodeticPosition& truth) {
  return vincenty_distance(ecef_to_geodetic(fix), truth);
}

inline std::vector<double> horizontal_errors(const std::vector<ReceiverState>& fixes,
                                             const std::vector<GeodeticPosition>& truth) {
  if (fixes.size() != truth.size()) {
    throw DimensionError("horizontal_errors: " + std::to_string(fixes.size()) + " fixes but " +
                         std::to_string(truth.size()) + " truth positions");
  }
  std::vector<double> out(fixes.size());
  for (std::size_t k = 0; k < fixes.size(); ++k) out[k] = horizontal_error(fixes[k].position(), truth[k]);
  return out;
}

struct EcdfPoint {
  double value = 0.0;
  double fraction = 0.0;
  friend bool operator==(const EcdfPoint&, const EcdfPoint&) = default;
};

/// Right-continuous step function; equal values collapse into one step.
inline std::vector<EcdfPoint> ecdf(std::vector<double> errors) {
  if (errors.empty()) throw DataError("ecdf: empty error list");
  std::sort(errors.begin(), errors.end());
  std::vector<EcdfPoint> out;
  const double n = static_cast<double>(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (i + 1 < errors.size() && errors[i + 1] == errors[i]) continue;
    out.push_back({errors[i], static_cast<double>(i + 1) / n});
  }
  out.back().fraction = 1.0;
  return out;
}

/// Fraction of errors <= v.
inline double ecdf_at(const std::vector<EcdfPoint>& f, double v) {
  double frac = 0.0;
  for (const auto& p : f) {
    if (p.value > v) break;
    frac = p.fraction;
  }
  return frac;
}

struct EvalReport {
  std::string method;
  std::vector<int> epochs;
  std::vector<double> horizontal;
  std::vector<EcdfPoint> ecdf_points;
  double score = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  std::vector<Eigen::Vector3d> axis_errors;  // ECEF fix minus truth
  std::vector<double> clock_errors;          // NaN where truth has no clock

  Eigen::Vector3d mean_axis_error() const {
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    for (const auto& e : axis_errors) m += e;
    return axis_errors.empty() ? m : Eigen::Vector3d(m / static_cast<double>(axis_errors.size()));
  }
  double mean_horizontal() const {
    double s = 0.0;
    for (double e : horizontal) s += e;
    return horizontal.empty() ? 0.0 : s / static_cast<double>(horizontal.size());
  }
};

/// Scores fixes against the truth attached to `frames`.
inline EvalReport evaluate_fixes(const std::string& method, const std::vector<EpochFrame>& frames,
                                 const std::vector<ReceiverState>& fixes) {
  if (frames.size() != fixes.size()) {
    throw DimensionError("evaluate_fixes: " + std::to_string(frames.size()) + " frames but " +
                         std::to_string(fixes.size()) + " fixes");
  }
  EvalReport r;
  r.method = method;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const GroundTruth& truth = detail::require_truth(frames[k], "evaluate_fixes");
    r.epochs.push_back(frames[k].epoch_index);
    r.horizontal.push_back(horizontal_error(fixes[k].position(), truth.geodetic));
    r.axis_errors.push_back(fixes[k].position().vec() - truth.position.vec());
    r.clock_errors.push_back(truth.clock_offset_m ? fixes[k].clock_offset_m - *truth.clock_offset_m
                                                  : std::nan(""));
  }
  r.ecdf_points = ecdf(r.horizontal);
  r.p50 = percentile(r.horizontal, 50.0);
  r.p95 = percentile(r.horizontal, 95.0);
  r.score = 0.5 * (r.p50 + r.p95);
  return r;
}

namespace detail {

inline std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Columns: epoch,horizontal_m,dx_m,dy_m,dz_m,dclock_m.
inline void write_errors_csv(std::ostream& out, const EvalReport& r) {
  using detail::g17;
  out << "epoch,horizontal_m,dx_m,dy_m,dz_m,dclock_m\n";
  for (std::size_t k = 0; k < r.horizontal.size(); ++k) {
    out << r.epochs[k] << ',' << g17(r.horizontal[k]) << ',' << g17(r.axis_errors[k].x()) << ','
        << g17(r.axis_errors[k].y()) << ',' << g17(r.axis_errors[k].z()) << ',' << g17(r.clock_errors[k]) << '\n';
  }
}

inline void write_ecdf_csv(std::ostream& out, const EvalReport& r) {
  out << "value_m,fraction\n";
  for (const auto& p : r.ecdf_points) out << detail::g17(p.value) << ',' << detail::g17(p.fraction) << '\n';
}

struct CorrectionRow {
  int epoch = 0;
  int prn = 0;
  double correction_m = 0.0;
  double noisy_label_m = 0.0;
  double smoothed_label_m = 0.0;
};

/// Per-PRN series of predicted corrections next to both label kinds, keyed
/// by (epoch, prn) through each frame's observation order.
inline std::map<int, std::vector<CorrectionRow>> correction_trace_report(
    const std::vector<EpochFrame>& frames, const std::vector<Eigen::VectorXd>& corrections,
    const LabelSet& noisy, const LabelSet& smoothed) {
  if (corrections.size() != frames.size() || noisy.size() != frames.size() || smoothed.size() != frames.size()) {
    throw DimensionError("correction_trace_report: inputs are not aligned with frames");
  }
  std::map<int, std::vector<CorrectionRow>> out;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto m = static_cast<Eigen::Index>(frames[k].size());
    if (corrections[k].size() != m || noisy.labels[k].size() != m || smoothed.labels[k].size() != m) {
      throw DimensionError("correction_trace_report: epoch " + std::to_string(frames[k].epoch_index) +
                           " has mismatched satellite count");
    }
    for (Eigen::Index n = 0; n < m; ++n) {
      const int prn = frames[k].observations[static_cast<std::size_t>(n)].prn;
      out[prn].push_back({frames[k].epoch_index, prn, corrections[k][n], noisy.labels[k][n], smoothed.labels[k][n]});
    }
  }
  return out;
}

inline void write_corrections_csv(std::ostream& out, const std::vector<CorrectionRow>& rows) {
  using detail::g17;
  out << "epoch,prn,correction_m,noisy_label_m,smoothed_label_m\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.prn << ',' << g17(r.correction_m) << ',' << g17(r.noisy_label_m) << ','
        << g17(r.smoothed_label_m) << '\n';
  }
}

}  // namespace diffgnss
