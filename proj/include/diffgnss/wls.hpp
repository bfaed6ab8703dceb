#pragma once

// Weighted Gauss-Newton point positioning and the gain-matrix algebra that
// relates pseudorange errors to state errors.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "diffgnss/errors.hpp"
#include "diffgnss/gnss_model.hpp"

namespace diffgnss {

// Fixed-capacity storage: at most 32 GPS satellites per epoch.
using ObsVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxPrn, 1>;
using ObsJacobian = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::ColMajor, kMaxPrn, 4>;
using ObsPositions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::ColMajor, kMaxPrn, 3>;

struct SolverConfig {
  int max_iter = 20;
  double tol = 1e-8;  // on ||delta state||, meters
  double step_size = 1.0;
  bool weighted = true;
  double sigma_min_m = 0.1;
  double sigma_max_m = 1000.0;
};

struct SolveDiagnostics {
  int iterations = 0;
  bool converged = false;
  double residual_norm = 0.0;
  bool weighted = true;
  ReceiverState solution;
  Eigen::MatrixXd jacobian;  // M x 4, d residual / d state
  Eigen::MatrixXd gain;      // 4 x M, H = (J^T W J)^-1 J^T W

  /// d(estimate)/d(pseudorange error) = -H. Row 3 is the clock sensitivity
  /// h_t, with h_t^T 1 = 1.
  Eigen::MatrixXd sensitivity() const { return -gain; }
  Eigen::VectorXd clock_sensitivity() const { return -gain.row(3).transpose(); }
};

/// Diagonal weights 1/sigma^2 with sigma clamped to [sigma_min, sigma_max], or
/// all ones when unweighted.
inline ObsVector observation_weights(const EpochFrame& frame, bool weighted, double sigma_min_m = 0.1,
                                     double sigma_max_m = 1000.0) {
  ObsVector w(static_cast<Eigen::Index>(frame.size()));
  for (std::size_t n = 0; n < frame.size(); ++n) {
    if (!weighted) {
      w[n] = 1.0;
      continue;
    }
    const double s_raw = frame.observations[n].pr_uncertainty_m;
    const double s = std::clamp(std::isfinite(s_raw) ? s_raw : sigma_max_m, sigma_min_m, sigma_max_m);
    w[n] = 1.0 / (s * s);
  }
  return w;
}

namespace detail {

/// Residual model linearized around a fixed anchor state. Ranges are evaluated
/// as ||d - offset|| - ||d|| with d = x_sat - anchor, so the iteration works on
/// small-magnitude offsets and the large constant part is rounded only once.
struct AnchoredGeometry {
  Eigen::Vector4d anchor = Eigen::Vector4d::Zero();
  ObsPositions sat_minus_anchor;  // M x 3
  ObsVector anchor_range;         // ||d_n||
  ObsVector base_residual;        // rho_n - ||d_n|| - anchor clock

  AnchoredGeometry() = default;
  AnchoredGeometry(const EpochFrame& frame, const ReceiverState& anchor_state) {
    const auto m = static_cast<Eigen::Index>(frame.size());
    if (m > kMaxPrn) throw DimensionError("more than 32 observations in one epoch");
    anchor = anchor_state.vec();
    sat_minus_anchor.resize(m, 3);
    anchor_range.resize(m);
    base_residual.resize(m);
    for (Eigen::Index n = 0; n < m; ++n) {
      const auto& obs = frame.observations[static_cast<std::size_t>(n)];
      const Eigen::Vector3d d = obs.sat_pos.vec() - anchor.head<3>();
      sat_minus_anchor.row(n) = d.transpose();
      anchor_range[n] = d.norm();
      base_residual[n] = (obs.pseudorange_m - anchor_range[n]) - anchor[3];
    }
  }

  Eigen::Index size() const { return sat_minus_anchor.rows(); }

  /// Residuals r_n = rho_n - corr_n - ||x - x_sat_n|| - clock and Jacobian
  /// dr/dX at anchor + offset.
  void evaluate(const Eigen::Vector4d& offset, const ObsVector& corrections, ObsVector& r,
                ObsJacobian& jac) const {
    const Eigen::Index m = size();
    r.resize(m);
    jac.resize(m, 4);
    const Eigen::Vector3d dp = offset.head<3>();
    const double dp2 = dp.squaredNorm();
    for (Eigen::Index n = 0; n < m; ++n) {
      const Eigen::Vector3d d = sat_minus_anchor.row(n).transpose();
      const Eigen::Vector3d v = d - dp;  // receiver -> satellite
      const double range = v.norm();
      if (!(range > 0.0)) throw NumericalError("receiver coincides with a satellite");
      const double range_change = (dp2 - 2.0 * d.dot(dp)) / (range + anchor_range[n]);
      r[n] = base_residual[n] - corrections[n] - range_change - offset[3];
      jac.row(n).head<3>() = (v / range).transpose();
      jac(n, 3) = -1.0;
    }
  }
};

struct NormalFactorization {
  Eigen::Matrix4d lower = Eigen::Matrix4d::Zero();  // Cholesky factor of A + damping I
  double damping = 0.0;

  Eigen::Vector4d solve(const Eigen::Vector4d& b) const {
    const Eigen::Vector4d y = lower.triangularView<Eigen::Lower>().solve(b);
    return lower.transpose().triangularView<Eigen::Upper>().solve(y);
  }
};

inline constexpr double kMaxCondition = 1e12;

/// Cholesky of J^T W J. On failure a Levenberg damping of 1e-6 trace/4 is added
/// once; matrices whose condition exceeds 1e12 are rejected.
inline NormalFactorization factorize_normal(const Eigen::Matrix4d& a) {
  NormalFactorization f;
  Eigen::LLT<Eigen::Matrix4d> llt(a);
  if (llt.info() == Eigen::Success) {
    const Eigen::Vector4d diag = Eigen::Matrix4d(llt.matrixL()).diagonal();
    const double ratio = diag.maxCoeff() / diag.minCoeff();
    // (max L_ii / min L_ii)^2 is a lower bound on cond(A).
    if (!(diag.minCoeff() > 0.0) || ratio * ratio > kMaxCondition) {
      throw GeometryError("rank-deficient satellite geometry (condition > 1e12)");
    }
    f.lower = llt.matrixL();
    return f;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(a, Eigen::EigenvaluesOnly);
  const Eigen::Vector4d ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 0.0) || ev.maxCoeff() / ev.minCoeff() > kMaxCondition) {
    throw GeometryError("rank-deficient satellite geometry (condition > 1e12)");
  }
  f.damping = 1e-6 * a.trace() / 4.0;
  Eigen::LLT<Eigen::Matrix4d> damped(a + f.damping * Eigen::Matrix4d::Identity());
  if (damped.info() != Eigen::Success) {
    throw GeometryError("Cholesky factorization failed after damping");
  }
  f.lower = damped.matrixL();
  return f;
}

inline ObsVector as_obs_vector(std::span<const double> values, std::size_t m, const char* what) {
  ObsVector v(static_cast<Eigen::Index>(m));
  if (values.empty()) {
    v.setZero();
    return v;
  }
  if (values.size() != m) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(m) + " values, got " +
                         std::to_string(values.size()));
  }
  for (std::size_t n = 0; n < m; ++n) {
    if (!std::isfinite(values[n])) throw NumericalError(std::string(what) + ": non-finite value");
    v[static_cast<Eigen::Index>(n)] = values[n];
  }
  return v;
}

inline void require_solvable(const EpochFrame& frame) {
  if (frame.size() < 4) {
    throw GeometryError("epoch " + std::to_string(frame.epoch_index) + " has " +
                        std::to_string(frame.size()) + " satellites, need at least 4");
  }
}

}  // namespace detail

/// dr/dX evaluated at `state`; row n is [(x_sat - x)/||x_sat - x||, -1].
inline Eigen::MatrixXd jacobian(const EpochFrame& frame, const ReceiverState& state) {
  detail::require_solvable(frame);
  detail::AnchoredGeometry geom(frame, state);
  ObsVector r;
  ObsJacobian jac;
  geom.evaluate(Eigen::Vector4d::Zero(), ObsVector::Zero(geom.size()), r, jac);
  return jac;
}

inline constexpr double kReanchorDistance = 100.0;  // meters

/// Iterates X <- X - alpha (J^T W J)^-1 J^T W r(X) until ||delta|| < tol or
/// max_iter. `corrections` may be empty (all zero).
inline std::pair<ReceiverState, SolveDiagnostics> gauss_newton_solve(
    const EpochFrame& frame, std::span<const double> corrections, const ReceiverState& init,
    const SolverConfig& cfg = {}) {
  detail::require_solvable(frame);
  if (!init.finite()) throw NumericalError("gauss_newton_solve: non-finite initial state");
  const ObsVector corr = detail::as_obs_vector(corrections, frame.size(), "gauss_newton_solve");
  const ObsVector w = observation_weights(frame, cfg.weighted, cfg.sigma_min_m, cfg.sigma_max_m);
  detail::AnchoredGeometry geom(frame, init);

  SolveDiagnostics diag;
  diag.weighted = cfg.weighted;
  Eigen::Vector4d offset = Eigen::Vector4d::Zero();
  ObsVector r;
  ObsJacobian jac;
  for (int it = 0; it < cfg.max_iter; ++it) {
    geom.evaluate(offset, corr, r, jac);
    const Eigen::Matrix4d a = jac.transpose() * w.asDiagonal() * jac;
    const Eigen::Vector4d b = jac.transpose() * w.asDiagonal() * r;
    const detail::NormalFactorization fac = detail::factorize_normal(a);
    const Eigen::Vector4d delta = fac.solve(b);
    if (!delta.allFinite()) {
      throw NumericalError("gauss_newton_solve: non-finite step at iteration " + std::to_string(it));
    }
    offset -= cfg.step_size * delta;
    diag.iterations = it + 1;
    if (delta.norm() < cfg.tol) {
      diag.converged = true;
      break;
    }
    // Large offsets lose range precision; move the anchor to the iterate.
    if (offset.head<3>().norm() > kReanchorDistance) {
      geom = detail::AnchoredGeometry(frame, ReceiverState::from(Eigen::Vector4d(geom.anchor + offset)));
      offset.setZero();
    }
  }

  geom.evaluate(offset, corr, r, jac);
  const Eigen::Matrix4d a = jac.transpose() * w.asDiagonal() * jac;
  const detail::NormalFactorization fac = detail::factorize_normal(a);
  const Eigen::Index m = geom.size();
  Eigen::MatrixXd gain(4, m);
  for (Eigen::Index n = 0; n < m; ++n) {
    gain.col(n) = fac.solve(jac.row(n).transpose() * w[n]);
  }
  diag.jacobian = jac;
  diag.gain = gain;
  diag.residual_norm = r.norm();
  diag.solution = ReceiverState::from(Eigen::Vector4d(geom.anchor + offset));
  return {diag.solution, diag};
}

/// State error (estimate minus truth) caused by pseudorange errors epsilon, to
/// first order: -H epsilon.
inline Eigen::Vector4d predict_estimation_error(const SolveDiagnostics& diag,
                                                const Eigen::VectorXd& epsilon) {
  if (epsilon.size() != diag.gain.cols()) {
    throw DimensionError("predict_estimation_error: epsilon has " + std::to_string(epsilon.size()) +
                         " entries, gain has " + std::to_string(diag.gain.cols()) + " columns");
  }
  return -diag.gain * epsilon;
}

/// WLS over a whole trace. Warm-starts from the previous epoch unless
/// `cold_start`, in which case every epoch starts at the Earth center.
inline std::vector<SolveDiagnostics> solve_trace(const std::vector<EpochFrame>& frames,
                                                 const SolverConfig& cfg = {}, bool cold_start = false) {
  std::vector<SolveDiagnostics> out;
  out.reserve(frames.size());
  ReceiverState init{};
  for (const EpochFrame& frame : frames) {
    auto [state, diag] = gauss_newton_solve(frame, {}, cold_start ? ReceiverState{} : init, cfg);
    init = state;
    out.push_back(std::move(diag));
  }
  return out;
}

}  // namespace diffgnss
