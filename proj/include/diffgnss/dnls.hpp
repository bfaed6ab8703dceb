#pragma once

// Differentiable nonlinear least squares layer: a fixed-length damped
// Gauss-Newton solve whose solution can be differentiated with respect to the
// per-satellite pseudorange corrections.
//
// Forward:  X_{i+1} = X_i - alpha (J_i^T W J_i)^-1 J_i^T W r_c(X_i; eps_hat),
//           r_c,n = rho_n - eps_hat_n - ||x - x_sat_n|| - clock,
// for exactly N iterations (no early exit, so the backward graph is static).
//
// Backward modes:
//   unrolling     reverse-mode through all N steps, including the dependence
//                 of J_i and of the Cholesky solve on X_i;
//   truncated(k)  the same over the last k steps, X_{N-k} held constant;
//   implicit      dX*/d eps_hat = (J^T W J)^-1 J^T W at X*.

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "diffgnss/errors.hpp"
#include "diffgnss/gnss_model.hpp"
#include "diffgnss/wls.hpp"

namespace diffgnss {

enum class BackwardMode { unrolling, truncated, implicit };

inline std::string to_string(BackwardMode m) {
  switch (m) {
    case BackwardMode::unrolling: return "unrolling";
    case BackwardMode::truncated: return "truncated";
    case BackwardMode::implicit: return "implicit";
  }
  return "unknown";
}

inline BackwardMode parse_backward_mode(const std::string& s) {
  if (s == "unrolling" || s == "unroll") return BackwardMode::unrolling;
  if (s == "truncated" || s.rfind("truncated", 0) == 0) return BackwardMode::truncated;
  if (s == "implicit") return BackwardMode::implicit;
  throw ConfigError("unknown backward mode '" + s + "' (expected unrolling, truncated, implicit)");
}

struct DnlsConfig {
  int iterations = 50;
  double step_size = 0.5;
  BackwardMode backward_mode = BackwardMode::unrolling;
  int truncation_depth = 5;
  bool weighted = false;
  double sigma_min_m = 0.1;
  double sigma_max_m = 1000.0;

  void validate() const {
    if (iterations < 1) throw ConfigError("dnls.iterations must be >= 1");
    if (!(step_size > 0.0 && step_size <= 1.0)) throw ConfigError("dnls.step_size must lie in (0, 1]");
    if (backward_mode == BackwardMode::truncated && (truncation_depth < 1 || truncation_depth > iterations)) {
      throw ConfigError("dnls.truncation_depth must lie in [1, iterations]");
    }
  }
};

struct UnrollStep {
  Eigen::Vector4d offset;  // X_i relative to the anchor
  ObsJacobian jacobian;
  ObsVector residual;
  detail::NormalFactorization factor;
  Eigen::Vector4d delta;  // (J^T W J)^-1 J^T W r
};

struct UnrollTape {
  DnlsConfig config;
  detail::AnchoredGeometry geometry;
  ObsVector weights;
  ObsVector corrections;
  std::vector<UnrollStep> steps;
  Eigen::Vector4d final_offset = Eigen::Vector4d::Zero();

  Eigen::Index size() const { return geometry.size(); }
  ReceiverState solution() const {
    return ReceiverState::from(Eigen::Vector4d(geometry.anchor + final_offset));
  }
};

namespace dnls {

/// Runs exactly cfg.iterations damped Gauss-Newton steps from `init` and
/// records every intermediate on the tape.
inline std::pair<ReceiverState, UnrollTape> forward(const EpochFrame& frame,
                                                    std::span<const double> corrections,
                                                    const ReceiverState& init, const DnlsConfig& cfg = {}) {
  cfg.validate();
  detail::require_solvable(frame);
  if (!init.finite()) throw NumericalError("dnls::forward: non-finite initial state");

  UnrollTape tape;
  tape.config = cfg;
  tape.geometry = detail::AnchoredGeometry(frame, init);
  tape.weights = observation_weights(frame, cfg.weighted, cfg.sigma_min_m, cfg.sigma_max_m);
  tape.corrections = detail::as_obs_vector(corrections, frame.size(), "dnls::forward");
  tape.steps.resize(static_cast<std::size_t>(cfg.iterations));

  Eigen::Vector4d offset = Eigen::Vector4d::Zero();
  for (int i = 0; i < cfg.iterations; ++i) {
    UnrollStep& s = tape.steps[static_cast<std::size_t>(i)];
    s.offset = offset;
    tape.geometry.evaluate(offset, tape.corrections, s.residual, s.jacobian);
    const auto wj = (tape.weights.asDiagonal() * s.jacobian).eval();
    const Eigen::Matrix4d a = s.jacobian.transpose() * wj;
    const Eigen::Vector4d b = wj.transpose() * s.residual;
    s.factor = detail::factorize_normal(a);
    s.delta = s.factor.solve(b);
    offset = offset - cfg.step_size * s.delta;
    if (!offset.allFinite()) {
      throw NumericalError("dnls::forward: non-finite iterate at iteration " + std::to_string(i));
    }
  }
  tape.final_offset = offset;
  return {tape.solution(), std::move(tape)};
}

/// Re-applies the recorded steps; reproduces the forward solution exactly.
inline ReceiverState replay(const UnrollTape& tape) {
  Eigen::Vector4d offset = Eigen::Vector4d::Zero();
  for (const UnrollStep& s : tape.steps) offset = offset - tape.config.step_size * s.delta;
  return ReceiverState::from(Eigen::Vector4d(tape.geometry.anchor + offset));
}

namespace detail_bw {

/// Vector-Jacobian product of one step X' = X - alpha Delta(X, eps) given the
/// adjoint of X'. Accumulates into grad_eps and returns the adjoint of X.
inline Eigen::Vector4d step_vjp(const UnrollTape& tape, const UnrollStep& s, const Eigen::Vector4d& g_next,
                                ObsVector& grad_eps) {
  const Eigen::Index m = tape.size();
  const double alpha = tape.config.step_size;
  const ObsVector& w = tape.weights;

  Eigen::Vector4d g_state = g_next;
  const Eigen::Vector4d g_delta = -alpha * g_next;
  // Delta = A_d^-1 b with A_d = A + lambda I symmetric.
  const Eigen::Vector4d g_b = s.factor.solve(g_delta);
  Eigen::Matrix4d g_a = -g_b * s.delta.transpose();
  if (s.factor.damping > 0.0) {
    // lambda = 1e-6 tr(A) / 4
    g_a.diagonal().array() += 1e-6 / 4.0 * g_a.trace();
  }
  const Eigen::Matrix4d g_a_sym = g_a + g_a.transpose();

  // b = J^T W r, A = J^T W J
  ObsVector g_r = w.asDiagonal() * (s.jacobian * g_b);
  ObsJacobian g_j = (w.cwiseProduct(s.residual)) * g_b.transpose();
  g_j.noalias() += w.asDiagonal() * (s.jacobian * g_a_sym);

  // r = base - eps - q(offset) - offset_clock, dr/d offset = J
  grad_eps -= g_r;
  g_state.noalias() += s.jacobian.transpose() * g_r;

  // J_n,pos = v_n / ||v_n|| with v_n = d_n - offset_pos
  const Eigen::Vector3d dp = s.offset.head<3>();
  Eigen::Vector3d g_pos = Eigen::Vector3d::Zero();
  for (Eigen::Index n = 0; n < m; ++n) {
    const Eigen::Vector3d d = tape.geometry.sat_minus_anchor.row(n).transpose();
    const double range = (d - dp).norm();
    const Eigen::Vector3d u = s.jacobian.row(n).head<3>().transpose();
    const Eigen::Vector3d gj = g_j.row(n).head<3>().transpose();
    g_pos -= (gj - u * u.dot(gj)) / range;
  }
  g_state.head<3>() += g_pos;
  return g_state;
}

}  // namespace detail_bw

/// dL/d eps_hat given dL/dX*. Satellite positions and pseudoranges are
/// treated as constants.
inline Eigen::VectorXd backward(const UnrollTape& tape, const Eigen::Vector4d& grad_out) {
  if (tape.steps.size() != static_cast<std::size_t>(tape.config.iterations) || tape.size() == 0) {
    throw DimensionError("dnls::backward: tape does not match its configuration");
  }
  if (!grad_out.allFinite()) throw NumericalError("dnls::backward: non-finite upstream gradient");
  const Eigen::Index m = tape.size();
  ObsVector grad_eps = ObsVector::Zero(m);

  switch (tape.config.backward_mode) {
    case BackwardMode::implicit: {
      ObsVector r;
      ObsJacobian jac;
      tape.geometry.evaluate(tape.final_offset, tape.corrections, r, jac);
      const auto wj = (tape.weights.asDiagonal() * jac).eval();
      const Eigen::Matrix4d a = jac.transpose() * wj;
      const detail::NormalFactorization fac = detail::factorize_normal(a);
      grad_eps = wj * fac.solve(grad_out);
      break;
    }
    case BackwardMode::unrolling:
    case BackwardMode::truncated: {
      const int n_steps = static_cast<int>(tape.steps.size());
      const int depth =
          tape.config.backward_mode == BackwardMode::unrolling ? n_steps : tape.config.truncation_depth;
      Eigen::Vector4d g = grad_out;
      for (int i = n_steps - 1; i >= n_steps - depth; --i) {
        g = detail_bw::step_vjp(tape, tape.steps[static_cast<std::size_t>(i)], g, grad_eps);
      }
      break;
    }
  }
  return grad_eps;
}

inline Eigen::VectorXd backward(const UnrollTape& tape, const Eigen::Vector4d& grad_out,
                                std::size_t expected_size) {
  if (static_cast<std::size_t>(tape.size()) != expected_size) {
    throw DimensionError("dnls::backward: tape has " + std::to_string(tape.size()) +
                         " satellites, caller expected " + std::to_string(expected_size));
  }
  return backward(tape, grad_out);
}

struct SolveWithGrad {
  ReceiverState solution;
  Eigen::VectorXd grad_corrections;
};

inline SolveWithGrad solve_with_grad(const EpochFrame& frame, std::span<const double> corrections,
                                     const ReceiverState& init, const DnlsConfig& cfg,
                                     const Eigen::Vector4d& grad_out) {
  auto [x, tape] = forward(frame, corrections, init, cfg);
  return {x, backward(tape, grad_out)};
}

}  // namespace dnls
}  // namespace diffgnss
