#pragma once

// Supervised targets: noisy labels, smoothed labels and WLS clock targets.

#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "diffgnss/errors.hpp"
#include "diffgnss/gnss_model.hpp"
#include "diffgnss/wls.hpp"

namespace diffgnss {

enum class LabelKind { smoothed, noisy };

inline std::string to_string(LabelKind k) { return k == LabelKind::smoothed ? "smoothed" : "noisy"; }

/// Per-frame target corrections aligned with each frame's observations.
struct LabelSet {
  LabelKind kind = LabelKind::noisy;
  int half_window = 0;  // smoother half-width; 0 for noisy labels
  std::vector<Eigen::VectorXd> labels;
  std::vector<double> clock_targets;

  std::size_t size() const { return labels.size(); }
};

/// WLS clock estimate used as the clock training target.
inline double clock_target(const SolveDiagnostics& diag) {
  if (!diag.converged) {
    throw NumericalError("clock_target: WLS solve did not converge after " + std::to_string(diag.iterations) +
                         " iterations");
  }
  return diag.solution.clock_offset_m;
}

namespace detail {

inline const GroundTruth& require_truth(const EpochFrame& frame, const char* what) {
  if (!frame.truth) throw DataError(std::string(what) + ": epoch " + std::to_string(frame.epoch_index) + " has no truth");
  return *frame.truth;
}

inline void require_aligned(std::size_t frames, std::size_t diags, const char* what) {
  if (frames != diags) {
    throw DimensionError(std::string(what) + ": " + std::to_string(frames) + " frames but " + std::to_string(diags) +
                         " solves");
  }
}

}  // namespace detail

/// rho_n - |x_true - x_n| - dt_hat, which equals eps_n - h_t^T eps to first order.
inline Eigen::VectorXd noisy_labels(const EpochFrame& frame, const SolveDiagnostics& diag) {
  const GroundTruth& truth = detail::require_truth(frame, "noisy_labels");
  const ReceiverState ref = ReceiverState::from(truth.position, clock_target(diag));
  Eigen::VectorXd out(static_cast<Eigen::Index>(frame.size()));
  for (std::size_t n = 0; n < frame.size(); ++n) out[static_cast<Eigen::Index>(n)] = corrected_residual(ref, frame.observations[n]);
  return out;
}

inline LabelSet noisy_label_set(const std::vector<EpochFrame>& frames, const std::vector<SolveDiagnostics>& diags) {
  detail::require_aligned(frames.size(), diags.size(), "noisy_label_set");
  LabelSet set;
  set.kind = LabelKind::noisy;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    set.labels.push_back(noisy_labels(frames[k], diags[k]));
    set.clock_targets.push_back(clock_target(diags[k]));
  }
  return set;
}

/// Centered moving average with half-width w; the window shrinks
/// symmetrically near the ends so the filter stays zero-phase.
inline std::vector<Eigen::Vector3d> smooth_positions(const std::vector<Eigen::Vector3d>& xs, int half_window) {
  if (half_window < 0) throw ConfigError("labels.smoothing_half_window must be >= 0");
  const auto n = static_cast<int>(xs.size());
  std::vector<Eigen::Vector3d> out(xs.size());
  for (int k = 0; k < n; ++k) {
    const int w = std::min({half_window, k, n - 1 - k});
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (int j = k - w; j <= k + w; ++j) sum += xs[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(k)] = sum / (2.0 * w + 1.0);
  }
  return out;
}

/// |x_bar - x_n| - |x_true - x_n|. x_bar is the truth plus the smoothed WLS
/// error track, which equals the smoothed WLS track wherever the receiver
/// moves linearly across the window and does not cut corners where it turns.
inline LabelSet smoothed_labels(const std::vector<EpochFrame>& frames, const std::vector<SolveDiagnostics>& diags,
                                int half_window = 10) {
  detail::require_aligned(frames.size(), diags.size(), "smoothed_labels");
  std::vector<Eigen::Vector3d> truth, fix_errors;
  truth.reserve(frames.size());
  fix_errors.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    truth.push_back(detail::require_truth(frames[k], "smoothed_labels").position.vec());
    fix_errors.push_back(diags[k].solution.position().vec() - truth.back());
  }
  const std::vector<Eigen::Vector3d> smooth = smooth_positions(fix_errors, half_window);

  LabelSet set;
  set.kind = LabelKind::smoothed;
  set.half_window = half_window;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Eigen::Vector3d& x = truth[k];
    const Eigen::Vector3d xbar = x + smooth[k];
    Eigen::VectorXd l(static_cast<Eigen::Index>(frames[k].size()));
    for (std::size_t n = 0; n < frames[k].size(); ++n) {
      const Eigen::Vector3d s = frames[k].observations[n].sat_pos.vec();
      l[static_cast<Eigen::Index>(n)] = (xbar - s).norm() - (x - s).norm();
    }
    set.labels.push_back(std::move(l));
    set.clock_targets.push_back(clock_target(diags[k]));
  }
  return set;
}

/// CSV with columns epoch,prn,label_m,kind.
inline void write_labels_csv(std::ostream& out, const LabelSet& set, const std::vector<EpochFrame>& frames) {
  detail::require_aligned(frames.size(), set.size(), "write_labels_csv");
  out << "epoch,prn,label_m,kind\n";
  const std::string kind = to_string(set.kind);
  char buf[64];
  for (std::size_t k = 0; k < frames.size(); ++k) {
    for (std::size_t n = 0; n < frames[k].size(); ++n) {
      std::snprintf(buf, sizeof buf, "%.17g", set.labels[k][static_cast<Eigen::Index>(n)]);
      out << frames[k].epoch_index << ',' << frames[k].observations[n].prn << ',' << buf << ',' << kind << '\n';
    }
  }
}

}  // namespace diffgnss
