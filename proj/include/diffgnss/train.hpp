#pragma once

// Training: end-to-end loops through the differentiable solver (with or
// without the WLS clock label) and supervised baselines on derived labels.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "diffgnss/config.hpp"
#include "diffgnss/data.hpp"
#include "diffgnss/dnls.hpp"
#include "diffgnss/errors.hpp"
#include "diffgnss/eval.hpp"
#include "diffgnss/labels.hpp"
#include "diffgnss/log.hpp"
#include "diffgnss/neuralnet.hpp"
#include "diffgnss/wls.hpp"

namespace diffgnss {

enum class TrainMode { e2e_rcol, e2e_no_rcol, supervised_smoothed, supervised_noisy };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::e2e_rcol: return "e2e_rcol";
    case TrainMode::e2e_no_rcol: return "e2e_no_rcol";
    case TrainMode::supervised_smoothed: return "supervised_smoothed";
    case TrainMode::supervised_noisy: return "supervised_noisy";
  }
  return "unknown";
}

inline TrainMode parse_train_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::e2e_rcol, TrainMode::e2e_no_rcol, TrainMode::supervised_smoothed,
                      TrainMode::supervised_noisy}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown train mode '" + s +
                    "' (expected e2e_rcol, e2e_no_rcol, supervised_smoothed, supervised_noisy)");
}

inline bool is_e2e(TrainMode m) { return m == TrainMode::e2e_rcol || m == TrainMode::e2e_no_rcol; }

struct TrainConfig {
  TrainMode mode = TrainMode::e2e_rcol;
  AdamConfig adam;
  int epochs = 200;
  int batch_size = 64;
  std::uint64_t seed = 1;
  MlpShape net{kFeatureCount, 4, 32, 10.0};
  DnlsConfig dnls;
  double position_weight = 1.0;
  double clock_weight = 1.0;
  int smoothing_half_window = 10;
  std::string checkpoint_dir;  // empty: no checkpoint files

  void validate() const {
    if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(position_weight >= 0.0) || !(clock_weight >= 0.0)) throw ConfigError("train loss weights must be >= 0");
    if (net.depth < 1 || net.width < 1) throw ConfigError("net.depth and net.width must be >= 1");
    if (smoothing_half_window < 0) throw ConfigError("labels.smoothing_half_window must be >= 0");
    dnls.validate();
  }
};

/// Reads train.*, net.*, dnls.* and labels.* keys.
inline TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.mode = parse_train_mode(c.get_string("train.mode", to_string(t.mode)));
  t.adam.lr = c.get_double("train.lr", t.adam.lr);
  t.adam.beta1 = c.get_double("train.beta1", t.adam.beta1);
  t.adam.beta2 = c.get_double("train.beta2", t.adam.beta2);
  t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(c.get_int("train.batch_size", t.batch_size));
  t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", static_cast<long long>(t.seed)));
  t.position_weight = c.get_double("train.position_weight", t.position_weight);
  t.clock_weight = c.get_double("train.clock_weight", t.clock_weight);
  t.net.depth = static_cast<int>(c.get_int("net.depth", t.net.depth));
  t.net.width = static_cast<int>(c.get_int("net.width", t.net.width));
  t.net.output_scale = c.get_double("net.output_scale", t.net.output_scale);
  t.dnls.iterations = static_cast<int>(c.get_int("dnls.iterations", t.dnls.iterations));
  t.dnls.step_size = c.get_double("dnls.step_size", t.dnls.step_size);
  t.dnls.backward_mode = parse_backward_mode(c.get_string("dnls.backward_mode", to_string(t.dnls.backward_mode)));
  t.dnls.truncation_depth = static_cast<int>(c.get_int("dnls.truncation_depth", t.dnls.truncation_depth));
  t.dnls.weighted = c.get_bool("dnls.weighted", t.dnls.weighted);
  t.smoothing_half_window = static_cast<int>(c.get_int("labels.smoothing_half_window", t.smoothing_half_window));
  t.validate();
  return t;
}

struct LossGrad {
  double loss = 0.0;
  Eigen::Vector4d grad = Eigen::Vector4d::Zero();
};

/// Squared state error. Without a clock target only the position counts and
/// the clock gradient is 0.
inline LossGrad e2e_loss(const ReceiverState& x_star, const EcefPosition& truth, std::optional<double> clock_target,
                         double position_weight = 1.0, double clock_weight = 1.0) {
  LossGrad out;
  const Eigen::Vector3d dp = x_star.position().vec() - truth.vec();
  out.loss = position_weight * dp.squaredNorm();
  out.grad.head<3>() = 2.0 * position_weight * dp;
  if (clock_target) {
    const double dc = x_star.clock_offset_m - *clock_target;
    out.loss += clock_weight * dc * dc;
    out.grad[3] = 2.0 * clock_weight * dc;
  }
  return out;
}

/// A trace with WLS solves and both label kinds, restricted to frames with truth.
struct PreparedTrace {
  std::string name;
  std::vector<EpochFrame> frames;
  std::vector<double> heading;
  std::vector<SolveDiagnostics> wls;
  LabelSet noisy;
  LabelSet smoothed;

  std::size_t size() const { return frames.size(); }
};

/// With `cold_start` every WLS solve starts at the Earth center.
inline PreparedTrace prepare_trace(const Trace& trace, const SolverConfig& solver = {}, int half_window = 10,
                                   bool cold_start = false) {
  PreparedTrace p;
  p.name = trace.name;
  for (std::size_t k = 0; k < trace.frames.size(); ++k) {
    if (!trace.frames[k].truth) continue;
    p.frames.push_back(trace.frames[k]);
    p.heading.push_back(trace.heading_rad[k]);
  }
  if (p.frames.size() < trace.frames.size()) {
    logger().info("{}: {} frames without truth left out of the dataset", trace.name,
                  trace.frames.size() - p.frames.size());
  }
  p.wls = solve_trace(p.frames, solver, cold_start);
  p.noisy = noisy_label_set(p.frames, p.wls);
  p.smoothed = smoothed_labels(p.frames, p.wls, half_window);
  return p;
}

/// Frame subset with network inputs and targets.
struct Dataset {
  std::vector<EpochFrame> frames;
  std::vector<SolveDiagnostics> wls;
  std::vector<FrameFeatures> features;
  std::vector<Eigen::VectorXd> noisy;
  std::vector<Eigen::VectorXd> smoothed;
  std::vector<double> clock_target;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  std::vector<ReceiverState> wls_fixes() const {
    std::vector<ReceiverState> out;
    for (const auto& d : wls) out.push_back(d.solution);
    return out;
  }
};

/// Standardization statistics over `indices` of each trace.
inline FeatureStats fit_stats(const std::vector<const PreparedTrace*>& traces,
                              const std::vector<std::vector<std::size_t>>& indices) {
  std::vector<const EpochFrame*> frames;
  std::vector<ReceiverState> fixes;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    for (std::size_t k : indices[t]) {
      frames.push_back(&traces[t]->frames[k]);
      fixes.push_back(traces[t]->wls[k].solution);
    }
  }
  return fit_feature_stats(frames, fixes);
}

inline void append_subset(Dataset& ds, const PreparedTrace& p, const std::vector<std::size_t>& indices,
                          const FeatureStats& stats) {
  for (std::size_t k : indices) {
    if (k >= p.size()) throw DimensionError("append_subset: frame index out of range");
    ds.frames.push_back(p.frames[k]);
    ds.wls.push_back(p.wls[k]);
    ds.features.push_back(build_features(p.frames[k], p.wls[k].solution, p.heading[k], stats));
    ds.noisy.push_back(p.noisy.labels[k]);
    ds.smoothed.push_back(p.smoothed.labels[k]);
    ds.clock_target.push_back(p.noisy.clock_targets[k]);
  }
}

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};

/// Frame k is a test frame when k % test_every == test_every - 1; every
/// validation_every-th remaining frame is held out for validation.
inline SplitIndices interleaved_split(std::size_t n, int test_every = 5, int validation_every = 10) {
  if (test_every < 2 || validation_every < 2) throw ConfigError("split periods must be >= 2");
  SplitIndices s;
  std::size_t pool = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k % static_cast<std::size_t>(test_every) == static_cast<std::size_t>(test_every - 1)) {
      s.test.push_back(k);
    } else if (pool++ % static_cast<std::size_t>(validation_every) == static_cast<std::size_t>(validation_every - 1)) {
      s.validation.push_back(k);
    } else {
      s.train.push_back(k);
    }
  }
  return s;
}

/// Network corrections per frame, in observation order.
inline std::vector<Eigen::VectorXd> predict_corrections(const NetParams& net, const Dataset& ds,
                                                        int chunk = 256) {
  std::vector<Eigen::VectorXd> out(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(chunk)) {
    const int b = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(chunk), ds.size() - start));
    SlotBatch batch(b);
    for (int i = 0; i < b; ++i) batch.set_frame(i, ds.features[start + static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd y = nn::forward_slots(net, batch).first;
    for (int i = 0; i < b; ++i) {
      const FrameFeatures& f = ds.features[start + static_cast<std::size_t>(i)];
      Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.slot.size()));
      for (std::size_t n = 0; n < f.slot.size(); ++n)
        if (f.slot[n] >= 0) c[static_cast<Eigen::Index>(n)] = y(i, f.slot[n]);
      out[start + static_cast<std::size_t>(i)] = std::move(c);
    }
  }
  return out;
}

/// Differentiable-solver fixes from the WLS fix with the given corrections.
inline std::vector<ReceiverState> corrected_fixes(const Dataset& ds, const std::vector<Eigen::VectorXd>& corrections,
                                                  const DnlsConfig& cfg) {
  if (corrections.size() != ds.size()) throw DimensionError("corrected_fixes: one correction vector per frame");
  std::vector<ReceiverState> out;
  out.reserve(ds.size());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const Eigen::VectorXd& c = corrections[k];
    out.push_back(dnls::forward(ds.frames[k], {c.data(), static_cast<std::size_t>(c.size())}, ds.wls[k].solution, cfg).first);
  }
  return out;
}

/// Weighted WLS fixes from the WLS fix with the given corrections.
inline std::vector<ReceiverState> wls_corrected_fixes(const Dataset& ds, const std::vector<Eigen::VectorXd>& corrections,
                                                      const SolverConfig& cfg = {}) {
  if (corrections.size() != ds.size()) throw DimensionError("wls_corrected_fixes: one correction vector per frame");
  std::vector<ReceiverState> out;
  out.reserve(ds.size());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const Eigen::VectorXd& c = corrections[k];
    out.push_back(gauss_newton_solve(ds.frames[k], {c.data(), static_cast<std::size_t>(c.size())}, ds.wls[k].solution, cfg).first);
  }
  return out;
}

inline EvalReport evaluate_wls(const Dataset& ds) { return evaluate_fixes("wls", ds.frames, ds.wls_fixes()); }

/// End-to-end nets are scored through the differentiable solver they were
/// trained with; supervised nets correct the weighted WLS.
inline EvalReport evaluate_net(const std::string& method, const NetParams& net, const Dataset& ds,
                               const TrainConfig& cfg) {
  const auto corr = predict_corrections(net, ds);
  return evaluate_fixes(method, ds.frames, is_e2e(cfg.mode) ? corrected_fixes(ds, corr, cfg.dnls) : wls_corrected_fixes(ds, corr));
}

/// Correction-vs-label series of a trained network.
inline std::map<int, std::vector<CorrectionRow>> correction_trace_report(const NetParams& net, const Dataset& ds) {
  LabelSet noisy, smoothed;
  noisy.labels = ds.noisy;
  smoothed.kind = LabelKind::smoothed;
  smoothed.labels = ds.smoothed;
  return correction_trace_report(ds.frames, predict_corrections(net, ds), noisy, smoothed);
}

struct TrainHistory {
  std::vector<double> epoch_loss;        // mean per-frame loss over each epoch
  std::vector<double> step_loss;         // mean per-frame loss of each batch
  std::vector<double> validation_score;  // after each epoch; empty without validation frames
  int best_epoch = -1;                   // -1: the initial network
  double best_validation_score = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  NetParams net;   // best by validation score, else the final network
  NetParams last;  // after the final epoch
  FeatureStats stats;
  TrainHistory history;
};

namespace detail {

struct BatchOutcome {
  double loss_sum = 0.0;
  NetGradients grads;
};

inline BatchOutcome run_batch(const NetParams& net, const Dataset& ds, const std::vector<std::size_t>& order,
                              std::size_t begin, std::size_t end, const TrainConfig& cfg, int epoch) {
  const int b = static_cast<int>(end - begin);
  SlotBatch batch(b);
  for (int i = 0; i < b; ++i) batch.set_frame(i, ds.features[order[begin + static_cast<std::size_t>(i)]]);
  const auto [y, tape] = nn::forward_slots(net, batch);
  Eigen::MatrixXd grad_y = Eigen::MatrixXd::Zero(b, kSlots);
  BatchOutcome out;
  const double inv_b = 1.0 / static_cast<double>(b);

  for (int i = 0; i < b; ++i) {
    const std::size_t k = order[begin + static_cast<std::size_t>(i)];
    const EpochFrame& frame = ds.frames[k];
    const FrameFeatures& f = ds.features[k];
    const auto m = static_cast<Eigen::Index>(f.slot.size());
    Eigen::VectorXd corr = Eigen::VectorXd::Zero(m);
    for (Eigen::Index n = 0; n < m; ++n)
      if (f.slot[static_cast<std::size_t>(n)] >= 0) corr[n] = y(i, f.slot[static_cast<std::size_t>(n)]);

    double loss = 0.0;
    Eigen::VectorXd g_corr;
    if (is_e2e(cfg.mode)) {
      auto [x, dtape] =
          dnls::forward(frame, {corr.data(), static_cast<std::size_t>(m)}, ds.wls[k].solution, cfg.dnls);
      const std::optional<double> clock =
          cfg.mode == TrainMode::e2e_rcol ? std::optional<double>(ds.clock_target[k]) : std::nullopt;
      const LossGrad lg = e2e_loss(x, frame.truth->position, clock, cfg.position_weight, cfg.clock_weight);
      loss = lg.loss;
      if (std::isfinite(loss)) g_corr = dnls::backward(dtape, lg.grad);
    } else {
      const Eigen::VectorXd& label = cfg.mode == TrainMode::supervised_noisy ? ds.noisy[k] : ds.smoothed[k];
      if (label.size() != m) {
        throw DimensionError("train: labels of epoch " + std::to_string(frame.epoch_index) +
                             " do not match its satellites");
      }
      const Eigen::VectorXd diff = corr - label;
      loss = diff.squaredNorm() / static_cast<double>(m);
      g_corr = 2.0 * diff / static_cast<double>(m);
    }
    if (!std::isfinite(loss) || !g_corr.allFinite()) {
      throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", frame " +
                           std::to_string(frame.epoch_index));
    }
    out.loss_sum += loss;
    for (Eigen::Index n = 0; n < m; ++n) {
      const int s = f.slot[static_cast<std::size_t>(n)];
      if (s >= 0) grad_y(i, s) += inv_b * g_corr[n];
    }
  }
  out.grads = nn::backward_slots(net, tape, grad_y);
  return out;
}

inline double validation_score(const NetParams& net, const Dataset& val, const TrainConfig& cfg) {
  return evaluate_net("validation", net, val, cfg).score;
}

}  // namespace detail

/// Trains a fresh network on `train`; `validation` selects the best epoch.
/// Every random draw derives from cfg.seed.
inline TrainResult train_network(const Dataset& train, const Dataset& validation, const FeatureStats& stats,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("train: no training frames");
  TrainResult res;
  res.stats = stats;
  NetParams net = NetParams::initialize(cfg.net, cfg.seed);
  NetParams best = net;
  if (!validation.empty()) {
    res.history.best_validation_score = detail::validation_score(net, validation, cfg);
  }
  const bool write = !cfg.checkpoint_dir.empty();
  if (write) std::filesystem::create_directories(cfg.checkpoint_dir);

  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      detail::BatchOutcome bo = detail::run_batch(net, train, order, begin, end, cfg, epoch);
      epoch_sum += bo.loss_sum;
      res.history.step_loss.push_back(bo.loss_sum / static_cast<double>(end - begin));
      if (!adam_step(net, bo.grads, cfg.adam)) {
        logger().warn("train: skipped a step with non-finite gradients at epoch {}", epoch);
      }
    }
    res.history.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));

    if (!validation.empty()) {
      const double score = detail::validation_score(net, validation, cfg);
      res.history.validation_score.push_back(score);
      if (score < res.history.best_validation_score) {
        res.history.best_validation_score = score;
        res.history.best_epoch = epoch;
        best = net;
        if (write) save_checkpoint(best, stats, (std::filesystem::path(cfg.checkpoint_dir) / "checkpoint_best.json").string());
      }
    }
    if (write) save_checkpoint(net, stats, (std::filesystem::path(cfg.checkpoint_dir) / "checkpoint_last.json").string());
    logger().info("epoch {} loss {:.6f}{}", epoch, res.history.epoch_loss.back(),
                  validation.empty() ? std::string()
                                     : fmt::format(" validation score {:.4f}", res.history.validation_score.back()));
  }
  res.last = net;
  res.net = validation.empty() ? net : best;
  return res;
}

/// End-to-end training through the differentiable solver.
inline TrainResult train_e2e(const Dataset& train, const Dataset& validation, const FeatureStats& stats,
                             TrainConfig cfg) {
  if (!is_e2e(cfg.mode)) cfg.mode = TrainMode::e2e_rcol;
  return train_network(train, validation, stats, cfg);
}

/// Regression of corrections against smoothed or noisy labels.
inline TrainResult train_supervised(const Dataset& train, const Dataset& validation, const FeatureStats& stats,
                                    TrainConfig cfg, LabelKind kind) {
  cfg.mode = kind == LabelKind::smoothed ? TrainMode::supervised_smoothed : TrainMode::supervised_noisy;
  return train_network(train, validation, stats, cfg);
}

}  // namespace diffgnss
