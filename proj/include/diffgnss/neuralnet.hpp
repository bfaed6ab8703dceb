#pragma once

// Pseudorange-correction MLP: per-satellite features, a masked slot batch,
// ReLU layers with a scaled linear head, hand-written reverse mode and Adam.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffgnss/errors.hpp"
#include "diffgnss/geo.hpp"
#include "diffgnss/gnss_model.hpp"
#include "diffgnss/log.hpp"

namespace diffgnss {

inline constexpr int kSlots = kMaxPrn;
inline constexpr int kFeatureCount = 1 + 1 + kSlots + 3 + 3 + 2;

// Feature row layout.
namespace feature {
inline constexpr int kCn0 = 0;
inline constexpr int kSinElevation = 1;
inline constexpr int kPrnOneHot = 2;
inline constexpr int kPosition = kPrnOneHot + kSlots;
inline constexpr int kGeometry = kPosition + 3;
inline constexpr int kHeading = kGeometry + 3;
}  // namespace feature

/// Standardization statistics fitted on training frames.
struct FeatureStats {
  double cn0_mean = 0.0;
  double cn0_std = 1.0;
  Eigen::Vector3d pos_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d pos_std = Eigen::Vector3d::Ones();

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

/// `fixes[k]` is the WLS fix of `frames[k]`.
inline FeatureStats fit_feature_stats(const std::vector<const EpochFrame*>& frames,
                                      const std::vector<ReceiverState>& fixes) {
  if (frames.size() != fixes.size() || frames.empty()) {
    throw DimensionError("fit_feature_stats: need one fix per frame and at least one frame");
  }
  FeatureStats s;
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (const EpochFrame* f : frames) {
    for (const auto& o : f->observations) {
      if (!std::isfinite(o.cn0_dbhz)) continue;
      sum += o.cn0_dbhz;
      sum2 += o.cn0_dbhz * o.cn0_dbhz;
      ++count;
    }
  }
  if (count > 0) {
    s.cn0_mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sum2 / static_cast<double>(count) - s.cn0_mean * s.cn0_mean);
    s.cn0_std = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
  }
  Eigen::Vector3d m = Eigen::Vector3d::Zero(), m2 = Eigen::Vector3d::Zero();
  for (const auto& x : fixes) {
    m += x.position().vec();
  }
  m /= static_cast<double>(fixes.size());
  for (const auto& x : fixes) m2 += (x.position().vec() - m).cwiseAbs2();
  s.pos_mean = m;
  for (int i = 0; i < 3; ++i) {
    const double sd = std::sqrt(m2[i] / static_cast<double>(fixes.size()));
    s.pos_std[i] = sd > 1e-6 ? sd : 1.0;
  }
  return s;
}

/// Features of one frame, one column per observation in frame order.
/// `slot[n]` is PRN - 1, or -1 for a PRN outside the slot range.
struct FrameFeatures {
  Eigen::MatrixXd x;
  std::vector<int> slot;
  int imputed_cn0 = 0;
};

inline FrameFeatures build_features(const EpochFrame& frame, const ReceiverState& wls_fix, double heading_rad,
                                    const FeatureStats& stats) {
  FrameFeatures out;
  const auto m = static_cast<Eigen::Index>(frame.size());
  out.x = Eigen::MatrixXd::Zero(kFeatureCount, m);
  out.slot.assign(frame.size(), -1);
  const Eigen::Vector3d pos = (wls_fix.position().vec() - stats.pos_mean).cwiseQuotient(stats.pos_std);
  for (Eigen::Index n = 0; n < m; ++n) {
    const auto& o = frame.observations[static_cast<std::size_t>(n)];
    if (o.prn < 1 || o.prn > kSlots) {
      logger().warn("epoch {}: PRN {} has no slot, left uncorrected", frame.epoch_index, o.prn);
      continue;
    }
    out.slot[static_cast<std::size_t>(n)] = o.prn - 1;
    if (std::isfinite(o.cn0_dbhz)) {
      out.x(feature::kCn0, n) = (o.cn0_dbhz - stats.cn0_mean) / stats.cn0_std;
    } else {
      ++out.imputed_cn0;  // training mean, standardized to 0
    }
    const double el =
        std::isfinite(o.elevation_rad) ? o.elevation_rad : elevation_angle(wls_fix.position(), o.sat_pos);
    out.x(feature::kSinElevation, n) = std::sin(el);
    out.x(feature::kPrnOneHot + o.prn - 1, n) = 1.0;
    out.x.block<3, 1>(feature::kPosition, n) = pos;
    out.x.block<3, 1>(feature::kGeometry, n) = unit_geometry_vector(wls_fix.position(), o.sat_pos);
    out.x(feature::kHeading, n) = std::sin(heading_rad);
    out.x(feature::kHeading + 1, n) = std::cos(heading_rad);
  }
  return out;
}

/// B frames by S = 32 satellite slots. Features of every slot are stored; only
/// unmasked slots are read.
struct SlotBatch {
  int batch = 0;
  Eigen::MatrixXd features;  // F x (B * S), column b * S + s
  std::vector<std::uint8_t> mask;  // B * S

  SlotBatch() = default;
  explicit SlotBatch(int b) : batch(b), features(Eigen::MatrixXd::Zero(kFeatureCount, b * kSlots)), mask(b * kSlots, 0) {}

  bool visible(int b, int s) const { return mask[static_cast<std::size_t>(b * kSlots + s)] != 0; }
  int row_count(int b) const {
    int c = 0;
    for (int s = 0; s < kSlots; ++s) c += visible(b, s);
    return c;
  }

  void set_frame(int b, const FrameFeatures& f) {
    for (std::size_t n = 0; n < f.slot.size(); ++n) {
      const int s = f.slot[n];
      if (s < 0) continue;
      features.col(b * kSlots + s) = f.x.col(static_cast<Eigen::Index>(n));
      mask[static_cast<std::size_t>(b * kSlots + s)] = 1;
    }
  }
};

struct MlpShape {
  int input = kFeatureCount;
  int depth = 20;  // hidden layers
  int width = 40;
  double output_scale = 10.0;  // meters per unit of the linear head

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Layer l maps activations of layer l-1 to layer l; the last layer is the
/// one-output head.
struct NetGradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  bool all_finite() const {
    for (const auto& m : w)
      if (!m.allFinite()) return false;
    for (const auto& v : b)
      if (!v.allFinite()) return false;
    return true;
  }
  double squared_norm() const {
    double s = 0.0;
    for (const auto& m : w) s += m.squaredNorm();
    for (const auto& v : b) s += v.squaredNorm();
    return s;
  }
  NetGradients& operator+=(const NetGradients& o) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] += o.w[l];
      b[l] += o.b[l];
    }
    return *this;
  }
  NetGradients& operator*=(double s) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] *= s;
      b[l] *= s;
    }
    return *this;
  }
};

struct NetParams {
  MlpShape shape;
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  // Adam moments, same shapes as w and b.
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  std::int64_t step = 0;
  std::uint64_t version = 0;  // bumped on every parameter change

  std::size_t layers() const { return w.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w.size(); ++l) n += static_cast<std::size_t>(w[l].size() + b[l].size());
    return n;
  }

  /// Flat view: layer by layer, weights (column-major) then biases.
  double& flat(std::size_t i) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      const auto nw = static_cast<std::size_t>(w[l].size());
      if (i < nw) return w[l].data()[i];
      i -= nw;
      const auto nb = static_cast<std::size_t>(b[l].size());
      if (i < nb) return b[l].data()[i];
      i -= nb;
    }
    throw DimensionError("NetParams::flat: index out of range");
  }

  NetGradients zero_gradients() const {
    NetGradients g;
    for (std::size_t l = 0; l < w.size(); ++l) {
      g.w.push_back(Eigen::MatrixXd::Zero(w[l].rows(), w[l].cols()));
      g.b.push_back(Eigen::VectorXd::Zero(b[l].size()));
    }
    return g;
  }

  bool all_finite() const { return NetGradients{w, b}.all_finite(); }

  void reset_optimizer() {
    const NetGradients z = zero_gradients();
    m_w = v_w = z.w;
    m_b = v_b = z.b;
    step = 0;
  }

  void validate() const {
    if (w.size() != static_cast<std::size_t>(shape.depth + 1) || b.size() != w.size()) {
      throw DimensionError("NetParams: layer count does not match shape");
    }
    Eigen::Index in = shape.input;
    for (std::size_t l = 0; l < w.size(); ++l) {
      const Eigen::Index out = l + 1 == w.size() ? 1 : shape.width;
      if (w[l].rows() != out || w[l].cols() != in || b[l].size() != out) {
        throw DimensionError("NetParams: layer " + std::to_string(l) + " has inconsistent shape");
      }
      in = out;
    }
  }

  /// He-uniform hidden layers, zero biases, zero head: outputs start at 0.
  static NetParams initialize(const MlpShape& shape, std::uint64_t seed) {
    if (shape.depth < 1 || shape.width < 1 || shape.input < 1) throw ConfigError("net: depth and width must be >= 1");
    if (!(shape.output_scale > 0.0)) throw ConfigError("net.output_scale must be > 0");
    NetParams p;
    p.shape = shape;
    std::mt19937_64 rng(seed);
    Eigen::Index in = shape.input;
    for (int l = 0; l < shape.depth; ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(in));
      std::uniform_real_distribution<double> u(-limit, limit);
      Eigen::MatrixXd m(shape.width, in);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
      p.w.push_back(m);
      p.b.push_back(Eigen::VectorXd::Zero(shape.width));
      in = shape.width;
    }
    p.w.push_back(Eigen::MatrixXd::Zero(1, in));
    p.b.push_back(Eigen::VectorXd::Zero(1));
    p.reset_optimizer();
    return p;
  }
};

/// Activations of one forward pass over the visible columns.
struct ForwardTape {
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> activations;  // input, then each hidden layer (post-ReLU)
  std::vector<int> columns;                  // slot-batch column of each visible input, if any
  int batch = 0;
};

namespace nn {

/// Corrections (meters) for the columns of `x` (F x A).
inline std::pair<Eigen::RowVectorXd, ForwardTape> forward(const NetParams& p, const Eigen::MatrixXd& x) {
  if (x.rows() != p.shape.input) {
    throw DimensionError("nn::forward: expected " + std::to_string(p.shape.input) + " features, got " +
                         std::to_string(x.rows()));
  }
  ForwardTape tape;
  tape.version = p.version;
  tape.activations.reserve(p.layers());
  tape.activations.push_back(x);
  for (std::size_t l = 0; l + 1 < p.layers(); ++l) {
    Eigen::MatrixXd z = p.w[l] * tape.activations.back();
    z.colwise() += p.b[l];
    tape.activations.push_back(z.cwiseMax(0.0));
  }
  Eigen::RowVectorXd y = p.w.back() * tape.activations.back();
  y.array() += p.b.back()[0];
  y *= p.shape.output_scale;
  return {y, std::move(tape)};
}

inline NetGradients backward(const NetParams& p, const ForwardTape& tape, const Eigen::RowVectorXd& grad_y) {
  if (tape.version != p.version) throw NumericalError("nn::backward: tape is stale (parameters changed)");
  if (tape.activations.size() != p.layers() || grad_y.size() != tape.activations.front().cols()) {
    throw DimensionError("nn::backward: gradient does not match tape");
  }
  NetGradients g = p.zero_gradients();
  const std::size_t head = p.layers() - 1;
  const Eigen::RowVectorXd gs = p.shape.output_scale * grad_y;
  g.w[head] = gs * tape.activations[head].transpose();
  g.b[head][0] = gs.sum();
  Eigen::MatrixXd delta = p.w[head].transpose() * gs;
  for (std::size_t l = head; l-- > 0;) {
    delta = delta.cwiseProduct((tape.activations[l + 1].array() > 0.0).cast<double>().matrix());
    g.w[l] = delta * tape.activations[l].transpose();
    g.b[l] = delta.rowwise().sum();
    if (l > 0) delta = p.w[l].transpose() * delta;
  }
  return g;
}

/// Slot-level forward: B x S corrections, exactly 0 in masked slots.
inline std::pair<Eigen::MatrixXd, ForwardTape> forward_slots(const NetParams& p, const SlotBatch& batch) {
  std::vector<int> cols;
  for (int c = 0; c < batch.batch * kSlots; ++c)
    if (batch.mask[static_cast<std::size_t>(c)]) cols.push_back(c);
  Eigen::MatrixXd x(batch.features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = batch.features.col(cols[i]);
  auto [y, tape] = forward(p, x);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(batch.batch, kSlots);
  for (std::size_t i = 0; i < cols.size(); ++i) out(cols[i] / kSlots, cols[i] % kSlots) = y[static_cast<Eigen::Index>(i)];
  tape.columns = std::move(cols);
  tape.batch = batch.batch;
  return {out, std::move(tape)};
}

/// Slot-level backward; gradients in masked slots are ignored.
inline NetGradients backward_slots(const NetParams& p, const ForwardTape& tape, const Eigen::MatrixXd& grad_slots) {
  if (grad_slots.rows() != tape.batch || grad_slots.cols() != kSlots) {
    throw DimensionError("nn::backward_slots: slot gradient must be B x 32");
  }
  Eigen::RowVectorXd g(static_cast<Eigen::Index>(tape.columns.size()));
  for (std::size_t i = 0; i < tape.columns.size(); ++i) {
    g[static_cast<Eigen::Index>(i)] = grad_slots(tape.columns[i] / kSlots, tape.columns[i] % kSlots);
  }
  return backward(p, tape, g);
}

}  // namespace nn

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update. Non-finite gradients leave the parameters untouched and
/// return false.
inline bool adam_step(NetParams& p, const NetGradients& g, const AdamConfig& cfg = {}) {
  if (g.w.size() != p.w.size()) throw DimensionError("adam_step: gradient layer count mismatch");
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    if (g.w[l].rows() != p.w[l].rows() || g.w[l].cols() != p.w[l].cols() || g.b[l].size() != p.b[l].size()) {
      throw DimensionError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
    }
  }
  if (!g.all_finite()) {
    logger().warn("adam_step: non-finite gradient, update skipped");
    return false;
  }
  if (p.m_w.size() != p.w.size()) p.reset_optimizer();
  ++p.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    param.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  };
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    update(p.w[l], p.m_w[l], p.v_w[l], g.w[l]);
    update(p.b[l], p.m_b[l], p.v_b[l], g.b[l]);
  }
  ++p.version;
  return true;
}

// Checkpoint JSON schema (format "diffgnss-prnet", version 1):
//   shape: {input, depth, width, output_scale}
//   feature_stats: {cn0_mean, cn0_std, pos_mean[3], pos_std[3]}
//   layers: [{rows, cols, weights (row-major), bias}]
//   adam_step
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_json(const NetParams& p, const FeatureStats& stats) {
  nlohmann::json j;
  j["format"] = "diffgnss-prnet";
  j["version"] = kCheckpointVersion;
  j["shape"] = {{"input", p.shape.input},
                {"depth", p.shape.depth},
                {"width", p.shape.width},
                {"output_scale", p.shape.output_scale}};
  j["feature_stats"] = {{"cn0_mean", stats.cn0_mean},
                        {"cn0_std", stats.cn0_std},
                        {"pos_mean", {stats.pos_mean[0], stats.pos_mean[1], stats.pos_mean[2]}},
                        {"pos_std", {stats.pos_std[0], stats.pos_std[1], stats.pos_std[2]}}};
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < p.layers(); ++l) {
    std::vector<double> wv;
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i)
      for (Eigen::Index k = 0; k < p.w[l].cols(); ++k) wv.push_back(p.w[l](i, k));
    layers.push_back({{"rows", p.w[l].rows()},
                      {"cols", p.w[l].cols()},
                      {"weights", wv},
                      {"bias", std::vector<double>(p.b[l].data(), p.b[l].data() + p.b[l].size())}});
  }
  j["layers"] = layers;
  j["adam_step"] = p.step;
  return j;
}

inline std::pair<NetParams, FeatureStats> checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "diffgnss-prnet") throw DataError("checkpoint: unknown format");
    if (j.at("version") != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
    NetParams p;
    p.shape.input = j.at("shape").at("input");
    p.shape.depth = j.at("shape").at("depth");
    p.shape.width = j.at("shape").at("width");
    p.shape.output_scale = j.at("shape").at("output_scale");
    for (const auto& layer : j.at("layers")) {
      const Eigen::Index rows = layer.at("rows"), cols = layer.at("cols");
      const auto wv = layer.at("weights").get<std::vector<double>>();
      const auto bv = layer.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(wv.size()) != rows * cols || static_cast<Eigen::Index>(bv.size()) != rows) {
        throw DataError("checkpoint: layer size mismatch");
      }
      Eigen::MatrixXd m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = wv[static_cast<std::size_t>(i * cols + k)];
      p.w.push_back(m);
      p.b.push_back(Eigen::Map<const Eigen::VectorXd>(bv.data(), rows));
    }
    p.validate();
    p.reset_optimizer();
    p.step = j.value("adam_step", std::int64_t{0});
    FeatureStats s;
    const auto& fs = j.at("feature_stats");
    s.cn0_mean = fs.at("cn0_mean");
    s.cn0_std = fs.at("cn0_std");
    for (int i = 0; i < 3; ++i) {
      s.pos_mean[i] = fs.at("pos_mean").at(i);
      s.pos_std[i] = fs.at("pos_std").at(i);
    }
    return {p, s};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
}

inline void save_checkpoint(const NetParams& p, const FeatureStats& stats, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << checkpoint_json(p, stats).dump(1) << '\n';
}

inline std::pair<NetParams, FeatureStats> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace diffgnss
