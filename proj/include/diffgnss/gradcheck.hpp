#pragma once

// Self-contained gradient verification: solver gradients against central
// finite differences, backward-mode consistency, network gradients and
// full-chain parameter gradients through the network and the solver.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "diffgnss/dnls.hpp"
#include "diffgnss/simulate.hpp"
#include "diffgnss/train.hpp"

namespace diffgnss {

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int dnls_frames = 100;
  int implicit_frames = 100;
  int net_instances = 20;
  int chain_batches = 4;
  int chain_params = 24;
  double dnls_tolerance = 1e-5;
  double implicit_tolerance = 1e-3;
  double net_tolerance = 1e-5;
  double chain_tolerance = 1e-4;
  bool corrupt_backward = false;  // negative control: perturbs analytic gradients
};

struct GradcheckResult {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int worst_instance = -1;

  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const GradcheckResult& c) { return c.passed(); });
  }
  /// The check furthest beyond (or closest to) its tolerance.
  const GradcheckResult* worst() const {
    const auto ratio = [](const GradcheckResult& c) {
      if (c.tolerance > 0.0) return c.max_rel_error / c.tolerance;
      return c.max_rel_error > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    };
    const GradcheckResult* w = nullptr;
    for (const auto& c : checks)
      if (!w || ratio(c) > ratio(*w)) w = &c;
    return w;
  }
};

namespace detail_gc {

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / denom;
}

inline void record(GradcheckResult& r, int instance, double err) {
  ++r.instances;
  if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
  if (r.worst_instance < 0 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_instance = instance;
  }
}

inline ScenarioSpec gradcheck_scenario(std::uint64_t seed, int satellites, int epochs) {
  ScenarioSpec s;
  s.name = "gradcheck";
  s.seed = seed;
  s.epochs = epochs;
  s.satellites = satellites;
  s.speed_mps = 10.0;
  s.waypoints = {{37.40, -122.10, 0.0}, {37.41, -122.09, 0.0}};
  s.bias_a_min = 0.5;
  s.bias_a_max = 3.0;
  s.bias_b_min = -8.0;
  s.bias_b_max = 8.0;
  s.errors.noise_sigma_m = 2.0;
  return s;
}

struct SolverInstance {
  EpochFrame frame;
  std::vector<double> corrections;
  ReceiverState init;
};

inline SolverInstance solver_instance(std::uint64_t seed, int index) {
  const int m = 5 + index % 8;
  SolverInstance in;
  in.frame = simulate_trace(gradcheck_scenario(seed + static_cast<std::uint64_t>(index), m, 1)).frames.at(0);
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  in.corrections.resize(in.frame.size());
  for (double& c : in.corrections) c = u(rng);
  in.init = gauss_newton_solve(in.frame, {}, ReceiverState{}).first;
  return in;
}

// Central differences of g . X*(corrections) in anchored coordinates.
inline Eigen::VectorXd solver_fd(const SolverInstance& in, const DnlsConfig& cfg, const Eigen::Vector4d& g,
                                 double h = 1e-3) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(in.corrections.size()));
  for (std::size_t n = 0; n < in.corrections.size(); ++n) {
    auto cp = in.corrections, cm = in.corrections;
    cp[n] += h;
    cm[n] -= h;
    const auto tp = dnls::forward(in.frame, cp, in.init, cfg).second;
    const auto tm = dnls::forward(in.frame, cm, in.init, cfg).second;
    out[static_cast<Eigen::Index>(n)] = g.dot(tp.final_offset - tm.final_offset) / (2.0 * h);
  }
  return out;
}

inline Eigen::Vector4d random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return {n(rng), n(rng), n(rng), n(rng)};
}

inline double corrupt(bool on) { return on ? 1.01 : 1.0; }

// Same loss as training, but positions are taken relative to the solver
// anchor so finite differences do not lose digits to ECEF magnitudes.
inline double anchored_batch_loss(const NetParams& net, const Dataset& ds, const std::vector<std::size_t>& idx,
                                  const TrainConfig& cfg) {
  SlotBatch batch(static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) batch.set_frame(static_cast<int>(i), ds.features[idx[i]]);
  const Eigen::MatrixXd y = nn::forward_slots(net, batch).first;
  double sum = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t k = idx[i];
    const FrameFeatures& f = ds.features[k];
    std::vector<double> corr(f.slot.size(), 0.0);
    for (std::size_t n = 0; n < f.slot.size(); ++n)
      if (f.slot[n] >= 0) corr[n] = y(static_cast<Eigen::Index>(i), f.slot[n]);
    const ReceiverState& init = ds.wls[k].solution;
    const auto tape = dnls::forward(ds.frames[k], corr, init, cfg.dnls).second;
    const Eigen::Vector3d dp = (init.position().vec() - ds.frames[k].truth->position.vec()) + tape.final_offset.head<3>();
    double loss = cfg.position_weight * dp.squaredNorm();
    if (cfg.mode == TrainMode::e2e_rcol) {
      const double dc = (init.clock_offset_m - ds.clock_target[k]) + tape.final_offset[3];
      loss += cfg.clock_weight * dc * dc;
    }
    sum += loss;
  }
  return sum / static_cast<double>(idx.size());
}

inline double flat_grad(const NetGradients& g, std::size_t i) {
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    const auto nw = static_cast<std::size_t>(g.w[l].size());
    if (i < nw) return g.w[l].data()[i];
    i -= nw;
    const auto nb = static_cast<std::size_t>(g.b[l].size());
    if (i < nb) return g.b[l].data()[i];
    i -= nb;
  }
  throw DimensionError("flat_grad: index out of range");
}

// Replaces the zero head so every layer receives a gradient.
inline void randomize_head(NetParams& net, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : net.w.back().reshaped()) v = n(rng);
  net.b.back()[0] = n(rng);
  ++net.version;
}

}  // namespace detail_gc

/// Unrolled solver gradients against finite differences over random frames.
inline GradcheckResult check_dnls_unrolling(const GradcheckOptions& o, int iterations, const std::string& name) {
  GradcheckResult r{name, 0, 0.0, o.dnls_tolerance, -1};
  DnlsConfig cfg;
  cfg.iterations = iterations;
  cfg.truncation_depth = std::min(cfg.truncation_depth, iterations);
  std::mt19937_64 rng(o.seed ^ 0xD1B54A32D192ED03ULL ^ static_cast<std::uint64_t>(iterations));
  for (int i = 0; i < o.dnls_frames; ++i) {
    const auto in = detail_gc::solver_instance(o.seed + 17U * static_cast<std::uint64_t>(iterations), i);
    const Eigen::Vector4d g = detail_gc::random_direction(rng);
    const auto tape = dnls::forward(in.frame, in.corrections, in.init, cfg).second;
    const Eigen::VectorXd analytic = detail_gc::corrupt(o.corrupt_backward) * dnls::backward(tape, g);
    detail_gc::record(r, i, detail_gc::rel_err(analytic, detail_gc::solver_fd(in, cfg, g)));
  }
  return r;
}

/// Implicit against unrolled gradients on converged solves.
inline GradcheckResult check_implicit_vs_unrolling(const GradcheckOptions& o) {
  GradcheckResult r{"dnls_implicit_vs_unrolling", 0, 0.0, o.implicit_tolerance, -1};
  DnlsConfig unroll, implicit;
  implicit.backward_mode = BackwardMode::implicit;
  std::mt19937_64 rng(o.seed ^ 0x94D049BB133111EBULL);
  for (int i = 0; i < o.implicit_frames; ++i) {
    const auto in = detail_gc::solver_instance(o.seed + 7919U, i);
    const Eigen::Vector4d g = detail_gc::random_direction(rng);
    const auto a = dnls::solve_with_grad(in.frame, in.corrections, in.init, unroll, g);
    const auto b = dnls::solve_with_grad(in.frame, in.corrections, in.init, implicit, g);
    detail_gc::record(r, i, detail_gc::rel_err(detail_gc::corrupt(o.corrupt_backward) * a.grad_corrections,
                                               b.grad_corrections));
  }
  return r;
}

/// Truncation at the full iteration count must reproduce unrolling bit for bit.
inline GradcheckResult check_truncated_full_depth(const GradcheckOptions& o) {
  GradcheckResult r{"dnls_truncated_full_depth_equals_unrolling", 0, 0.0, 0.0, -1};
  DnlsConfig unroll, trunc;
  trunc.backward_mode = BackwardMode::truncated;
  trunc.truncation_depth = trunc.iterations;
  std::mt19937_64 rng(o.seed ^ 0xBF58476D1CE4E5B9ULL);
  for (int i = 0; i < std::max(1, o.implicit_frames / 4); ++i) {
    const auto in = detail_gc::solver_instance(o.seed + 104729U, i);
    const Eigen::Vector4d g = detail_gc::random_direction(rng);
    const auto a = dnls::solve_with_grad(in.frame, in.corrections, in.init, unroll, g);
    const auto b = dnls::solve_with_grad(in.frame, in.corrections, in.init, trunc, g);
    const Eigen::VectorXd ga = detail_gc::corrupt(o.corrupt_backward) * a.grad_corrections;
    detail_gc::record(r, i, ga == b.grad_corrections ? 0.0 : detail_gc::rel_err(ga, b.grad_corrections));
  }
  return r;
}

/// Network parameter gradients of c . y(x) against finite differences.
inline GradcheckResult check_network(const GradcheckOptions& o) {
  GradcheckResult r{"neuralnet_parameters", 0, 0.0, o.net_tolerance, -1};
  std::mt19937_64 rng(o.seed ^ 0x2545F4914F6CDD1DULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < o.net_instances; ++i) {
    NetParams p = NetParams::initialize(MlpShape{kFeatureCount, 1 + i % 4, 4 + 4 * (i % 3), 10.0},
                                        o.seed + static_cast<std::uint64_t>(i));
    detail_gc::randomize_head(p, rng, 0.3);
    Eigen::MatrixXd x(kFeatureCount, 6);
    for (double& v : x.reshaped()) v = u(rng);
    Eigen::RowVectorXd c(6);
    for (double& v : c.reshaped()) v = u(rng);
    auto [y, tape] = nn::forward(p, x);
    const NetGradients g = nn::backward(p, tape, c);
    std::uniform_int_distribution<std::size_t> pick(0, p.parameter_count() - 1);
    Eigen::VectorXd analytic(o.chain_params), numeric(o.chain_params);
    for (int j = 0; j < o.chain_params; ++j) {
      const std::size_t idx = pick(rng);
      const double v = p.flat(idx), h = 1e-6;
      p.flat(idx) = v + h;
      const double lp = c.dot(nn::forward(p, x).first);
      p.flat(idx) = v - h;
      const double lm = c.dot(nn::forward(p, x).first);
      p.flat(idx) = v;
      numeric[j] = (lp - lm) / (2.0 * h);
      analytic[j] = detail_gc::corrupt(o.corrupt_backward) * detail_gc::flat_grad(g, idx);
    }
    detail_gc::record(r, i, detail_gc::rel_err(analytic, numeric));
  }
  return r;
}

/// Parameter gradients of the training loss through features, network and
/// solver, computed by the training code path, against finite differences.
inline GradcheckResult check_full_chain(const GradcheckOptions& o, TrainMode mode) {
  GradcheckResult r{"full_chain_" + to_string(mode), 0, 0.0, o.chain_tolerance, -1};
  const PreparedTrace p = prepare_trace(simulate_trace(detail_gc::gradcheck_scenario(o.seed + 3U, 10, 40)));
  std::vector<std::size_t> all(p.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  const FeatureStats stats = fit_stats({&p}, {all});
  Dataset ds;
  append_subset(ds, p, all, stats);

  TrainConfig cfg;
  cfg.mode = mode;
  std::mt19937_64 rng(o.seed ^ 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(mode));
  for (int b = 0; b < o.chain_batches; ++b) {
    NetParams net = NetParams::initialize(cfg.net, o.seed + 31U * static_cast<std::uint64_t>(b));
    detail_gc::randomize_head(net, rng, 0.05);
    std::vector<std::size_t> order = all;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(8);
    const auto out = detail::run_batch(net, ds, order, 0, order.size(), cfg, 0);
    std::uniform_int_distribution<std::size_t> pick(0, net.parameter_count() - 1);
    Eigen::VectorXd analytic(o.chain_params), numeric(o.chain_params);
    for (int j = 0; j < o.chain_params; ++j) {
      const std::size_t idx = pick(rng);
      const double v = net.flat(idx), h = 1e-6;
      net.flat(idx) = v + h;
      const double lp = detail_gc::anchored_batch_loss(net, ds, order, cfg);
      net.flat(idx) = v - h;
      const double lm = detail_gc::anchored_batch_loss(net, ds, order, cfg);
      net.flat(idx) = v;
      numeric[j] = (lp - lm) / (2.0 * h);
      analytic[j] = detail_gc::corrupt(o.corrupt_backward) * detail_gc::flat_grad(out.grads, idx);
    }
    detail_gc::record(r, b, detail_gc::rel_err(analytic, numeric));
  }
  return r;
}

inline GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  GradcheckReport rep;
  rep.checks.push_back(check_dnls_unrolling(o, DnlsConfig{}.iterations, "dnls_unrolling_vs_fd"));
  rep.checks.push_back(check_dnls_unrolling(o, 3, "dnls_unrolling_vs_fd_unconverged"));
  rep.checks.push_back(check_implicit_vs_unrolling(o));
  rep.checks.push_back(check_truncated_full_depth(o));
  rep.checks.push_back(check_network(o));
  rep.checks.push_back(check_full_chain(o, TrainMode::e2e_rcol));
  rep.checks.push_back(check_full_chain(o, TrainMode::e2e_no_rcol));
  return rep;
}

}  // namespace diffgnss
