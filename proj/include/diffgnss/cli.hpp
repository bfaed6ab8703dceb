#pragma once

// Command-line workflows: simulate, baseline, train, eval and gradcheck.
// Each command writes into a staging directory that is renamed onto the
// requested output directory only after every file has been written.
//
// Exit codes: 0 success, 1 a check failed, 2 configuration or usage error,
// 3 data or I/O error, 4 numerical failure, 5 unexpected internal error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffgnss/config.hpp"
#include "diffgnss/data.hpp"
#include "diffgnss/errors.hpp"
#include "diffgnss/eval.hpp"
#include "diffgnss/gradcheck.hpp"
#include "diffgnss/log.hpp"
#include "diffgnss/simulate.hpp"
#include "diffgnss/train.hpp"

namespace diffgnss::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigFailure = 2, kDataFailure = 3, kNumericalFailure = 4, kInternal = 5 };

struct RunConfig {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  Config config;
  bool force = false;
  bool corrupt_backward = false;
};

/// Applies flag overrides to the configuration so the snapshot alone
/// reproduces the run. A root seed `run.seed` fixes both the scenario seed and
/// the training seed.
inline void apply_overrides(Config& c, const std::optional<std::uint64_t>& seed, const std::string& mode,
                            const std::string& backward_mode, bool cold_start, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || trim(kv.substr(0, eq)).empty()) {
      throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    }
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (seed) c.set("run.seed", std::to_string(*seed));
  if (!mode.empty()) c.set("train.mode", to_string(parse_train_mode(mode)));
  if (!backward_mode.empty()) c.set("dnls.backward_mode", to_string(parse_backward_mode(backward_mode)));
  if (cold_start) c.set("data.cold_start", "true");
  if (c.has("run.seed")) {
    const long long root = c.get_int("run.seed", 0);
    if (root < 0) throw ConfigError("run.seed must be >= 0");
    c.set("scenario.seed", std::to_string(root));
    c.set("train.seed", std::to_string(root + 1));
  }
}

/// Output directory that appears only once complete.
class StagedDir {
 public:
  StagedDir(const std::string& out, bool force) : final_(out), stage_(out + ".staging") {
    if (out.empty()) throw ConfigError("an output directory is required (--out)");
    if (std::filesystem::exists(final_) && !force) {
      throw ConfigError("output directory already exists: " + final_.string() + " (use --force to replace it)");
    }
    std::filesystem::remove_all(stage_);
    std::filesystem::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      std::filesystem::remove_all(stage_, ec);
    }
  }

  std::filesystem::path path(const std::string& name) const { return stage_ / name; }
  const std::filesystem::path& final_path() const { return final_; }

  std::ofstream open(const std::string& name) const {
    std::ofstream f(path(name));
    if (!f) throw DataError("cannot write " + path(name).string());
    f.precision(17);
    return f;
  }

  void commit() {
    if (std::filesystem::exists(final_)) std::filesystem::remove_all(final_);
    std::filesystem::rename(stage_, final_);
    committed_ = true;
  }

 private:
  std::filesystem::path final_, stage_;
  bool committed_ = false;
};

namespace detail_cli {

inline void write_json(const StagedDir& dir, const std::string& name, const nlohmann::json& j) {
  auto f = dir.open(name);
  f << j.dump(2) << '\n';
  if (!f) throw DataError("failed writing " + dir.path(name).string());
}

inline nlohmann::json report_json(const EvalReport& r) {
  const Eigen::Vector3d m = r.mean_axis_error();
  return {{"epochs", r.horizontal.size()},
          {"score_m", r.score},
          {"p50_m", r.p50},
          {"p95_m", r.p95},
          {"mean_horizontal_m", r.mean_horizontal()},
          {"mean_axis_error_m", {m.x(), m.y(), m.z()}}};
}

inline void write_report_files(const StagedDir& dir, const EvalReport& r, const std::string& suffix) {
  auto e = dir.open("errors" + suffix + ".csv");
  write_errors_csv(e, r);
  auto c = dir.open("ecdf" + suffix + ".csv");
  write_ecdf_csv(c, r);
}

inline SolverConfig solver_config_from(const Config& c) {
  SolverConfig s;
  s.max_iter = static_cast<int>(c.get_int("wls.max_iter", s.max_iter));
  s.tol = c.get_double("wls.tolerance_m", s.tol);
  s.weighted = c.get_bool("wls.weighted", s.weighted);
  if (s.max_iter < 1 || !(s.tol > 0.0)) throw ConfigError("wls.max_iter must be >= 1 and wls.tolerance_m > 0");
  return s;
}

}  // namespace detail_cli

/// Prepared traces split into train, validation and test frames.
struct Experiment {
  std::string source;
  std::vector<PreparedTrace> traces;
  FeatureStats stats;
  Dataset train, validation, test;
};

/// data.source selects `synthetic` (scenario.* keys), `files`
/// (data.derived_csv and data.truth_csv) or `gsdc` (data.root and
/// data.manifest). A single trace is split by interleaving; GSDC traces
/// follow the manifest splits with interleaved validation frames.
inline Experiment load_experiment(const Config& c, const std::optional<FeatureStats>& fixed_stats = std::nullopt) {
  Experiment ex;
  ex.source = c.get_string("data.source", "synthetic");
  const SolverConfig solver = detail_cli::solver_config_from(c);
  const int half_window = static_cast<int>(c.get_int("labels.smoothing_half_window", 10));
  const bool cold = c.get_bool("data.cold_start", false);
  const int test_every = static_cast<int>(c.get_int("split.test_every", 5));
  const int validation_every = static_cast<int>(c.get_int("split.validation_every", 10));

  std::vector<std::vector<std::size_t>> train_idx, val_idx, test_idx;
  if (ex.source == "synthetic" || ex.source == "files") {
    Trace trace;
    if (ex.source == "synthetic") {
      trace = simulate_trace(scenario_from_config(c));
    } else {
      const std::string derived = c.require_string("data.derived_csv");
      const std::string truth = c.require_string("data.truth_csv");
      auto rows = parse_derived_csv(derived);
      const auto truth_rows = parse_truth_csv(truth);
      trace = assemble_epochs(std::move(rows), truth_rows, assembly_options_from(c));
      trace.name = derived;
    }
    ex.traces.push_back(prepare_trace(trace, solver, half_window, cold));
    const SplitIndices s = interleaved_split(ex.traces[0].size(), test_every, validation_every);
    train_idx = {s.train};
    val_idx = {s.validation};
    test_idx = {s.test};
  } else if (ex.source == "gsdc") {
    const std::filesystem::path root = c.require_string("data.root");
    const Manifest m = load_manifest(c.require_string("data.manifest"));
    const AssemblyOptions opts = assembly_options_from(c);
    const auto add = [&](const std::vector<ManifestEntry>& entries, bool is_test) {
      for (const auto& e : entries) {
        ex.traces.push_back(prepare_trace(load_gsdc_trace(root, e, opts), solver, half_window, cold));
        std::vector<std::size_t> tr, va, te;
        for (std::size_t k = 0; k < ex.traces.back().size(); ++k) {
          if (is_test) te.push_back(k);
          else if (k % static_cast<std::size_t>(validation_every) == static_cast<std::size_t>(validation_every - 1)) va.push_back(k);
          else tr.push_back(k);
        }
        train_idx.push_back(tr);
        val_idx.push_back(va);
        test_idx.push_back(te);
      }
    };
    add(m.select(c.get_string("data.train_split", "train")), false);
    add(m.select(c.get_string("data.test_split", "test.I")), true);
  } else {
    throw ConfigError("data.source: expected synthetic, files or gsdc, got '" + ex.source + "'");
  }

  std::vector<const PreparedTrace*> ptrs;
  for (const auto& t : ex.traces) ptrs.push_back(&t);
  bool any_train = false;
  for (const auto& v : train_idx) any_train = any_train || !v.empty();
  if (fixed_stats) {
    ex.stats = *fixed_stats;
  } else {
    if (!any_train) throw DataError("dataset has no training frames with truth");
    ex.stats = fit_stats(ptrs, train_idx);
  }
  for (std::size_t t = 0; t < ex.traces.size(); ++t) {
    append_subset(ex.train, ex.traces[t], train_idx[t], ex.stats);
    append_subset(ex.validation, ex.traces[t], val_idx[t], ex.stats);
    append_subset(ex.test, ex.traces[t], test_idx[t], ex.stats);
  }
  if (ex.test.empty()) throw DataError("dataset has no test frames with truth");
  return ex;
}

namespace detail_cli {

inline nlohmann::json dataset_json(const Experiment& ex) {
  return {{"source", ex.source},
          {"traces", ex.traces.size()},
          {"train_frames", ex.train.size()},
          {"validation_frames", ex.validation.size()},
          {"test_frames", ex.test.size()}};
}

inline void write_snapshot(const StagedDir& dir, const Config& c) {
  auto f = dir.open("config.cfg");
  f << c.dump();
  if (!f) throw DataError("failed writing " + dir.path("config.cfg").string());
}

inline void write_corrections(const StagedDir& dir, const NetParams& net, const Dataset& ds) {
  for (const auto& [prn, rows] : correction_trace_report(net, ds)) {
    auto f = dir.open("corrections_" + std::to_string(prn) + ".csv");
    write_corrections_csv(f, rows);
  }
}

inline nlohmann::json seeds_json(const Config& c) {
  return {{"scenario", c.get_int("scenario.seed", static_cast<long long>(ScenarioSpec{}.seed))},
          {"train", c.get_int("train.seed", static_cast<long long>(TrainConfig{}.seed))}};
}

/// Keys outside the known sections are likely typos; keys a command does
/// not read are normal when one file drives several commands.
inline void warn_unused(const Config& c) {
  static const std::vector<std::string> sections = {"scenario", "errors", "data", "split", "net", "train",
                                                    "dnls", "labels", "wls", "eval", "gradcheck", "run"};
  for (const auto& k : c.unused_keys()) {
    const std::string section = k.substr(0, k.find('.'));
    if (std::find(sections.begin(), sections.end(), section) == sections.end()) {
      logger().warn("config key '{}' is not recognized", k);
    } else {
      logger().info("config key '{}' is not used by this command", k);
    }
  }
}

}  // namespace detail_cli

inline int cmd_simulate(const RunConfig& rc, std::ostream& out) {
  StagedDir dir(rc.out_dir, rc.force);
  detail_cli::write_snapshot(dir, rc.config);
  const SimulatedRun run = simulate_run(scenario_from_config(rc.config));
  {
    auto d = dir.open("derived.csv");
    write_derived_csv(d, run.rows);
    auto t = dir.open("ground_truth.csv");
    write_truth_csv(t, run.truth);
  }
  std::size_t min_sats = kMaxPrn, max_sats = 0, observations = 0;
  double sum = 0.0, sum2 = 0.0, lo = 0.0, hi = 0.0;
  for (const auto& f : run.trace.frames) {
    min_sats = std::min(min_sats, f.size());
    max_sats = std::max(max_sats, f.size());
    const Eigen::VectorXd e = true_pseudorange_errors(f);
    for (double v : e) {
      lo = observations == 0 ? v : std::min(lo, v);
      hi = observations == 0 ? v : std::max(hi, v);
      sum += v;
      sum2 += v * v;
      ++observations;
    }
  }
  const double n = std::max<double>(1.0, static_cast<double>(observations));
  const double mean = sum / n, sd = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
  nlohmann::json coeffs = nlohmann::json::object();
  for (const auto& [prn, c] : run.spec.errors.per_prn) coeffs[std::to_string(prn)] = {{"a", c.a}, {"b", c.b}};
  const nlohmann::json summary = {
      {"scenario", run.spec.name},
      {"seed", run.spec.seed},
      {"epochs", run.trace.frames.size()},
      {"rows", run.rows.size()},
      {"satellites_per_epoch", {{"min", run.trace.frames.empty() ? 0 : min_sats}, {"max", max_sats},
                                {"mean", static_cast<double>(observations) / std::max<double>(1.0, static_cast<double>(run.trace.frames.size()))}}},
      {"pseudorange_error_m", {{"mean", mean}, {"std", sd}, {"min", lo}, {"max", hi}}},
      {"bias_coefficients", coeffs}};
  detail_cli::write_json(dir, "summary.json", summary);
  detail_cli::warn_unused(rc.config);
  dir.commit();
  out << "simulated " << run.trace.frames.size() << " epochs (" << min_sats << "-" << max_sats
      << " satellites per epoch), pseudorange error mean " << mean << " m, std " << sd << " m\n"
      << "wrote " << dir.final_path().string() << "\n";
  return kOk;
}

inline int cmd_baseline(const RunConfig& rc, std::ostream& out) {
  StagedDir dir(rc.out_dir, rc.force);
  detail_cli::write_snapshot(dir, rc.config);
  const Experiment ex = load_experiment(rc.config);
  const EvalReport wls = evaluate_wls(ex.test);
  detail_cli::write_report_files(dir, wls, "");
  detail_cli::write_json(dir, "metrics.json",
                         {{"command", "baseline"},
                          {"dataset", detail_cli::dataset_json(ex)},
                          {"seeds", detail_cli::seeds_json(rc.config)},
                          {"methods", {{"wls", detail_cli::report_json(wls)}}}});
  detail_cli::warn_unused(rc.config);
  dir.commit();
  out << "wls: " << ex.test.size() << " test epochs, horizontal score " << wls.score << " m (p50 " << wls.p50
      << ", p95 " << wls.p95 << ")\nwrote " << dir.final_path().string() << "\n";
  return kOk;
}

namespace detail_cli {

inline void write_evaluation(const StagedDir& dir, const std::string& command, const Experiment& ex,
                             const Config& c, const TrainConfig& cfg, const NetParams& net, nlohmann::json extra,
                             std::ostream& out) {
  const EvalReport wls = evaluate_wls(ex.test);
  const std::string method = to_string(cfg.mode);
  const EvalReport rep = evaluate_net(method, net, ex.test, cfg);
  write_report_files(dir, rep, "");
  write_report_files(dir, wls, "_wls");
  write_corrections(dir, net, ex.test);
  nlohmann::json metrics = {{"command", command},
                            {"mode", method},
                            {"dataset", dataset_json(ex)},
                            {"seeds", seeds_json(c)},
                            {"methods", {{"wls", report_json(wls)}, {method, report_json(rep)}}},
                            {"score_ratio_vs_wls", rep.score / wls.score}};
  for (auto& [k, v] : extra.items()) metrics[k] = v;
  write_json(dir, "metrics.json", metrics);
  out << "wls: horizontal score " << wls.score << " m\n"
      << method << ": horizontal score " << rep.score << " m (" << std::fixed << std::setprecision(1)
      << 100.0 * (1.0 - rep.score / wls.score) << "% lower than wls)\n"
      << std::defaultfloat << std::setprecision(6);
}

}  // namespace detail_cli

inline int cmd_train(const RunConfig& rc, std::ostream& out) {
  StagedDir dir(rc.out_dir, rc.force);
  detail_cli::write_snapshot(dir, rc.config);
  TrainConfig cfg = train_config_from(rc.config);
  const Experiment ex = load_experiment(rc.config);
  cfg.checkpoint_dir = dir.path("checkpoints").string();

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train_network(ex.train, ex.validation, ex.stats, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(res.net, res.stats, dir.path("model.json").string());
  {
    auto f = dir.open("loss_history.csv");
    f << "epoch,loss,validation_score_m\n";
    for (std::size_t e = 0; e < res.history.epoch_loss.size(); ++e) {
      f << e << ',' << detail::g17(res.history.epoch_loss[e]) << ','
        << (e < res.history.validation_score.size() ? detail::g17(res.history.validation_score[e]) : "") << '\n';
    }
    auto s = dir.open("step_loss.csv");
    s << "step,loss\n";
    for (std::size_t i = 0; i < res.history.step_loss.size(); ++i) s << i << ',' << detail::g17(res.history.step_loss[i]) << '\n';
  }
  const nlohmann::json training = {
      {"training",
       {{"epochs", cfg.epochs},
        {"steps", res.history.step_loss.size()},
        {"final_loss", res.history.epoch_loss.back()},
        {"best_epoch", res.history.best_epoch},
        {"best_validation_score_m",
         std::isfinite(res.history.best_validation_score) ? nlohmann::json(res.history.best_validation_score)
                                                          : nlohmann::json(nullptr)},
        {"backward_mode", to_string(cfg.dnls.backward_mode)}}}};
  detail_cli::write_evaluation(dir, "train", ex, rc.config, cfg, res.net, training, out);
  detail_cli::warn_unused(rc.config);
  dir.commit();
  out << "trained " << cfg.epochs << " epochs in " << std::fixed << std::setprecision(1) << seconds << " s"
      << std::defaultfloat << std::setprecision(6) << ", best epoch " << res.history.best_epoch << "\nwrote "
      << dir.final_path().string() << "\n";
  return kOk;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  StagedDir dir(rc.out_dir, rc.force);
  detail_cli::write_snapshot(dir, rc.config);
  const std::string ckpt = rc.checkpoint.empty() ? rc.config.require_string("eval.checkpoint") : rc.checkpoint;
  const auto [net, stats] = load_checkpoint(ckpt);
  const TrainConfig cfg = train_config_from(rc.config);
  const Experiment ex = load_experiment(rc.config, stats);
  detail_cli::write_evaluation(dir, "eval", ex, rc.config, cfg, net, nlohmann::json::object(), out);
  detail_cli::warn_unused(rc.config);
  dir.commit();
  out << "wrote " << dir.final_path().string() << "\n";
  return kOk;
}

inline GradcheckOptions gradcheck_options_from(const Config& c) {
  GradcheckOptions o;
  o.seed = static_cast<std::uint64_t>(c.get_int("run.seed", c.get_int("gradcheck.seed", static_cast<long long>(o.seed))));
  o.dnls_frames = static_cast<int>(c.get_int("gradcheck.frames", o.dnls_frames));
  o.implicit_frames = static_cast<int>(c.get_int("gradcheck.implicit_frames", o.implicit_frames));
  o.net_instances = static_cast<int>(c.get_int("gradcheck.net_instances", o.net_instances));
  o.chain_batches = static_cast<int>(c.get_int("gradcheck.chain_batches", o.chain_batches));
  o.chain_params = static_cast<int>(c.get_int("gradcheck.chain_params", o.chain_params));
  o.dnls_tolerance = c.get_double("gradcheck.dnls_tolerance", o.dnls_tolerance);
  o.implicit_tolerance = c.get_double("gradcheck.implicit_tolerance", o.implicit_tolerance);
  o.net_tolerance = c.get_double("gradcheck.net_tolerance", o.net_tolerance);
  o.chain_tolerance = c.get_double("gradcheck.chain_tolerance", o.chain_tolerance);
  if (o.dnls_frames < 1 || o.implicit_frames < 1 || o.net_instances < 1 || o.chain_batches < 1 || o.chain_params < 1) {
    throw ConfigError("gradcheck instance counts must be >= 1");
  }
  return o;
}

inline int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  std::optional<StagedDir> dir;
  if (!rc.out_dir.empty()) {
    dir.emplace(rc.out_dir, rc.force);
    detail_cli::write_snapshot(*dir, rc.config);
  }
  GradcheckOptions o = gradcheck_options_from(rc.config);
  o.corrupt_backward = rc.corrupt_backward;
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport rep = run_gradcheck(o);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  out << std::left << std::setw(46) << "check" << std::setw(11) << "instances" << std::setw(15) << "max_rel_err"
      << std::setw(12) << "tolerance" << "status\n";
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : rep.checks) {
    out << std::setw(46) << c.name << std::setw(11) << c.instances << std::setw(15) << std::setprecision(3)
        << std::scientific << c.max_rel_error << std::setw(12) << c.tolerance << (c.passed() ? "pass" : "FAIL")
        << std::defaultfloat << std::setprecision(6) << "\n";
    checks.push_back({{"name", c.name},
                      {"instances", c.instances},
                      {"max_rel_error", c.max_rel_error},
                      {"tolerance", c.tolerance},
                      {"worst_instance", c.worst_instance},
                      {"passed", c.passed()}});
  }
  out << std::right;
  const GradcheckResult* w = rep.worst();
  if (!rep.passed() && w) {
    out << "worst offender: " << w->name << " instance " << w->worst_instance << " rel err " << w->max_rel_error
        << " (tolerance " << w->tolerance << ")\n";
  }
  out << (rep.passed() ? "gradcheck passed" : "gradcheck FAILED") << " in " << std::fixed << std::setprecision(2)
      << seconds << " s\n" << std::defaultfloat << std::setprecision(6);
  if (dir) {
    detail_cli::write_json(*dir, "gradcheck.json",
                           {{"seed", o.seed}, {"passed", rep.passed()}, {"checks", checks},
                            {"corrupted", o.corrupt_backward}});
    dir->commit();
  }
  return rep.passed() ? kOk : kCheckFailed;
}

inline int dispatch(const RunConfig& rc, std::ostream& out) {
  if (rc.command == "simulate") return cmd_simulate(rc, out);
  if (rc.command == "baseline") return cmd_baseline(rc, out);
  if (rc.command == "train") return cmd_train(rc, out);
  if (rc.command == "eval") return cmd_eval(rc, out);
  if (rc.command == "gradcheck") return cmd_gradcheck(rc, out);
  throw ConfigError("unknown command '" + rc.command + "'");
}

/// Runs a command and maps failures onto exit codes.
inline int run_guarded(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(rc, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Differentiable GNSS positioning: simulation, baselines, training and gradient checks"};
  app.require_subcommand(1, 1);
  RunConfig rc;
  std::optional<std::uint64_t> seed;
  std::string mode, backward_mode;
  bool cold_start = false;
  std::vector<std::string> sets;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "generate a synthetic trace and write derived and truth CSV files"},
      {"baseline", "evaluate the WLS baseline on the test frames"},
      {"train", "train a correction network and evaluate it on the test frames"},
      {"eval", "evaluate a saved checkpoint on the test frames"},
      {"gradcheck", "verify analytic gradients against finite differences"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", rc.config_path, "configuration file (key = value lines)");
    sub->add_option("--seed", seed, "root seed; sets scenario.seed and train.seed");
    sub->add_option("--out", rc.out_dir, "output directory");
    sub->add_option("--mode", mode, "training mode: e2e_rcol, e2e_no_rcol, supervised_smoothed, supervised_noisy");
    sub->add_option("--backward-mode", backward_mode, "solver backward mode: unrolling, truncated, implicit");
    sub->add_flag("--cold-start", cold_start, "start every WLS solve at the Earth center");
    sub->add_option("--checkpoint", rc.checkpoint, "checkpoint file for eval");
    sub->add_option("--set", sets, "override a configuration key (KEY=VALUE), repeatable");
    sub->add_flag("--force", rc.force, "replace an existing output directory");
    sub->add_flag("--corrupt-backward", rc.corrupt_backward)->group("");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kConfigFailure;
  }
  for (const auto* sub : app.get_subcommands()) rc.command = sub->get_name();

  try {
    if (!rc.config_path.empty()) rc.config = Config::load(rc.config_path);
    else if (rc.command != "gradcheck") throw ConfigError("--config is required for " + rc.command);
    apply_overrides(rc.config, seed, mode, backward_mode, cold_start, sets);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigFailure;
  }
  return run_guarded(rc, out, err);
}

}  // namespace diffgnss::cli
