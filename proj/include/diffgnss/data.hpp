#pragma once

// Ingestion of GSDC-2021-style derived measurement and ground-truth CSV files,
// epoch assembly, the versioned binary trace cache and the trace manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diffgnss/config.hpp"
#include "diffgnss/errors.hpp"
#include "diffgnss/geo.hpp"
#include "diffgnss/gnss_model.hpp"
#include "diffgnss/log.hpp"
#include "diffgnss/wls.hpp"

namespace diffgnss {

inline constexpr int kGpsConstellation = 1;

struct RawDerivedRow {
  std::int64_t gps_time_ms = 0;
  int constellation = kGpsConstellation;
  int svid = 0;
  std::string signal_type = "GPS_L1";
  EcefPosition sat_pos;
  double sat_clk_bias_m = 0.0;
  double isrb_m = 0.0;
  double iono_delay_m = 0.0;
  double tropo_delay_m = 0.0;
  double raw_pr_m = 0.0;
  double raw_pr_unc_m = 1.0;
  double cn0_dbhz = std::nan("");

  friend bool operator==(const RawDerivedRow& a, const RawDerivedRow& b) {
    auto same = [](double u, double v) { return u == v || (std::isnan(u) && std::isnan(v)); };
    return a.gps_time_ms == b.gps_time_ms && a.constellation == b.constellation && a.svid == b.svid &&
           a.signal_type == b.signal_type && a.sat_pos == b.sat_pos && a.sat_clk_bias_m == b.sat_clk_bias_m &&
           a.isrb_m == b.isrb_m && a.iono_delay_m == b.iono_delay_m && a.tropo_delay_m == b.tropo_delay_m &&
           a.raw_pr_m == b.raw_pr_m && a.raw_pr_unc_m == b.raw_pr_unc_m && same(a.cn0_dbhz, b.cn0_dbhz);
  }
};

struct GroundTruthRow {
  std::int64_t gps_time_ms = 0;
  GeodeticPosition geodetic;
  std::optional<double> clock_offset_m;

  friend bool operator==(const GroundTruthRow&, const GroundTruthRow&) = default;
};

struct ParseStats {
  std::size_t rows = 0;
  std::size_t non_gps_dropped = 0;
  std::size_t other_signal_dropped = 0;
  std::size_t malformed_skipped = 0;
};

namespace detail {

class CsvHeader {
 public:
  CsvHeader(const std::string& line, const std::string& source) : source_(source) {
    const auto names = split(line, ',');
    for (std::size_t i = 0; i < names.size(); ++i) index_[trim(names[i])] = i;
  }
  std::size_t require(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw DataError(source_ + ": missing required column '" + name + "'");
    return it->second;
  }
  std::optional<std::size_t> optional(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::string source_;
  std::map<std::string, std::size_t> index_;
};

inline double field_double(const std::vector<std::string>& f, std::size_t i) {
  const double v = parse_double(f.at(i), "field");
  if (!std::isfinite(v)) throw ConfigError("non-finite field");
  return v;
}

inline std::optional<double> field_optional(const std::vector<std::string>& f, std::optional<std::size_t> i) {
  if (!i || *i >= f.size() || trim(f[*i]).empty()) return std::nullopt;
  return field_double(f, *i);
}

inline bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) return true;
  }
  return false;
}

}  // namespace detail

/// Derived-file rows of GPS L1 measurements. `gps_signal` empty keeps every
/// signal type.
inline std::vector<RawDerivedRow> parse_derived_csv(std::istream& in, const std::string& source,
                                                    ParseStats* stats = nullptr,
                                                    const std::string& gps_signal = "GPS_L1") {
  ParseStats local;
  ParseStats& st = stats ? *stats : local;
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no)) throw DataError(source + ": missing header row");
  const detail::CsvHeader h(line, source);
  const std::size_t c_time = h.require("millisSinceGpsEpoch"), c_const = h.require("constellationType"),
                    c_svid = h.require("svid"), c_x = h.require("xSatPosM"), c_y = h.require("ySatPosM"),
                    c_z = h.require("zSatPosM"), c_clk = h.require("satClkBiasM"),
                    c_iono = h.require("ionoDelayM"), c_tropo = h.require("tropoDelayM"),
                    c_raw = h.require("rawPrM"), c_unc = h.require("rawPrUncM");
  const auto c_signal = h.optional("signalType"), c_isrb = h.optional("isrbM"), c_cn0 = h.optional("Cn0DbHz");

  std::vector<RawDerivedRow> rows;
  while (detail::next_data_line(in, line, line_no)) {
    ++st.rows;
    const auto f = split(line, ',');
    RawDerivedRow r;
    try {
      r.gps_time_ms = parse_int(f.at(c_time), "millisSinceGpsEpoch");
      r.constellation = static_cast<int>(parse_int(f.at(c_const), "constellationType"));
      r.svid = static_cast<int>(parse_int(f.at(c_svid), "svid"));
      if (c_signal) r.signal_type = trim(f.at(*c_signal));
      r.sat_pos = {detail::field_double(f, c_x), detail::field_double(f, c_y), detail::field_double(f, c_z)};
      r.sat_clk_bias_m = detail::field_double(f, c_clk);
      r.isrb_m = detail::field_optional(f, c_isrb).value_or(0.0);
      r.iono_delay_m = detail::field_double(f, c_iono);
      r.tropo_delay_m = detail::field_double(f, c_tropo);
      r.raw_pr_m = detail::field_double(f, c_raw);
      r.raw_pr_unc_m = detail::field_double(f, c_unc);
      r.cn0_dbhz = detail::field_optional(f, c_cn0).value_or(std::nan(""));
    } catch (const std::exception& e) {
      ++st.malformed_skipped;
      logger().warn("{}:{}: skipping malformed row ({})", source, line_no, e.what());
      continue;
    }
    if (r.constellation != kGpsConstellation) {
      ++st.non_gps_dropped;
      continue;
    }
    if (!gps_signal.empty() && c_signal && r.signal_type != gps_signal) {
      ++st.other_signal_dropped;
      continue;
    }
    rows.push_back(std::move(r));
  }
  if (st.non_gps_dropped > 0) logger().info("{}: dropped {} non-GPS rows", source, st.non_gps_dropped);
  return rows;
}

inline std::vector<RawDerivedRow> parse_derived_csv(const std::string& path, ParseStats* stats = nullptr,
                                                    const std::string& gps_signal = "GPS_L1") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open derived file: " + path);
  return parse_derived_csv(in, path, stats, gps_signal);
}

/// Ground-truth rows; timestamps must be strictly increasing.
inline std::vector<GroundTruthRow> parse_truth_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no)) throw DataError(source + ": missing header row");
  const detail::CsvHeader h(line, source);
  const std::size_t c_time = h.require("millisSinceGpsEpoch"), c_lat = h.require("latDeg"),
                    c_lng = h.require("lngDeg"), c_h = h.require("heightAboveWgs84EllipsoidM");
  const auto c_clk = h.optional("clockOffsetM");
  std::vector<GroundTruthRow> rows;
  while (detail::next_data_line(in, line, line_no)) {
    const auto f = split(line, ',');
    GroundTruthRow r;
    try {
      r.gps_time_ms = parse_int(f.at(c_time), "millisSinceGpsEpoch");
      r.geodetic = {detail::field_double(f, c_lat), detail::field_double(f, c_lng), detail::field_double(f, c_h)};
      r.clock_offset_m = detail::field_optional(f, c_clk);
    } catch (const std::exception& e) {
      logger().warn("{}:{}: skipping malformed truth row ({})", source, line_no, e.what());
      continue;
    }
    if (!rows.empty() && r.gps_time_ms <= rows.back().gps_time_ms) {
      throw DataError(source + ":" + std::to_string(line_no) + ": truth timestamps not strictly increasing");
    }
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<GroundTruthRow> parse_truth_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground-truth file: " + path);
  return parse_truth_csv(in, path);
}

namespace detail {

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_derived_csv(std::ostream& out, const std::vector<RawDerivedRow>& rows) {
  using detail::fmt17;
  out << "millisSinceGpsEpoch,constellationType,svid,signalType,xSatPosM,ySatPosM,zSatPosM,satClkBiasM,"
         "isrbM,ionoDelayM,tropoDelayM,rawPrM,rawPrUncM,Cn0DbHz\n";
  for (const auto& r : rows) {
    out << r.gps_time_ms << ',' << r.constellation << ',' << r.svid << ',' << r.signal_type << ','
        << fmt17(r.sat_pos.x) << ',' << fmt17(r.sat_pos.y) << ',' << fmt17(r.sat_pos.z) << ','
        << fmt17(r.sat_clk_bias_m) << ',' << fmt17(r.isrb_m) << ',' << fmt17(r.iono_delay_m) << ','
        << fmt17(r.tropo_delay_m) << ',' << fmt17(r.raw_pr_m) << ',' << fmt17(r.raw_pr_unc_m) << ','
        << (std::isnan(r.cn0_dbhz) ? std::string() : fmt17(r.cn0_dbhz)) << '\n';
  }
}

inline void write_truth_csv(std::ostream& out, const std::vector<GroundTruthRow>& rows) {
  using detail::fmt17;
  out << "millisSinceGpsEpoch,latDeg,lngDeg,heightAboveWgs84EllipsoidM,clockOffsetM\n";
  for (const auto& r : rows) {
    out << r.gps_time_ms << ',' << fmt17(r.geodetic.latitude_deg) << ',' << fmt17(r.geodetic.longitude_deg)
        << ',' << fmt17(r.geodetic.height_m) << ',' << (r.clock_offset_m ? fmt17(*r.clock_offset_m) : "")
        << '\n';
  }
}

enum class TropoSource { formula, from_file };

inline TropoSource parse_tropo_source(const std::string& s) {
  if (s == "formula") return TropoSource::formula;
  if (s == "from-file") return TropoSource::from_file;
  throw ConfigError("data.tropo: expected 'formula' or 'from-file', got '" + s + "'");
}

struct AssemblyOptions {
  TropoSource tropo = TropoSource::formula;
  double elevation_mask_deg = 10.0;
  std::int64_t truth_tolerance_ms = 500;
  double heading_min_displacement_m = 0.5;
  int tropo_passes = 2;  // elevation refinements for the modeled tropo delay
  SolverConfig solver;
};

/// Reads data.tropo, data.elevation_mask_deg, data.truth_tolerance_ms and
/// data.heading_min_displacement_m.
inline AssemblyOptions assembly_options_from(const Config& c, double default_mask_deg = 10.0) {
  AssemblyOptions a;
  a.tropo = parse_tropo_source(c.get_string("data.tropo", "formula"));
  a.elevation_mask_deg = c.get_double("data.elevation_mask_deg", default_mask_deg);
  a.truth_tolerance_ms = c.get_int("data.truth_tolerance_ms", a.truth_tolerance_ms);
  a.heading_min_displacement_m = c.get_double("data.heading_min_displacement_m", a.heading_min_displacement_m);
  return a;
}

struct AssemblyStats {
  std::size_t epochs = 0;
  std::size_t dropped_few_satellites = 0;
  std::size_t frames_without_truth = 0;
  std::size_t masked_observations = 0;
  std::size_t duplicate_prn = 0;

  friend bool operator==(const AssemblyStats&, const AssemblyStats&) = default;
};

/// An assembled trace: frames in time order with per-frame heading estimates.
struct Trace {
  std::string name;
  std::vector<EpochFrame> frames;
  std::vector<double> heading_rad;
  AssemblyStats stats;

  friend bool operator==(const Trace&, const Trace&) = default;
};

namespace detail {

inline std::optional<GroundTruth> match_truth(const std::vector<GroundTruthRow>& truth, std::int64_t t,
                                              std::int64_t tolerance_ms) {
  const auto it = std::lower_bound(truth.begin(), truth.end(), t,
                                   [](const GroundTruthRow& r, std::int64_t v) { return r.gps_time_ms < v; });
  const GroundTruthRow* best = nullptr;
  std::int64_t best_dt = 0;
  for (auto cand : {it, it == truth.begin() ? truth.end() : std::prev(it)}) {
    if (cand == truth.end()) continue;
    const std::int64_t dt = std::abs(cand->gps_time_ms - t);
    if (!best || dt < best_dt) {
      best = &*cand;
      best_dt = dt;
    }
  }
  if (!best || best_dt > tolerance_ms) return std::nullopt;
  return GroundTruth{geodetic_to_ecef(best->geodetic), best->geodetic, best->clock_offset_m};
}

}  // namespace detail

/// Groups rows into epoch frames. Rows are sorted by (time, svid) first so the
/// result does not depend on input order. With the formula tropo source
/// the delay is evaluated at elevations from a cold-start WLS fix, refined
/// `tropo_passes` times.
inline Trace assemble_epochs(std::vector<RawDerivedRow> rows, const std::vector<GroundTruthRow>& truth,
                             const AssemblyOptions& options = {}) {
  std::stable_sort(rows.begin(), rows.end(), [](const RawDerivedRow& a, const RawDerivedRow& b) {
    return a.gps_time_ms != b.gps_time_ms ? a.gps_time_ms < b.gps_time_ms : a.svid < b.svid;
  });
  const double mask = deg2rad(options.elevation_mask_deg);
  Trace trace;
  std::vector<ReceiverState> fixes;

  for (std::size_t begin = 0; begin < rows.size();) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].gps_time_ms == rows[begin].gps_time_ms) ++end;
    ++trace.stats.epochs;

    std::vector<const RawDerivedRow*> sel;
    for (std::size_t i = begin; i < end; ++i) {
      if (!sel.empty() && sel.back()->svid == rows[i].svid) {
        ++trace.stats.duplicate_prn;
        continue;
      }
      sel.push_back(&rows[i]);
    }
    const std::int64_t t_ms = rows[begin].gps_time_ms;
    begin = end;

    EpochFrame frame;
    frame.gps_time_ms = t_ms;
    std::vector<double> elevation(sel.size(), std::nan(""));
    auto build = [&](bool with_tropo) {
      frame.observations.clear();
      for (std::size_t n = 0; n < sel.size(); ++n) {
        const RawDerivedRow& r = *sel[n];
        double tropo = 0.0;
        if (options.tropo == TropoSource::from_file) {
          tropo = r.tropo_delay_m;
        } else if (with_tropo) {
          tropo = tropospheric_delay(elevation[n]);
        }
        SatelliteObservation o;
        o.prn = r.svid;
        o.sat_pos = r.sat_pos;
        o.pseudorange_m = corrected_pseudorange(r.raw_pr_m, r.sat_clk_bias_m, r.isrb_m, r.iono_delay_m, tropo);
        o.cn0_dbhz = r.cn0_dbhz;
        o.pr_uncertainty_m = r.raw_pr_unc_m;
        o.elevation_rad = elevation[n];
        frame.observations.push_back(o);
      }
    };

    bool ok = sel.size() >= 4;
    const int passes = options.tropo == TropoSource::from_file ? 1 : 1 + options.tropo_passes;
    for (int pass = 0; ok && pass < passes; ++pass) {
      build(pass > 0);
      ReceiverState fix;
      try {
        fix = gauss_newton_solve(frame, {}, ReceiverState{}, options.solver).first;
      } catch (const GeometryError&) {
        ok = false;
        break;
      }
      // Elevations at this fix; masked satellites are removed once.
      std::vector<const RawDerivedRow*> kept;
      std::vector<double> kept_el;
      for (std::size_t n = 0; n < sel.size(); ++n) {
        const double e = fix.position().norm() > 1e6 ? elevation_angle(fix.position(), sel[n]->sat_pos) : 0.0;
        if (pass == 0 && (e < mask || !(e > 0.0))) {
          ++trace.stats.masked_observations;
          continue;
        }
        kept.push_back(sel[n]);
        kept_el.push_back(std::clamp(e, 1e-6, kPi / 2.0));
      }
      sel = std::move(kept);
      elevation = std::move(kept_el);
      ok = sel.size() >= 4;
    }
    if (!ok) {
      ++trace.stats.dropped_few_satellites;
      continue;
    }
    build(options.tropo == TropoSource::formula);

    ReceiverState fix;
    try {
      fix = gauss_newton_solve(frame, {}, ReceiverState{}, options.solver).first;
    } catch (const GeometryError&) {
      ++trace.stats.dropped_few_satellites;
      continue;
    }
    frame.truth = detail::match_truth(truth, t_ms, options.truth_tolerance_ms);
    if (!frame.truth) ++trace.stats.frames_without_truth;
    frame.epoch_index = static_cast<int>(trace.frames.size());

    double heading = trace.heading_rad.empty() ? 0.0 : trace.heading_rad.back();
    if (!fixes.empty()) {
      const double disp = (fix.position().vec() - fixes.back().position().vec()).norm();
      if (disp >= options.heading_min_displacement_m) heading = azimuth_angle(fixes.back().position(), fix.position());
    }
    fixes.push_back(fix);
    trace.heading_rad.push_back(heading);
    trace.frames.push_back(std::move(frame));
  }
  if (trace.stats.dropped_few_satellites > 0) {
    logger().info("dropped {} epochs with fewer than 4 usable satellites", trace.stats.dropped_few_satellites);
  }
  return trace;
}

// Binary trace cache. Layout (little-endian, native doubles):
//   "DGTRACE\0" | u32 version | string name | u64 frames | per frame:
//   i32 epoch | i64 time | f64 heading | u8 has_truth [f64 x y z lat lon h | u8 has_clock [f64 clock]]
//   | u32 M | per obs: i32 prn | f64 sx sy sz rho cn0 sigma elevation
//   followed by the six u64 assembly counters.
inline constexpr std::uint32_t kTraceCacheVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("trace cache truncated");
  return v;
}

}  // namespace detail

inline void save_trace_cache(const Trace& trace, const std::string& path) {
  using detail::put;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trace cache: " + path);
  out.write("DGTRACE", 8);
  put<std::uint32_t>(out, kTraceCacheVersion);
  put<std::uint64_t>(out, trace.name.size());
  out.write(trace.name.data(), static_cast<std::streamsize>(trace.name.size()));
  put<std::uint64_t>(out, trace.frames.size());
  for (std::size_t k = 0; k < trace.frames.size(); ++k) {
    const EpochFrame& f = trace.frames[k];
    put<std::int32_t>(out, f.epoch_index);
    put<std::int64_t>(out, f.gps_time_ms);
    put<double>(out, trace.heading_rad[k]);
    put<std::uint8_t>(out, f.truth ? 1 : 0);
    if (f.truth) {
      for (double v : {f.truth->position.x, f.truth->position.y, f.truth->position.z, f.truth->geodetic.latitude_deg,
                       f.truth->geodetic.longitude_deg, f.truth->geodetic.height_m})
        put<double>(out, v);
      put<std::uint8_t>(out, f.truth->clock_offset_m ? 1 : 0);
      if (f.truth->clock_offset_m) put<double>(out, *f.truth->clock_offset_m);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.size()));
    for (const auto& o : f.observations) {
      put<std::int32_t>(out, o.prn);
      for (double v : {o.sat_pos.x, o.sat_pos.y, o.sat_pos.z, o.pseudorange_m, o.cn0_dbhz, o.pr_uncertainty_m,
                       o.elevation_rad})
        put<double>(out, v);
    }
  }
  const auto& s = trace.stats;
  for (std::size_t v : {s.epochs, s.dropped_few_satellites, s.frames_without_truth, s.masked_observations,
                        s.duplicate_prn, std::size_t{0}})
    put<std::uint64_t>(out, v);
  if (!out) throw DataError("failed writing trace cache: " + path);
}

inline Trace load_trace_cache(const std::string& path) {
  using detail::get;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trace cache: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "DGTRACE", 8) != 0) throw DataError(path + ": not a trace cache");
  const auto version = get<std::uint32_t>(in);
  if (version != kTraceCacheVersion) {
    throw DataError(path + ": unsupported trace cache version " + std::to_string(version));
  }
  Trace t;
  t.name.resize(get<std::uint64_t>(in));
  in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  const auto frames = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < frames; ++k) {
    EpochFrame f;
    f.epoch_index = get<std::int32_t>(in);
    f.gps_time_ms = get<std::int64_t>(in);
    t.heading_rad.push_back(get<double>(in));
    if (get<std::uint8_t>(in)) {
      GroundTruth g;
      g.position.x = get<double>(in);
      g.position.y = get<double>(in);
      g.position.z = get<double>(in);
      g.geodetic.latitude_deg = get<double>(in);
      g.geodetic.longitude_deg = get<double>(in);
      g.geodetic.height_m = get<double>(in);
      if (get<std::uint8_t>(in)) g.clock_offset_m = get<double>(in);
      f.truth = g;
    }
    const auto m = get<std::uint32_t>(in);
    if (m > static_cast<std::uint32_t>(kMaxPrn)) throw DataError(path + ": corrupt observation count");
    for (std::uint32_t n = 0; n < m; ++n) {
      SatelliteObservation o;
      o.prn = get<std::int32_t>(in);
      o.sat_pos.x = get<double>(in);
      o.sat_pos.y = get<double>(in);
      o.sat_pos.z = get<double>(in);
      o.pseudorange_m = get<double>(in);
      o.cn0_dbhz = get<double>(in);
      o.pr_uncertainty_m = get<double>(in);
      o.elevation_rad = get<double>(in);
      f.observations.push_back(o);
    }
    t.frames.push_back(std::move(f));
  }
  t.stats.epochs = get<std::uint64_t>(in);
  t.stats.dropped_few_satellites = get<std::uint64_t>(in);
  t.stats.frames_without_truth = get<std::uint64_t>(in);
  t.stats.masked_observations = get<std::uint64_t>(in);
  t.stats.duplicate_prn = get<std::uint64_t>(in);
  get<std::uint64_t>(in);
  return t;
}

/// Trace lists per scenario. Each non-comment line is `<split> <trace> [phone]`
/// with split one of `train`, `test.I`, `test.II`.
struct ManifestEntry {
  std::string split;
  std::string trace;
  std::string phone = "Pixel4";
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(const std::string& split_name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == split_name) out.push_back(e);
    return out;
  }
};

inline Manifest parse_manifest(std::istream& in, const std::string& source) {
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.split)) continue;
    if (!(ls >> e.trace)) throw DataError(source + ":" + std::to_string(line_no) + ": missing trace name");
    ls >> e.phone;
    if (e.split != "train" && e.split != "test.I" && e.split != "test.II") {
      throw DataError(source + ":" + std::to_string(line_no) + ": unknown split '" + e.split + "'");
    }
    m.entries.push_back(e);
  }
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  return parse_manifest(in, path);
}

/// Loads `<root>/<trace>/<phone>/<phone>_derived.csv` and the sibling
/// `ground_truth.csv` (GSDC 2021 layout).
inline Trace load_gsdc_trace(const std::filesystem::path& root, const ManifestEntry& entry,
                             const AssemblyOptions& options = {}) {
  const auto dir = root / entry.trace / entry.phone;
  ParseStats ps;
  auto rows = parse_derived_csv((dir / (entry.phone + "_derived.csv")).string(), &ps);
  const auto truth_path = dir / "ground_truth.csv";
  std::vector<GroundTruthRow> truth;
  if (std::filesystem::exists(truth_path)) truth = parse_truth_csv(truth_path.string());
  Trace t = assemble_epochs(std::move(rows), truth, options);
  t.name = entry.trace + "/" + entry.phone;
  return t;
}

}  // namespace diffgnss
