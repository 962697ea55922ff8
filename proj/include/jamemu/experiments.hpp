#pragma once

// Scripted experiments with shape verdicts, the trace comparator and the
// calibration that picks geometry and jammer power for each experiment.

#include "jamemu/engine.hpp"
#include "jamemu/record_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace jamemu {

// ---------------------------------------------------------------------------
// Trace comparison

struct TraceComparison {
  std::vector<double> accuracy_pct;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t length = 0;
};

/// accuracy(t) = 100 - |a(t) - b(t)|, clamped to [0, 100], over the common prefix.
inline TraceComparison compare_traces(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("trace", "empty series");
  TraceComparison out;
  out.length = std::min(a.size(), b.size());
  out.accuracy_pct.resize(out.length);
  for (std::size_t i = 0; i < out.length; ++i)
    out.accuracy_pct[i] = std::clamp(100.0 - std::abs(a[i] - b[i]), 0.0, 100.0);
  out.min = *std::min_element(out.accuracy_pct.begin(), out.accuracy_pct.end());
  out.max = *std::max_element(out.accuracy_pct.begin(), out.accuracy_pct.end());
  out.mean = std::accumulate(out.accuracy_pct.begin(), out.accuracy_pct.end(), 0.0) / static_cast<double>(out.length);
  return out;
}

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("series", "need two equal-length series of size >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

struct TracePoint {
  double time_s = 0.0;
  double value_pct = 0.0;
};

inline void write_trace_csv(const fs::path& path, std::span<const TracePoint> trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "time_s,throughput_pct\n";
  for (const auto& p : trace) out << fmt::format("{},{}\n", p.time_s, p.value_pct);
}

/// Two-column CSV (time, percent) with a header row. Also accepts externally
/// measured traces in the same layout.
inline std::vector<TracePoint> read_trace_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("empty trace file " + path.string());
  std::vector<TracePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("malformed trace row: " + line);
    out.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return out;
}

inline std::vector<double> trace_values(std::span<const TracePoint> trace) {
  std::vector<double> v;
  v.reserve(trace.size());
  for (const auto& p : trace) v.push_back(p.value_pct);
  return v;
}

// ---------------------------------------------------------------------------
// Verdicts

struct Clause {
  std::string name;
  bool pass = false;
  double value = 0.0;
  std::string expected;
};

struct Verdict {
  std::string experiment;
  std::vector<Clause> clauses;

  bool pass() const {
    return std::all_of(clauses.begin(), clauses.end(), [](const Clause& c) { return c.pass; });
  }
  const Clause& clause(std::string_view name) const {
    for (const auto& c : clauses)
      if (c.name == name) return c;
    throw Error("no clause named " + std::string(name));
  }
  void add(std::string name, bool pass, double value, std::string expected) {
    clauses.push_back({std::move(name), pass, value, std::move(expected)});
  }
};

inline Json to_json(const Verdict& v) {
  Json clauses = Json::array();
  for (const auto& c : v.clauses)
    clauses.push_back({{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"expected", c.expected}});
  return Json{{"experiment", v.experiment}, {"pass", v.pass()}, {"clauses", clauses}};
}

struct ExperimentResult {
  RunConfig config;
  RunRecord record;
  Verdict verdict;
  /// Experiment-specific time series (percent of baseline).
  std::vector<TracePoint> trace;
};

/// Knobs shared by all experiments, mostly for controls.
struct ExperimentOptions {
  std::optional<std::uint64_t> seed;
  /// Force the jammer gain to -inf for the whole run.
  bool silent_jammer = false;
  std::optional<GainSchedule> gain_schedule;
  /// Chase only: park a proactive jammer on the first hop frequency.
  bool static_jammer = false;
  std::optional<double> retune_latency_s;
};

// ---------------------------------------------------------------------------
// Calibration

struct Fig5Calibration {
  int cluster = 4;
  double jammer_tx_dbm = 30.0;
  double jammer_center_offset_hz = -2e6;
  double jammer_width_hz = 6e6;
  double detach_thresh_db = -30.0;
  double attach_thresh_db = -27.0;
  std::uint64_t golden_seed = 2;

  bool operator==(const Fig5Calibration&) const = default;
};

struct GainSweepCalibration {
  double baseline_sinr_db = 27.0;
  double sir_at_zero_gain_db = 30.0;
  double bs_distance_m = 85.8;
  double jammer_distance_m = 185.0;
  double jammer_tx_dbm = 0.0;
  std::vector<double> levels_db{0, 5, 10, 15, 20, 25, 32, 25, 20, 15};
  double step_s = 90.0;
  double tick_s = 0.2;

  bool operator==(const GainSweepCalibration&) const = default;
};

struct ClusterCalibration {
  double spacing_m = 250.0;
  double baseline_sinr_db = 30.0;
  double bs_distance_m = 68.0;
  double jammer_tx_dbm = 5.0;
  double jam_distance_same_m = 60.0;
  double jam_distance_other_m = 130.0;
  double peak_gain_db = 0.0;
  double idle_gain_db = -10.0;
  double detach_thresh_db = 13.5;
  double attach_thresh_db = 16.5;
  double tick_s = 0.2;

  bool operator==(const ClusterCalibration&) const = default;
};

struct ChaseCalibration {
  double ap_tx_dbm = 15.0;
  double ap_sta_distance_m = 224.0;
  double jammer_tx_dbm = 5.0;
  double jammer_distance_m = 152.0;
  double latency_s = 0.02;
  double duration_s = 4.0;

  bool operator==(const ChaseCalibration&) const = default;
};

struct Calibration {
  std::uint64_t seed = 1;
  Fig5Calibration fig5;
  GainSweepCalibration gain_sweep;
  ClusterCalibration cluster;
  ChaseCalibration chase;

  bool operator==(const Calibration&) const = default;
};

inline Json to_json(const Calibration& c) {
  return Json{{"schema_version", kSchemaVersion},
              {"seed", c.seed},
              {"fig5",
               {{"cluster", c.fig5.cluster},
                {"jammer_tx_dbm", c.fig5.jammer_tx_dbm},
                {"jammer_center_offset_hz", c.fig5.jammer_center_offset_hz},
                {"jammer_width_hz", c.fig5.jammer_width_hz},
                {"detach_thresh_db", c.fig5.detach_thresh_db},
                {"attach_thresh_db", c.fig5.attach_thresh_db},
                {"golden_seed", c.fig5.golden_seed}}},
              {"gain_sweep",
               {{"baseline_sinr_db", c.gain_sweep.baseline_sinr_db},
                {"sir_at_zero_gain_db", c.gain_sweep.sir_at_zero_gain_db},
                {"bs_distance_m", c.gain_sweep.bs_distance_m},
                {"jammer_distance_m", c.gain_sweep.jammer_distance_m},
                {"jammer_tx_dbm", c.gain_sweep.jammer_tx_dbm},
                {"levels_db", c.gain_sweep.levels_db},
                {"step_s", c.gain_sweep.step_s},
                {"tick_s", c.gain_sweep.tick_s}}},
              {"cluster",
               {{"spacing_m", c.cluster.spacing_m},
                {"baseline_sinr_db", c.cluster.baseline_sinr_db},
                {"bs_distance_m", c.cluster.bs_distance_m},
                {"jammer_tx_dbm", c.cluster.jammer_tx_dbm},
                {"jam_distance_same_m", c.cluster.jam_distance_same_m},
                {"jam_distance_other_m", c.cluster.jam_distance_other_m},
                {"peak_gain_db", c.cluster.peak_gain_db},
                {"idle_gain_db", c.cluster.idle_gain_db},
                {"detach_thresh_db", c.cluster.detach_thresh_db},
                {"attach_thresh_db", c.cluster.attach_thresh_db},
                {"tick_s", c.cluster.tick_s}}},
              {"chase",
               {{"ap_tx_dbm", c.chase.ap_tx_dbm},
                {"ap_sta_distance_m", c.chase.ap_sta_distance_m},
                {"jammer_tx_dbm", c.chase.jammer_tx_dbm},
                {"jammer_distance_m", c.chase.jammer_distance_m},
                {"latency_s", c.chase.latency_s},
                {"duration_s", c.chase.duration_s}}}};
}

inline Calibration calibration_from_json(const Json& j) {
  Calibration c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("fig5")) {
    const auto& f = j["fig5"];
    auto& o = c.fig5;
    o.cluster = f.value("cluster", o.cluster);
    o.jammer_tx_dbm = f.value("jammer_tx_dbm", o.jammer_tx_dbm);
    o.jammer_center_offset_hz = f.value("jammer_center_offset_hz", o.jammer_center_offset_hz);
    o.jammer_width_hz = f.value("jammer_width_hz", o.jammer_width_hz);
    o.detach_thresh_db = f.value("detach_thresh_db", o.detach_thresh_db);
    o.attach_thresh_db = f.value("attach_thresh_db", o.attach_thresh_db);
    o.golden_seed = f.value("golden_seed", o.golden_seed);
  }
  if (j.contains("gain_sweep")) {
    const auto& f = j["gain_sweep"];
    auto& o = c.gain_sweep;
    o.baseline_sinr_db = f.value("baseline_sinr_db", o.baseline_sinr_db);
    o.sir_at_zero_gain_db = f.value("sir_at_zero_gain_db", o.sir_at_zero_gain_db);
    o.bs_distance_m = f.value("bs_distance_m", o.bs_distance_m);
    o.jammer_distance_m = f.value("jammer_distance_m", o.jammer_distance_m);
    o.jammer_tx_dbm = f.value("jammer_tx_dbm", o.jammer_tx_dbm);
    o.levels_db = f.value("levels_db", o.levels_db);
    o.step_s = f.value("step_s", o.step_s);
    o.tick_s = f.value("tick_s", o.tick_s);
  }
  if (j.contains("cluster")) {
    const auto& f = j["cluster"];
    auto& o = c.cluster;
    o.spacing_m = f.value("spacing_m", o.spacing_m);
    o.baseline_sinr_db = f.value("baseline_sinr_db", o.baseline_sinr_db);
    o.bs_distance_m = f.value("bs_distance_m", o.bs_distance_m);
    o.jammer_tx_dbm = f.value("jammer_tx_dbm", o.jammer_tx_dbm);
    o.jam_distance_same_m = f.value("jam_distance_same_m", o.jam_distance_same_m);
    o.jam_distance_other_m = f.value("jam_distance_other_m", o.jam_distance_other_m);
    o.peak_gain_db = f.value("peak_gain_db", o.peak_gain_db);
    o.idle_gain_db = f.value("idle_gain_db", o.idle_gain_db);
    o.detach_thresh_db = f.value("detach_thresh_db", o.detach_thresh_db);
    o.attach_thresh_db = f.value("attach_thresh_db", o.attach_thresh_db);
    o.tick_s = f.value("tick_s", o.tick_s);
  }
  if (j.contains("chase")) {
    const auto& f = j["chase"];
    auto& o = c.chase;
    o.ap_tx_dbm = f.value("ap_tx_dbm", o.ap_tx_dbm);
    o.ap_sta_distance_m = f.value("ap_sta_distance_m", o.ap_sta_distance_m);
    o.jammer_tx_dbm = f.value("jammer_tx_dbm", o.jammer_tx_dbm);
    o.jammer_distance_m = f.value("jammer_distance_m", o.jammer_distance_m);
    o.latency_s = f.value("latency_s", o.latency_s);
    o.duration_s = f.value("duration_s", o.duration_s);
  }
  return c;
}

inline Calibration load_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open calibration file " + path.string());
  return calibration_from_json(Json::parse(in));
}

inline void save_calibration(const fs::path& path, const Calibration& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

#ifdef JAMEMU_DATA_DIR
inline fs::path default_data_dir() { return JAMEMU_DATA_DIR; }
#else
inline fs::path default_data_dir() { return "data"; }
#endif

/// The committed calibration if present, built-in defaults otherwise.
inline Calibration default_calibration() {
  const auto path = default_data_dir() / "calibration.json";
  if (fs::exists(path)) return load_calibration(path);
  return {};
}

inline fs::path golden_fig5_path() { return default_data_dir() / "golden" / "fig5_trace.csv"; }

// ---------------------------------------------------------------------------
// Geometry helpers

/// Distance at which log-distance path loss equals `loss_db`.
inline double distance_for_loss(double loss_db, const PathLossParams& p) {
  return p.ref_dist_m * std::pow(10.0, (loss_db - p.ref_loss_db) / (10.0 * p.exponent));
}

inline Position lerp_towards(Position from, Position to, double dist) {
  const double d = distance(from, to);
  if (d == 0.0) return from;
  return {from.x + (to.x - from.x) * dist / d, from.y + (to.y - from.y) * dist / d};
}

/// One intersection point of two circles (the one left of the a->b direction).
inline std::optional<Position> circle_intersection(Position a, double ra, Position b, double rb) {
  const double d = distance(a, b);
  if (d == 0.0 || d > ra + rb || d < std::abs(ra - rb)) return std::nullopt;
  const double along = (ra * ra - rb * rb + d * d) / (2.0 * d);
  const double h = std::sqrt(std::max(0.0, ra * ra - along * along));
  const double ux = (b.x - a.x) / d;
  const double uy = (b.y - a.y) / d;
  return Position{a.x + along * ux - h * uy, a.y + along * uy + h * ux};
}

/// Bisection for a monotone function on [lo, hi].
inline double bisect(const std::function<double(double)>& f, double lo, double hi, double target, int iters = 100) {
  const bool increasing = f(hi) > f(lo);
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    if ((f(mid) < target) == increasing) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

namespace detail {

inline void finish(ExperimentResult& result, const std::optional<fs::path>& out_dir, const std::string& trace_name) {
  if (!out_dir) return;
  write_record(*out_dir, result.record, result.config);
  std::ofstream(*out_dir / "verdict.json", std::ios::trunc) << to_json(result.verdict).dump(2) << '\n';
  if (!result.trace.empty()) write_trace_csv(*out_dir / trace_name, result.trace);
}

inline void apply_options(JammerState& j, const ExperimentOptions& opt) {
  if (opt.gain_schedule) j.gain_schedule = *opt.gain_schedule;
  if (opt.silent_jammer) j.gain_schedule = {{0.0, kMuteDb}};
  if (opt.retune_latency_s) j.retune_latency_s = *opt.retune_latency_s;
}

inline double mean_where(const std::vector<TracePoint>& trace, const std::function<bool(double)>& pred) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& p : trace)
    if (pred(p.time_s)) {
      acc += p.value_pct;
      ++n;
    }
  return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

inline std::string range(double lo, double hi) { return fmt::format("[{}, {}]", lo, hi); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Fig 5: partial-band jammer switched on and off in a clustered network

inline constexpr double kFig5JamOnS = 3.5;
inline constexpr double kFig5JamOffS = 10.0;

inline RunConfig fig5_config(const Calibration& cal, std::uint64_t seed, const ExperimentOptions& opt = {}) {
  const auto& c = cal.fig5;
  Scenario sc = build_clustered_scenario(ClusterLayout{}, seed);
  JammerState j;
  j.mode = JammerMode::Proactive;
  j.waveform.kind = WaveformKind::BandNoise;
  j.tuned_band = Band{sc.downlink_band.center_hz + c.jammer_center_offset_hz, c.jammer_width_hz};
  j.sensing.monitor_band = sc.downlink_band;
  j.gain_schedule = {{0.0, 0.0}};
  j.enabled = false;
  detail::apply_options(j, opt);
  sc = place_jammer(std::move(sc), user_id(c.cluster, 0), j, c.jammer_tx_dbm);
  sc.link_status.detach_thresh_db = c.detach_thresh_db;
  sc.link_status.attach_thresh_db = c.attach_thresh_db;

  RunConfig cfg;
  cfg.scenario = std::move(sc);
  cfg.duration_s = 15.0;
  cfg.tick_s = 0.01;
  cfg.seed = seed;
  cfg.timeline = {{kFig5JamOnS, EventKind::JammerOn}, {kFig5JamOffS, EventKind::JammerOff}};
  return cfg;
}

/// Downlinks of the users sharing the jammer's cluster.
inline std::vector<std::size_t> same_cluster_downlinks(const RunRecord& rec, const Scenario& sc) {
  const Node* jam = sc.jammer_node();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rec.links.size(); ++i) {
    const Node* n = sc.find(rec.links[i].node_id);
    if (jam && n && n->cluster == jam->cluster && rec.links[i].id == downlink_id(n->id)) out.push_back(i);
  }
  return out;
}

inline std::vector<TracePoint> mean_throughput_trace(const RunRecord& rec, std::span<const std::size_t> links) {
  std::vector<TracePoint> trace;
  trace.reserve(static_cast<std::size_t>(rec.ticks));
  for (std::uint64_t k = 0; k < rec.ticks; ++k) {
    double acc = 0.0;
    for (auto i : links) acc += rec.at(k, i).throughput_pct;
    trace.push_back({rec.at(k, links.front()).time_s, acc / static_cast<double>(links.size())});
  }
  return trace;
}

/// Steady-state jammed throughput (percent) of the same-cluster downlinks,
/// evaluated directly from the link model without running the engine.
inline double fig5_jammed_plateau(const RunConfig& cfg) {
  const Scenario& sc = cfg.scenario;
  const Node& jam = *sc.jammer_node();
  const JammerState& j = *sc.jammer;
  double acc = 0.0;
  int n = 0;
  for (const auto& link : derive_links(sc)) {
    const Node& rx = *sc.find(link.rx_node);
    const Node& tx = *sc.find(link.tx_node);
    if (rx.cluster != jam.cluster || link.id != downlink_id(rx.id)) continue;
    const double s = rx_power_dbm(link.tx_power_dbm, channel_loss_db(sc, tx, rx));
    const auto base = sinr_db(link, s, {}, sc.noise_floor_dbm_per_hz);
    const double base_bps = throughput_bps(base.per_subband_db, link.band, link.n_subbands, sc.cap_bps_per_hz);
    const double gain = gain_at(j.gain_schedule, kFig5JamOffS);
    double bps = 0.0;
    if (gain != kMuteDb) {
      const double level = rx_power_dbm(jam.tx_power_dbm + gain, channel_loss_db(sc, jam, rx)) +
                           10.0 * std::log10(link.band.width_hz / link.n_subbands / j.tuned_band.width_hz);
      const Interferer in{level, j.tuned_band};
      const auto jammed = sinr_db(link, s, std::span(&in, 1), sc.noise_floor_dbm_per_hz);
      if (jammed.effective_db >= sc.link_status.detach_thresh_db)
        bps = throughput_bps(jammed.per_subband_db, link.band, link.n_subbands, sc.cap_bps_per_hz);
    } else {
      bps = base_bps;
    }
    acc += 100.0 * bps / base_bps;
    ++n;
  }
  return acc / n;
}

inline Verdict fig5_verdict(std::span<const TracePoint> trace_span) {
  const std::vector<TracePoint> trace(trace_span.begin(), trace_span.end());
  Verdict v;
  v.experiment = "fig5";
  const double pre = detail::mean_where(trace, [](double t) { return t < 3.0; });
  v.add("pre_jam_mean", pre >= 95.0, pre, ">= 95");
  const double plateau = detail::mean_where(trace, [](double t) { return t >= 6.0 && t < kFig5JamOffS; });
  v.add("jammed_plateau_mean", plateau >= 30.0 && plateau <= 50.0, plateau, detail::range(30, 50));
  // Earliest time after switch-off from which the trace stays >= 95.
  double recovered_at = std::numeric_limits<double>::infinity();
  for (auto it = trace.rbegin(); it != trace.rend() && it->time_s >= kFig5JamOffS; ++it) {
    if (it->value_pct < 95.0) break;
    recovered_at = it->time_s;
  }
  const double delay = recovered_at - kFig5JamOffS;
  v.add("recovery_delay_s", delay <= 2.0, delay, "<= 2");
  return v;
}

inline ExperimentResult run_fig5(const Calibration& cal, const std::optional<fs::path>& out_dir = std::nullopt,
                                 const ExperimentOptions& opt = {}) {
  ExperimentResult r;
  r.config = fig5_config(cal, opt.seed.value_or(cal.seed), opt);
  r.record = run(r.config);
  r.trace = mean_throughput_trace(r.record, same_cluster_downlinks(r.record, r.config.scenario));
  r.verdict = fig5_verdict(r.trace);
  detail::finish(r, out_dir, "fig5_trace.csv");
  return r;
}

// ---------------------------------------------------------------------------
// Fig 6: stepped jammer gain against one victim link

inline const std::string kGainSweepVictim = user_id(0, 0);

inline RunConfig gain_sweep_config(const Calibration& cal, std::uint64_t seed, const ExperimentOptions& opt = {}) {
  const auto& c = cal.gain_sweep;
  Scenario sc = build_clustered_scenario(ClusterLayout{1, 2}, seed);
  Node* bs = sc.find(bs_id(0));
  Node* victim = sc.find(kGainSweepVictim);
  victim->position_m = {bs->position_m.x + c.bs_distance_m, bs->position_m.y};
  JammerState j;
  j.mode = JammerMode::Proactive;
  j.waveform.kind = WaveformKind::AWGN;
  j.tuned_band = sc.downlink_band;
  j.sensing.monitor_band = sc.downlink_band;
  j.gain_schedule = stepped_schedule(c.levels_db, c.step_s);
  detail::apply_options(j, opt);
  sc = place_jammer(std::move(sc), user_id(0, 1), j, c.jammer_tx_dbm);
  // Jammer on the far side of the victim, perpendicular to the BS direction.
  const Position vp = victim->position_m;
  sc.find(user_id(0, 1))->position_m = {vp.x, vp.y + c.jammer_distance_m};

  RunConfig cfg;
  cfg.scenario = std::move(sc);
  cfg.duration_s = c.step_s * static_cast<double>(c.levels_db.size());
  cfg.tick_s = c.tick_s;
  cfg.seed = seed;
  cfg.spectrogram_every_ticks = std::max(1, static_cast<int>(std::lround(1.0 / c.tick_s)));
  return cfg;
}

struct Plateau {
  double start_s = 0.0;
  double end_s = 0.0;
  double gain_db = 0.0;
  double mean_sinr_db = 0.0;
  double mean_sinr_pct = 0.0;
};

inline Verdict gain_sweep_verdict(const RunRecord& rec, std::size_t victim, const GainSchedule& schedule,
                                  double duration_s, double dwell_s, std::vector<Plateau>* plateaus_out = nullptr) {
  Verdict v;
  v.experiment = "gain_sweep";
  const double baseline = rec.links[victim].baseline_sinr_db;
  // Settling margin at each plateau edge: link-status dwell plus two ticks.
  const double settle = dwell_s + 2.0 * rec.tick_s;

  std::vector<Plateau> plateaus;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    Plateau p;
    p.start_s = schedule[i].time_s;
    p.end_s = i + 1 < schedule.size() ? schedule[i + 1].time_s : duration_s;
    p.gain_db = schedule[i].gain_db;
    double s = 0.0, pct = 0.0;
    int n = 0;
    for (std::uint64_t k = 0; k < rec.ticks; ++k) {
      const auto& m = rec.at(k, victim);
      if (m.time_s >= p.start_s && m.time_s < p.end_s) {
        s += m.sinr_db;
        pct += m.sinr_pct;
        ++n;
      }
    }
    p.mean_sinr_db = n ? s / n : 0.0;
    p.mean_sinr_pct = n ? pct / n : 0.0;
    plateaus.push_back(p);
  }

  // Jammer-dominated: interference at least ~10x the noise on both sides of the step.
  auto dominated = [&](const Plateau& p) { return baseline - p.mean_sinr_db >= 10.0; };
  int steps = 0;
  bool steps_ok = true;
  double worst = 0.0;
  for (std::size_t i = 1; i < plateaus.size(); ++i) {
    const auto& a = plateaus[i - 1];
    const auto& b = plateaus[i];
    if (std::abs(std::abs(b.gain_db - a.gain_db) - 5.0) > 1e-9 || !dominated(a) || !dominated(b)) continue;
    const double drop = (b.gain_db > a.gain_db) ? a.mean_sinr_pct - b.mean_sinr_pct : b.mean_sinr_pct - a.mean_sinr_pct;
    if (steps++ == 0 || std::abs(drop - 18.0) > std::abs(worst - 18.0)) worst = drop;
    steps_ok = steps_ok && drop >= 16.0 && drop <= 20.0;
  }
  v.add("dominated_step_drop_pct", steps > 0 && steps_ok, worst, "each in [16, 20]");
  v.add("dominated_step_count", steps >= 2, steps, ">= 2");

  std::size_t top = 0;
  for (std::size_t i = 1; i < plateaus.size(); ++i)
    if (plateaus[i].gain_db > plateaus[top].gain_db) top = i;
  const auto& mx = plateaus[top];
  int misplaced = 0;
  int detached_ticks = 0;
  for (std::uint64_t k = 0; k < rec.ticks; ++k) {
    const auto& m = rec.at(k, victim);
    const bool inside = m.time_s >= mx.start_s + settle && m.time_s < mx.end_s;
    const bool outside = m.time_s < mx.start_s || m.time_s >= mx.end_s + settle;
    if (!m.link_status) ++detached_ticks;
    if ((inside && m.link_status) || (outside && !m.link_status)) ++misplaced;
  }
  v.add("detached_only_at_max_gain", misplaced == 0 && detached_ticks > 0, misplaced,
        "0 misplaced ticks, detached during max plateau");
  const bool reattached = rec.ticks > 0 && rec.at(rec.ticks - 1, victim).link_status;
  v.add("reattached_after_max_gain", reattached, reattached ? 1.0 : 0.0, "attached at end of run");

  std::vector<double> gains, pcts;
  for (std::uint64_t k = 0; k < rec.ticks; ++k) {
    const auto& m = rec.at(k, victim);
    gains.push_back(gain_at(schedule, m.time_s));
    pcts.push_back(m.sinr_pct);
  }
  const double rho = spearman(gains, pcts);
  v.add("gain_sinr_rank_correlation", rho <= -0.95, rho, "<= -0.95");
  if (plateaus_out) *plateaus_out = std::move(plateaus);
  return v;
}

inline ExperimentResult run_gain_sweep(const Calibration& cal, const std::optional<fs::path>& out_dir = std::nullopt,
                                       const ExperimentOptions& opt = {}) {
  ExperimentResult r;
  r.config = gain_sweep_config(cal, opt.seed.value_or(cal.seed), opt);
  r.record = run(r.config);
  const auto victim = *r.record.link_index(downlink_id(kGainSweepVictim));
  r.verdict = gain_sweep_verdict(r.record, victim, r.config.scenario.jammer->gain_schedule, r.config.duration_s,
                                 r.config.scenario.link_status.dwell_s);
  for (const auto& m : r.record.series(victim)) r.trace.push_back({m.time_s, m.sinr_pct});
  detail::finish(r, out_dir, "gain_sweep_sinr_pct.csv");
  return r;
}

// ---------------------------------------------------------------------------
// Fig 7: same-cluster versus neighbouring-cluster impact

inline constexpr int kClusterJamCluster = 0;
inline constexpr int kClusterOtherCluster = 1;

inline const std::string kClusterSameVictim = user_id(kClusterJamCluster, 1);
inline const std::string kClusterOtherVictim = user_id(kClusterOtherCluster, 0);

inline GainSchedule cluster_schedule(const ClusterCalibration& c) {
  return {{0.0, kMuteDb}, {30.0, c.idle_gain_db}, {420.0, c.peak_gain_db},
          {540.0, c.idle_gain_db}, {840.0, c.peak_gain_db}};
}

/// Place the jammer and both monitored users at the calibrated distances.
/// `symmetric` puts the other-cluster victim at the same (BS, jammer)
/// distances as the same-cluster one.
inline void place_cluster_geometry(Scenario& sc, const ClusterCalibration& c, bool symmetric = false) {
  const Position b0 = sc.find(bs_id(kClusterJamCluster))->position_m;
  const Position b1 = sc.find(bs_id(kClusterOtherCluster))->position_m;
  Node* jam = sc.find(user_id(kClusterJamCluster, 0));
  Node* same = sc.find(kClusterSameVictim);
  Node* other = sc.find(kClusterOtherVictim);
  if (symmetric) {
    // Jammer midway between the base stations; both victims at the same pair of distances.
    jam->position_m = {(b0.x + b1.x) / 2.0, (b0.y + b1.y) / 2.0};
    const auto ps = circle_intersection(b0, c.bs_distance_m, jam->position_m, c.jam_distance_other_m);
    const auto po = circle_intersection(jam->position_m, c.jam_distance_other_m, b1, c.bs_distance_m);
    if (!ps || !po) throw Error("symmetric cluster geometry is infeasible for this layout");
    same->position_m = *ps;
    other->position_m = *po;
    return;
  }
  other->position_m = lerp_towards(b1, b0, c.bs_distance_m);
  jam->position_m = lerp_towards(other->position_m, b0, c.jam_distance_other_m);
  const auto p = circle_intersection(b0, c.bs_distance_m, jam->position_m, c.jam_distance_same_m);
  if (!p) throw Error("cluster calibration geometry is infeasible for this layout");
  same->position_m = *p;
}

inline RunConfig cluster_config(const Calibration& cal, std::uint64_t seed, const ExperimentOptions& opt = {},
                                bool symmetric = false) {
  const auto& c = cal.cluster;
  ClusterLayout layout;
  layout.inter_bs_spacing_m = c.spacing_m;
  Scenario sc = build_clustered_scenario(layout, seed);
  place_cluster_geometry(sc, c, symmetric);
  JammerState j;
  j.mode = JammerMode::Proactive;
  j.waveform.kind = WaveformKind::AWGN;
  j.tuned_band = sc.downlink_band;
  j.sensing.monitor_band = sc.downlink_band;
  j.gain_schedule = cluster_schedule(c);
  detail::apply_options(j, opt);
  sc = place_jammer(std::move(sc), user_id(kClusterJamCluster, 0), j, c.jammer_tx_dbm);
  sc.link_status.detach_thresh_db = c.detach_thresh_db;
  sc.link_status.attach_thresh_db = c.attach_thresh_db;

  RunConfig cfg;
  cfg.scenario = std::move(sc);
  cfg.duration_s = 900.0;
  cfg.tick_s = c.tick_s;
  cfg.seed = seed;
  cfg.spectrogram_every_ticks = std::max(1, static_cast<int>(std::lround(1.0 / c.tick_s)));
  return cfg;
}

inline double max_degradation(const RunRecord& rec, std::size_t link) {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < rec.ticks; ++k) worst = std::max(worst, 100.0 - rec.at(k, link).sinr_pct);
  return worst;
}

inline Verdict cluster_verdict(const RunRecord& rec, std::size_t same, std::size_t other) {
  Verdict v;
  v.experiment = "cluster";
  const double ds = max_degradation(rec, same);
  const double dother = max_degradation(rec, other);
  v.add("same_cluster_max_degradation", ds >= 60.0 && ds <= 80.0, ds, detail::range(60, 80));
  v.add("other_cluster_max_degradation", dother >= 28.0 && dother <= 48.0, dother, detail::range(28, 48));
  int same_detached = 0, other_detached = 0;
  for (std::uint64_t k = 0; k < rec.ticks; ++k) {
    same_detached += !rec.at(k, same).link_status;
    other_detached += !rec.at(k, other).link_status;
  }
  v.add("same_cluster_detaches", same_detached > 0, same_detached, "> 0 detached ticks");
  v.add("other_cluster_never_detaches", other_detached == 0, other_detached, "0 detached ticks");
  return v;
}

inline ExperimentResult run_cluster_impact(const Calibration& cal,
                                           const std::optional<fs::path>& out_dir = std::nullopt,
                                           const ExperimentOptions& opt = {}, bool symmetric = false) {
  ExperimentResult r;
  r.config = cluster_config(cal, opt.seed.value_or(cal.seed), opt, symmetric);
  r.record = run(r.config);
  const auto same = *r.record.link_index(downlink_id(kClusterSameVictim));
  const auto other = *r.record.link_index(downlink_id(kClusterOtherVictim));
  r.verdict = cluster_verdict(r.record, same, other);
  for (const auto& m : r.record.series(same)) r.trace.push_back({m.time_s, m.sinr_pct});
  detail::finish(r, out_dir, "cluster_same_sinr_pct.csv");
  return r;
}

// ---------------------------------------------------------------------------
// Fig 3: reactive jammer chasing a hopping narrowband link

inline constexpr double kChaseLowHz = 2.378e9;
inline constexpr double kChaseHighHz = 2.382e9;
inline constexpr double kChaseHopS = 0.1;
inline constexpr double kChaseTickS = 0.01;
inline constexpr double kChaseWidthHz = 2e6;

inline RunConfig chase_config(const Calibration& cal, std::uint64_t seed, const ExperimentOptions& opt = {}) {
  const auto& c = cal.chase;
  Scenario sc;
  const Band monitor{2.38e9, 10e6};
  sc.uplink_band = monitor;
  sc.downlink_band = monitor;
  const HopPattern hop{kChaseHopS, {kChaseLowHz, kChaseHighHz}};
  Node ap{"ap", NodeRole::BaseStation, {0.0, 0.0}, 0, c.ap_tx_dbm, Band{kChaseLowHz, kChaseWidthHz}, 1, hop};
  Node sta{"sta", NodeRole::User, {c.ap_sta_distance_m, 0.0}, 0, 23.0, Band{kChaseLowHz, kChaseWidthHz}, 1, hop};
  const double half = c.ap_sta_distance_m / 2.0;
  const double h = std::sqrt(std::max(0.0, c.jammer_distance_m * c.jammer_distance_m - half * half));
  Node jam{"jammer", NodeRole::Jammer, {half, h}, 0, c.jammer_tx_dbm, Band{monitor.center_hz, 156e3}};
  sc.nodes = {ap, sta, jam};
  sc.attachments["sta"] = "ap";

  JammerState j;
  j.mode = opt.static_jammer ? JammerMode::Proactive : JammerMode::Reactive;
  j.waveform.kind = WaveformKind::BandNoise;
  j.tuned_band = Band{opt.static_jammer ? kChaseLowHz : monitor.center_hz, 156e3};
  j.sensing.monitor_band = monitor;
  j.retune_latency_s = c.latency_s;
  j.gain_schedule = {{0.0, 0.0}};
  detail::apply_options(j, opt);
  sc.jammer = j;
  validate(sc);

  RunConfig cfg;
  cfg.scenario = std::move(sc);
  cfg.duration_s = c.duration_s;
  cfg.tick_s = kChaseTickS;
  cfg.seed = seed;
  return cfg;
}

struct ChaseStats {
  double on_target_fraction = 0.0;
  double caught_bps = 0.0;
  double evading_bps = 0.0;
  std::size_t caught_ticks = 0;
  std::size_t evading_ticks = 0;
};

inline ChaseStats chase_stats(const RunRecord& rec, const Scenario& sc, std::size_t link) {
  ChaseStats s;
  const Node& ap = *sc.find("ap");
  double caught = 0.0, evading = 0.0;
  for (std::uint64_t k = 0; k < rec.ticks; ++k) {
    const auto& log = rec.jammer_log[static_cast<std::size_t>(k)];
    const Band target = band_at(ap, log.time_s);
    const bool on_target = log.on && log.gain_db != kMuteDb && band_overlap(target, log.band) > 0.0;
    const double bps = rec.at(k, link).throughput_bps;
    if (on_target) {
      ++s.caught_ticks;
      caught += bps;
    } else {
      ++s.evading_ticks;
      evading += bps;
    }
  }
  s.on_target_fraction = static_cast<double>(s.caught_ticks) / static_cast<double>(rec.ticks);
  s.caught_bps = s.caught_ticks ? caught / static_cast<double>(s.caught_ticks) : 0.0;
  s.evading_bps = s.evading_ticks ? evading / static_cast<double>(s.evading_ticks) : 0.0;
  return s;
}

inline constexpr double kChaseRatioTarget = 4.0 / 11.0;

inline Verdict chase_verdict(const ChaseStats& s, double latency_s) {
  Verdict v;
  v.experiment = "chase";
  const double min_fraction = (kChaseHopS - latency_s) / kChaseHopS - 0.05;
  v.add("on_target_fraction", s.on_target_fraction >= min_fraction, s.on_target_fraction,
        fmt::format(">= {}", min_fraction));
  const double ratio = s.evading_bps > 0.0 ? s.caught_bps / s.evading_bps : 0.0;
  const bool both = s.caught_ticks > 0 && s.evading_ticks > 0;
  v.add("caught_evading_ratio", both && std::abs(ratio / kChaseRatioTarget - 1.0) <= 0.2, ratio,
        fmt::format("4/11 +- 20% ([{:.4f}, {:.4f}])", 0.8 * kChaseRatioTarget, 1.2 * kChaseRatioTarget));
  return v;
}

inline ExperimentResult run_fig3_chase(const Calibration& cal, const std::optional<fs::path>& out_dir = std::nullopt,
                                       const ExperimentOptions& opt = {}) {
  ExperimentResult r;
  r.config = chase_config(cal, opt.seed.value_or(cal.seed), opt);
  r.record = run(r.config);
  const auto link = *r.record.link_index(downlink_id("sta"));
  const auto stats = chase_stats(r.record, r.config.scenario, link);
  r.verdict = chase_verdict(stats, r.config.scenario.jammer->retune_latency_s);
  for (const auto& m : r.record.series(link)) r.trace.push_back({m.time_s, m.throughput_pct});
  detail::finish(r, out_dir, "chase_throughput_pct.csv");
  return r;
}

// ---------------------------------------------------------------------------
// Calibration search

/// SNR of a link whose transmitter sits `d` metres from its receiver.
inline double link_snr_db(double tx_dbm, double d, const Band& band, const Scenario& sc) {
  return rx_power_dbm(tx_dbm, path_loss_db({0, 0}, {d, 0}, sc.path_loss)) -
         (sc.noise_floor_dbm_per_hz + 10.0 * std::log10(band.width_hz));
}

struct CalibrationReport {
  Calibration calibration;
  std::vector<TracePoint> golden_trace;
  TraceComparison golden_comparison;
  double default_plateau = 0.0;
  double golden_plateau = 0.0;
};

/// Search every experiment's free parameters against its targets. The Fig 5
/// golden trace comes from the first seed after the default whose trace
/// lands inside the 75-98% accuracy band against the default-seed run.
inline CalibrationReport calibrate(Calibration cal = {}, std::uint64_t max_golden_candidates = 200) {
  const Scenario defaults;
  const Band dl = defaults.downlink_band;

  // Fig 6: victim distance for the baseline SNR, jammer distance for the SIR at 0 dB gain.
  {
    auto& g = cal.gain_sweep;
    g.bs_distance_m = bisect([&](double d) { return link_snr_db(20.0, d, dl, defaults); }, 1.0, 5000.0,
                             g.baseline_sinr_db);
    const double s = rx_power_dbm(20.0, path_loss_db({0, 0}, {g.bs_distance_m, 0}, defaults.path_loss));
    g.jammer_distance_m = bisect(
        [&](double d) { return s - rx_power_dbm(g.jammer_tx_dbm, path_loss_db({0, 0}, {d, 0}, defaults.path_loss)); },
        1.0, 1e5, g.sir_at_zero_gain_db);
  }

  // Fig 7: victims at equal baseline; jammer distances so the peak-gain SINR
  // lands at 30% (same cluster) and 62% (other cluster) of baseline.
  {
    auto& c = cal.cluster;
    c.bs_distance_m = bisect([&](double d) { return link_snr_db(20.0, d, dl, defaults); }, 1.0, 5000.0,
                             c.baseline_sinr_db);
    const double s = rx_power_dbm(20.0, path_loss_db({0, 0}, {c.bs_distance_m, 0}, defaults.path_loss));
    const double n = dbm_to_mw(defaults.noise_floor_dbm_per_hz) * dl.width_hz;
    auto sinr_at = [&](double d) {
      const double i = dbm_to_mw(rx_power_dbm(c.jammer_tx_dbm + c.peak_gain_db,
                                              path_loss_db({0, 0}, {d, 0}, defaults.path_loss)));
      return mw_to_dbm(dbm_to_mw(s) / (n + i));
    };
    c.jam_distance_same_m = bisect(sinr_at, 1.0, 1e5, 0.30 * c.baseline_sinr_db);
    c.jam_distance_other_m = bisect(sinr_at, 1.0, 1e5, 0.62 * c.baseline_sinr_db);
    // Detach threshold midway between the two peak-gain SINRs, to the nearest 0.5 dB.
    c.detach_thresh_db = std::round((0.30 + 0.62) / 2.0 * c.baseline_sinr_db * 2.0) / 2.0;
    c.attach_thresh_db = c.detach_thresh_db + 3.0;
  }

  // Fig 3: AP-STA distance for 11 Mbit/s evading, jammer distance for 4 Mbit/s caught.
  {
    auto& ch = cal.chase;
    const Band b{kChaseLowHz, kChaseWidthHz};
    const double evade_db = 10.0 * std::log10(std::pow(2.0, 11e6 / kChaseWidthHz) - 1.0);
    const double caught_db = 10.0 * std::log10(std::pow(2.0, 4e6 / kChaseWidthHz) - 1.0);
    ch.ap_sta_distance_m = bisect([&](double d) { return link_snr_db(ch.ap_tx_dbm, d, b, defaults); }, 1.0, 1e5,
                                  evade_db);
    const double s = rx_power_dbm(ch.ap_tx_dbm, path_loss_db({0, 0}, {ch.ap_sta_distance_m, 0}, defaults.path_loss));
    const double n = dbm_to_mw(defaults.noise_floor_dbm_per_hz) * b.width_hz;
    ch.jammer_distance_m = bisect(
        [&](double d) {
          const double i = dbm_to_mw(rx_power_dbm(ch.jammer_tx_dbm, path_loss_db({0, 0}, {d, 0}, defaults.path_loss)));
          return mw_to_dbm(dbm_to_mw(s) / (n + i));
        },
        1.0, 1e5, caught_db);
  }

  // Fig 5: jammer power for a ~42% plateau at the default seed, then the golden seed.
  CalibrationReport report;
  {
    auto& f = cal.fig5;
    f.jammer_tx_dbm = bisect(
        [&](double p) {
          Calibration trial = cal;
          trial.fig5.jammer_tx_dbm = p;
          return fig5_jammed_plateau(fig5_config(trial, cal.seed));
        },
        0.0, 60.0, 42.0, 40);
    f.jammer_tx_dbm = std::round(f.jammer_tx_dbm * 10.0) / 10.0;
    const auto reference = run_fig5(cal);
    report.default_plateau = fig5_jammed_plateau(fig5_config(cal, cal.seed));
    const auto ref_values = trace_values(reference.trace);
    bool found = false;
    for (std::uint64_t g = cal.seed + 1; g <= cal.seed + max_golden_candidates && !found; ++g) {
      // Cheap pre-filter: the plateaus must differ enough to move the mean accuracy.
      const double plateau = fig5_jammed_plateau(fig5_config(cal, g));
      if (plateau < 30.0 || plateau > 50.0) continue;
      if (std::abs(plateau - report.default_plateau) * (kFig5JamOffS - kFig5JamOnS) / 15.0 < 2.0) continue;
      const auto golden = run_fig5(cal, std::nullopt, ExperimentOptions{g});
      if (!golden.verdict.pass()) continue;
      const auto cmp = compare_traces(ref_values, trace_values(golden.trace));
      if (cmp.min >= 75.0 && cmp.mean <= 98.0) {
        f.golden_seed = g;
        report.golden_trace = golden.trace;
        report.golden_comparison = cmp;
        report.golden_plateau = plateau;
        found = true;
      }
    }
    if (!found) throw Error("no golden seed candidate lands inside the accuracy band");
  }
  report.calibration = cal;
  return report;
}

}  // namespace jamemu
