#pragma once

#include "jamemu/channel.hpp"
#include "jamemu/error.hpp"
#include "jamemu/jammer.hpp"
#include "jamemu/json_io.hpp"
#include "jamemu/network.hpp"
#include "jamemu/rng.hpp"
#include "jamemu/scenario.hpp"
#include "jamemu/waveforms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace jamemu {

enum class EventKind { JammerOn, JammerOff, SetGain, SetCenter, SetMode, StartTraffic, StopTraffic };

NLOHMANN_JSON_SERIALIZE_ENUM(EventKind, {
                                            {EventKind::JammerOn, "JammerOn"},
                                            {EventKind::JammerOff, "JammerOff"},
                                            {EventKind::SetGain, "SetGain"},
                                            {EventKind::SetCenter, "SetCenter"},
                                            {EventKind::SetMode, "SetMode"},
                                            {EventKind::StartTraffic, "StartTraffic"},
                                            {EventKind::StopTraffic, "StopTraffic"},
                                        })

inline std::optional<EventKind> parse_event_kind(std::string_view name) {
  static constexpr std::pair<std::string_view, EventKind> kNames[] = {
      {"JammerOn", EventKind::JammerOn},   {"JammerOff", EventKind::JammerOff},
      {"SetGain", EventKind::SetGain},     {"SetCenter", EventKind::SetCenter},
      {"SetMode", EventKind::SetMode},     {"StartTraffic", EventKind::StartTraffic},
      {"StopTraffic", EventKind::StopTraffic}};
  for (const auto& [n, k] : kNames)
    if (n == name) return k;
  return std::nullopt;
}

/// A timeline event or live command. `value` carries the gain (dB) for
/// SetGain and the center frequency (Hz) for SetCenter.
struct Event {
  double time_s = 0.0;
  EventKind kind = EventKind::JammerOn;
  double value = 0.0;
  JammerMode mode = JammerMode::Proactive;

  bool operator==(const Event&) const = default;
};

inline Json to_json(const Event& e) {
  Json j{{"time_s", e.time_s}, {"kind", e.kind}};
  if (e.kind == EventKind::SetGain) j["gain_db"] = db_to_json(e.value);
  if (e.kind == EventKind::SetCenter) j["center_hz"] = e.value;
  if (e.kind == EventKind::SetMode) j["mode"] = e.mode;
  return j;
}

/// Parse an event / command document. Throws ValidationError naming the field.
inline Event event_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("command", "must be an object");
  Event e;
  if (!j.contains("kind") || !j["kind"].is_string()) throw ValidationError("kind", "missing");
  const auto kind = parse_event_kind(j["kind"].get<std::string>());
  if (!kind) throw ValidationError("kind", "unknown kind " + j["kind"].dump());
  e.kind = *kind;
  if (j.contains("time_s")) {
    if (!j["time_s"].is_number()) throw ValidationError("time_s", "must be a number");
    e.time_s = j["time_s"].get<double>();
  }
  switch (e.kind) {
    case EventKind::SetGain:
      if (!j.contains("gain_db")) throw ValidationError("gain_db", "required for SetGain");
      try {
        e.value = db_from_json(j["gain_db"]);
      } catch (const ValidationError&) {
        throw ValidationError("gain_db", "must be a number");
      }
      break;
    case EventKind::SetCenter:
      if (!j.contains("center_hz") || !j["center_hz"].is_number())
        throw ValidationError("center_hz", "required numeric value for SetCenter");
      e.value = j["center_hz"].get<double>();
      break;
    case EventKind::SetMode: {
      const auto mode = j.value("mode", std::string{});
      if (mode == "Proactive") e.mode = JammerMode::Proactive;
      else if (mode == "Reactive") e.mode = JammerMode::Reactive;
      else throw ValidationError("mode", "must be Proactive or Reactive");
      break;
    }
    default: break;
  }
  return e;
}

struct RunConfig {
  Scenario scenario;
  double duration_s = 15.0;
  double tick_s = 0.01;
  std::uint64_t seed = 1;
  std::vector<Event> timeline;
  int spectrogram_every_ticks = 1;
  double baseline_window_s = 1.0;
  int spectrogram_fft_size = 1024;
  bool traffic_active = true;

  bool operator==(const RunConfig&) const = default;
};

inline std::uint64_t tick_count(double duration_s, double tick_s) {
  return static_cast<std::uint64_t>(std::ceil(duration_s / tick_s - 1e-9));
}

/// First tick whose start time is at or after `time_s`.
inline std::uint64_t tick_index_at(double time_s, double tick_s) {
  const double k = std::ceil(time_s / tick_s - 1e-9);
  return k <= 0.0 ? 0 : static_cast<std::uint64_t>(k);
}

inline void validate(const RunConfig& cfg) {
  if (!(cfg.tick_s > 0.0) || !std::isfinite(cfg.tick_s)) throw ValidationError("tick_s", "must be positive");
  if (!(cfg.duration_s > 0.0) || !std::isfinite(cfg.duration_s))
    throw ValidationError("duration_s", "must be positive");
  if (cfg.spectrogram_every_ticks < 1) throw ValidationError("spectrogram_every_ticks", "must be >= 1");
  if (!(cfg.baseline_window_s > 0.0)) throw ValidationError("baseline_window_s", "must be positive");
  if (cfg.spectrogram_fft_size < 8 || !std::has_single_bit(static_cast<unsigned>(cfg.spectrogram_fft_size)))
    throw ValidationError("spectrogram_fft_size", "must be a power of two >= 8");
  for (std::size_t i = 0; i < cfg.timeline.size(); ++i) {
    const auto& e = cfg.timeline[i];
    if (e.time_s < 0.0 || e.time_s > cfg.duration_s)
      throw ValidationError("timeline", "event time outside [0, duration_s]");
    if (i > 0 && e.time_s < cfg.timeline[i - 1].time_s)
      throw ValidationError("timeline", "events must be ordered by time");
  }
  try {
    validate(cfg.scenario);
  } catch (const ScenarioError& e) {
    throw ValidationError("scenario", e.what());
  }
}

inline Json to_json(const RunConfig& cfg) {
  Json timeline = Json::array();
  for (const auto& e : cfg.timeline) timeline.push_back(to_json(e));
  return Json{{"schema_version", kSchemaVersion},
              {"scenario", to_json(cfg.scenario)},
              {"duration_s", cfg.duration_s},
              {"tick_s", cfg.tick_s},
              {"seed", cfg.seed},
              {"timeline", timeline},
              {"spectrogram_every_ticks", cfg.spectrogram_every_ticks},
              {"baseline_window_s", cfg.baseline_window_s},
              {"spectrogram_fft_size", cfg.spectrogram_fft_size},
              {"traffic_active", cfg.traffic_active}};
}

/// Parse a run configuration. Field-level problems surface as ValidationError
/// naming the field.
inline RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("config", "must be an object");
  RunConfig cfg;
  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw ValidationError(key, "must be a number");
    return j[key].get<double>();
  };
  const int version = j.value("schema_version", kSchemaVersion);
  if (version != kSchemaVersion) throw ValidationError("schema_version", "unsupported version");
  if (!j.contains("scenario")) throw ValidationError("scenario", "missing");
  try {
    cfg.scenario = scenario_from_json(j["scenario"]);
  } catch (const ScenarioError& e) {
    throw ValidationError("scenario", e.what());
  }
  cfg.duration_s = number("duration_s", cfg.duration_s);
  cfg.tick_s = number("tick_s", cfg.tick_s);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      throw ValidationError("seed", "must be an unsigned integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("timeline")) {
    if (!j["timeline"].is_array()) throw ValidationError("timeline", "must be an array");
    for (const auto& e : j["timeline"]) cfg.timeline.push_back(event_from_json(e));
  }
  cfg.spectrogram_every_ticks = static_cast<int>(number("spectrogram_every_ticks", cfg.spectrogram_every_ticks));
  cfg.baseline_window_s = number("baseline_window_s", cfg.baseline_window_s);
  cfg.spectrogram_fft_size = static_cast<int>(number("spectrogram_fft_size", cfg.spectrogram_fft_size));
  cfg.traffic_active = j.value("traffic_active", cfg.traffic_active);
  validate(cfg);
  return cfg;
}

inline std::string config_hash(const RunConfig& cfg) {
  const auto h = fnv1a64(to_json(cfg).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Run record

struct LinkInfo {
  std::string id;
  std::string node_id;
  std::string tx_node;
  std::string rx_node;
  double baseline_sinr_db = 0.0;
  double baseline_throughput_bps = 0.0;

  bool operator==(const LinkInfo&) const = default;
};

struct SpectrogramEntry {
  std::uint64_t tick = 0;
  PsdFrame frame;

  bool operator==(const SpectrogramEntry&) const = default;
};

struct JammerLogEntry {
  std::uint64_t tick = 0;
  double time_s = 0.0;
  bool on = false;
  Band band;
  double gain_db = kMuteDb;
  Detection detection;

  bool operator==(const JammerLogEntry&) const = default;
};

struct CommandLogEntry {
  std::uint64_t tick = 0;
  Event command;

  bool operator==(const CommandLogEntry&) const = default;
};

struct RunRecord {
  std::string config_hash;
  double tick_s = 0.0;
  std::uint64_t ticks = 0;
  std::vector<LinkInfo> links;
  /// Tick-major: entry (tick, link) lives at tick * links.size() + link.
  std::vector<LinkMetrics> metrics;
  std::vector<SpectrogramEntry> spectrogram;
  std::vector<JammerLogEntry> jammer_log;
  std::vector<CommandLogEntry> commands;

  const LinkMetrics& at(std::uint64_t tick, std::size_t link) const {
    return metrics[static_cast<std::size_t>(tick) * links.size() + link];
  }

  std::optional<std::size_t> link_index(std::string_view id) const {
    for (std::size_t i = 0; i < links.size(); ++i)
      if (links[i].id == id) return i;
    return std::nullopt;
  }

  std::vector<LinkMetrics> series(std::size_t link) const {
    std::vector<LinkMetrics> out;
    out.reserve(static_cast<std::size_t>(ticks));
    for (std::uint64_t k = 0; k < ticks; ++k) out.push_back(at(k, link));
    return out;
  }

  bool operator==(const RunRecord&) const = default;
};

inline std::string downlink_id(const std::string& user) { return "dl:" + user; }
inline std::string uplink_id(const std::string& user) { return "ul:" + user; }

/// Downlink and uplink for every attachment, in attachment order.
inline std::vector<Link> derive_links(const Scenario& sc) {
  std::vector<Link> links;
  for (const auto& [user, bs] : sc.attachments) {
    const Node* u = sc.find(user);
    const Node* b = sc.find(bs);
    links.push_back(Link{downlink_id(user), bs, user, b->band, b->n_subbands.value_or(sc.n_subbands), b->tx_power_dbm});
    links.push_back(Link{uplink_id(user), user, bs, u->band, u->n_subbands.value_or(sc.n_subbands), u->tx_power_dbm});
  }
  return links;
}

/// Channel loss between two nodes: the FIR profile's power gain when one is
/// configured, otherwise log-distance path loss.
inline double channel_loss_db(const Scenario& sc, const Node& tx, const Node& rx) {
  if (auto it = sc.fir_profiles.find({tx.id, rx.id}); it != sc.fir_profiles.end())
    return -it->second.power_gain_db();
  return path_loss_db(tx.position_m, rx.position_m, sc.path_loss);
}

inline FirTaps channel_taps(const Scenario& sc, const Node& tx, const Node& rx) {
  if (auto it = sc.fir_profiles.find({tx.id, rx.id}); it != sc.fir_profiles.end()) return it->second;
  return flat_taps(path_loss_db(tx.position_m, rx.position_m, sc.path_loss));
}

/// Frequency range covered by any band in the scenario.
inline Band emulated_spectrum(const Scenario& sc) {
  double lo = std::min(sc.uplink_band.low_hz(), sc.downlink_band.low_hz());
  double hi = std::max(sc.uplink_band.high_hz(), sc.downlink_band.high_hz());
  auto widen = [&](const Band& b) {
    lo = std::min(lo, b.low_hz());
    hi = std::max(hi, b.high_hz());
  };
  for (const auto& n : sc.nodes) {
    widen(n.band);
    if (n.hop)
      for (double c : n.hop->centers_hz) widen(Band{c, n.band.width_hz});
  }
  if (sc.jammer) widen(sc.jammer->sensing.monitor_band);
  return Band{(lo + hi) / 2.0, hi - lo};
}

// ---------------------------------------------------------------------------
// Engine

/// Outcome of one tick, referencing entries appended to the record.
struct TickOutput {
  std::uint64_t tick = 0;
  double time_s = 0.0;
  std::size_t metrics_begin = 0;
  std::size_t metrics_end = 0;
  bool has_spectrogram = false;
  bool has_jammer_entry = false;
  std::size_t commands_begin = 0;
  std::size_t commands_end = 0;
};

/// Sequential discrete-time simulation of one run. Not thread-safe; the
/// service serializes access to it.
class Engine {
 public:
  explicit Engine(RunConfig config) : cfg_(std::move(config)) {
    validate(cfg_);
    const auto& sc = cfg_.scenario;
    total_ticks_ = tick_count(cfg_.duration_s, cfg_.tick_s);
    links_ = derive_links(sc);
    if (sc.jammer) {
      jammer_ = *sc.jammer;
      jammer_node_ = sc.jammer_node();
    }
    traffic_active_ = cfg_.traffic_active;
    spectrum_ = emulated_spectrum(sc);

    for (const auto& l : links_) {
      const Node& tx = *sc.find(l.tx_node);
      const Node& rx = *sc.find(l.rx_node);
      LinkRuntime rt;
      rt.tx = &tx;
      rt.rx = &rx;
      rt.signal_loss_db = channel_loss_db(sc, tx, rx);
      if (jammer_node_) rt.jammer_loss_db = channel_loss_db(sc, *jammer_node_, rx);
      rt.status.detach_thresh_db = sc.link_status.detach_thresh_db;
      rt.status.attach_thresh_db = sc.link_status.attach_thresh_db;
      rt.status.dwell_s = sc.link_status.dwell_s;
      runtime_.push_back(rt);
    }

    monitor_band_ = jammer_ ? jammer_->sensing.monitor_band : sc.downlink_band;
    monitor_point_ = jammer_node_ ? jammer_node_->position_m
                                  : (sc.nodes.empty() ? Position{} : sc.nodes.front().position_m);
    if (jammer_) {
      const double bin = jammer_->sensing.monitor_band.width_hz / jammer_->sensing.fft_size;
      sensing_floor_db_ = jammer_->sensing.noise_floor_db.value_or(sc.noise_floor_dbm_per_hz + 10.0 * std::log10(bin));
    }

    timeline_ = cfg_.timeline;
    compute_baselines();

    record_.config_hash = config_hash(cfg_);
    record_.tick_s = cfg_.tick_s;
    for (std::size_t i = 0; i < links_.size(); ++i) {
      record_.links.push_back(LinkInfo{links_[i].id, links_[i].id.substr(3), links_[i].tx_node, links_[i].rx_node,
                                       runtime_[i].baseline_sinr_db, runtime_[i].baseline_bps});
    }
    record_.metrics.reserve(static_cast<std::size_t>(total_ticks_) * links_.size());
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const RunConfig& config() const { return cfg_; }
  std::uint64_t total_ticks() const { return total_ticks_; }
  std::uint64_t next_tick() const { return next_tick_; }
  bool finished() const { return next_tick_ >= total_ticks_; }
  const RunRecord& record() const { return record_; }
  RunRecord take_record() { return std::move(record_); }
  const std::vector<Link>& links() const { return links_; }
  const std::optional<JammerState>& jammer() const { return jammer_; }

  /// Check a command against the scenario without queueing it.
  void validate_command(const Event& cmd) const {
    switch (cmd.kind) {
      case EventKind::JammerOn:
      case EventKind::JammerOff:
      case EventKind::SetMode:
        if (!jammer_) throw ValidationError("kind", "scenario has no jammer");
        break;
      case EventKind::SetGain:
        if (!jammer_) throw ValidationError("kind", "scenario has no jammer");
        if (!std::isfinite(cmd.value)) throw ValidationError("gain_db", "must be finite");
        break;
      case EventKind::SetCenter:
        if (!jammer_) throw ValidationError("kind", "scenario has no jammer");
        if (!std::isfinite(cmd.value) || !spectrum_.contains(cmd.value))
          throw ValidationError("center_hz", "outside the emulated spectrum");
        break;
      case EventKind::StartTraffic:
      case EventKind::StopTraffic: break;
    }
  }

  /// Queue a live command; it applies at the start of the returned tick.
  std::uint64_t apply_command(const Event& cmd) {
    if (finished()) throw Error("run is not live");
    validate_command(cmd);
    commands_.push_back(cmd);
    return next_tick_;
  }

  TickOutput step() {
    if (finished()) throw Error("run already finished");
    TickOutput out;
    out.tick = next_tick_;
    out.time_s = static_cast<double>(next_tick_) * cfg_.tick_s;
    const double t = out.time_s;

    // 1. Events, then live commands in arrival order.
    while (timeline_pos_ < timeline_.size() &&
           tick_index_at(timeline_[timeline_pos_].time_s, cfg_.tick_s) <= out.tick) {
      apply_event(timeline_[timeline_pos_], t);
      ++timeline_pos_;
    }
    out.commands_begin = record_.commands.size();
    while (!commands_.empty()) {
      Event cmd = commands_.front();
      commands_.pop_front();
      cmd.time_s = t;
      apply_event(cmd, t);
      record_.commands.push_back({out.tick, cmd});
    }
    out.commands_end = record_.commands.size();

    // 2-3. Sensing and the jammer decision.
    TxDecision decision;
    if (jammer_) {
      const PsdFrame frame = sensing_frame(t);
      const Detection det = sense(frame, jammer_->sensing, sensing_floor_db_);
      auto [next, dec] = jammer_step(std::move(*jammer_), det, t);
      jammer_ = std::move(next);
      decision = dec;
      record_.jammer_log.push_back(JammerLogEntry{out.tick, t, dec.on, dec.on ? dec.band : jammer_->tuned_band,
                                                  dec.on ? dec.gain_db : kMuteDb, det});
      out.has_jammer_entry = true;
    }

    // 4-6. Link metrics.
    out.metrics_begin = record_.metrics.size();
    const double jam_tx_dbm = jammer_node_ ? jammer_node_->tx_power_dbm : 0.0;
    for (std::size_t i = 0; i < links_.size(); ++i) {
      auto& rt = runtime_[i];
      Link link = links_[i];
      link.band = band_at(*rt.tx, t);
      std::vector<Interferer> interferers;
      if (decision.on && decision.gain_db != kMuteDb) {
        // Level inside one fully covered victim subband: the received jammer
        // power spread evenly over the jammer's own band.
        const double sub_w = link.band.width_hz / std::max(1, link.n_subbands);
        interferers.push_back({rx_power_dbm(jam_tx_dbm + decision.gain_db, rt.jammer_loss_db) +
                                   10.0 * std::log10(sub_w / decision.band.width_hz),
                               decision.band});
      }
      const auto sinr = sinr_db(link, rx_power_dbm(link.tx_power_dbm, rt.signal_loss_db), interferers,
                                cfg_.scenario.noise_floor_dbm_per_hz);
      rt.status = update_link_status(rt.status, sinr.effective_db, t);
      double tp = 0.0;
      if (traffic_active_ && rt.status.attached)
        tp = throughput_bps(sinr.per_subband_db, link.band, link.n_subbands, cfg_.scenario.cap_bps_per_hz);
      LinkMetrics m;
      m.tick = out.tick;
      m.time_s = t;
      m.link_index = static_cast<std::uint32_t>(i);
      m.sinr_db = sinr.effective_db;
      m.sinr_pct = sinr_percent(sinr.effective_db, rt.baseline_sinr_db);
      m.throughput_bps = tp;
      m.throughput_pct = throughput_percent(tp, rt.baseline_bps);
      m.link_status = rt.status.attached;
      record_.metrics.push_back(m);
    }
    out.metrics_end = record_.metrics.size();

    if (out.tick % static_cast<std::uint64_t>(cfg_.spectrogram_every_ticks) == 0) {
      record_.spectrogram.push_back({out.tick, spectrogram_frame(out.tick, t, decision)});
      out.has_spectrogram = true;
    }

    ++next_tick_;
    record_.ticks = next_tick_;
    return out;
  }

  /// Analytic PSD over the monitor band at the jammer's receive point: the
  /// noise floor plus every transmitting legitimate node spread flat over its
  /// band. The jammer does not see its own emission.
  PsdFrame sensing_frame(double t) const {
    const auto& cfg = jammer_->sensing;
    const auto n = static_cast<std::size_t>(cfg.fft_size);
    const double step = cfg.monitor_band.width_hz / static_cast<double>(n);
    const double lo = cfg.monitor_band.low_hz();
    std::vector<double> lin(n, dbm_to_mw(sensing_floor_db_));
    if (traffic_active_) {
      for (const auto& node : cfg_.scenario.nodes) {
        if (node.role == NodeRole::Jammer || !transmits(node)) continue;
        const Band b = band_at(node, t);
        if (b.high_hz() <= lo - step / 2 || b.low_hz() >= cfg.monitor_band.high_hz()) continue;
        const double p = dbm_to_mw(rx_power_dbm(node.tx_power_dbm, channel_loss_db(cfg_.scenario, node, *jammer_node_)));
        const double density = p / b.width_hz;
        const auto first = static_cast<std::size_t>(std::max(0.0, std::floor((b.low_hz() - lo) / step - 0.5)));
        for (std::size_t i = first; i < n; ++i) {
          const double bin_lo = lo + (static_cast<double>(i) - 0.5) * step;
          if (bin_lo >= b.high_hz()) break;
          const double ov = std::min(bin_lo + step, b.high_hz()) - std::max(bin_lo, b.low_hz());
          if (ov > 0.0) lin[i] += density * ov;
        }
      }
    }
    PsdFrame frame;
    frame.freq_start_hz = lo;
    frame.freq_step_hz = step;
    frame.timestamp_s = t;
    frame.power_db.resize(n);
    std::transform(lin.begin(), lin.end(), frame.power_db.begin(), [](double mw) { return mw_to_dbm(mw); });
    return frame;
  }

  /// IQ-level spectrogram row over the monitor band: every transmitting node
  /// is synthesized as band noise, passed through its channel taps to the
  /// monitor point, and summed with thermal noise and the jammer's own waveform.
  PsdFrame spectrogram_frame(std::uint64_t tick, double t, const TxDecision& decision) const {
    const auto& sc = cfg_.scenario;
    const auto n = static_cast<std::size_t>(cfg_.spectrogram_fft_size);
    const double fs = monitor_band_.width_hz;
    IqBuffer sum;
    sum.sample_rate_hz = fs;
    sum.center_freq_hz = monitor_band_.center_hz;
    {
      CounterRng rng(stream_key(cfg_.seed, "noise@monitor", tick));
      sum.samples = detail::complex_gaussian(rng, n, dbm_to_mw(sc.noise_floor_dbm_per_hz) * fs);
    }
    auto add = [&](IqBuffer buf, const Band& band, const FirTaps& taps) {
      buf = apply_fir(std::move(buf), taps);
      frequency_shift(buf, band.center_hz - monitor_band_.center_hz);
      for (std::size_t i = 0; i < n; ++i) sum.samples[i] += buf.samples[i];
    };

    const Node probe{"monitor", NodeRole::User, monitor_point_};
    if (traffic_active_) {
      for (const auto& node : sc.nodes) {
        if (node.role == NodeRole::Jammer || !transmits(node)) continue;
        const Band b = band_at(node, t);
        if (b.high_hz() <= monitor_band_.low_hz() || b.low_hz() >= monitor_band_.high_hz()) continue;
        WaveformSpec spec;
        spec.kind = WaveformKind::BandNoise;
        spec.bandwidth_hz = std::min(b.width_hz, fs);
        spec.sample_rate_hz = fs;
        spec.duration_s = static_cast<double>(n) / fs;
        spec.gain_db = node.tx_power_dbm;
        const Node& rx = jammer_node_ ? *jammer_node_ : probe;
        add(gen_waveform(spec, stream_key(cfg_.seed, node.id, tick)), b, channel_taps(sc, node, rx));
      }
    }
    if (jammer_ && decision.on && decision.gain_db != kMuteDb) {
      WaveformSpec spec = jammer_->waveform;
      spec.sample_rate_hz = fs;
      spec.duration_s = static_cast<double>(n) / fs;
      spec.bandwidth_hz = std::min(decision.band.width_hz, fs);
      spec.gain_db = jammer_node_->tx_power_dbm + decision.gain_db;
      // The monitor tap sits next to the jammer antenna.
      add(gen_waveform(spec, stream_key(cfg_.seed, jammer_node_->id, tick)), decision.band,
          flat_taps(sc.path_loss.ref_loss_db));
    }
    return psd(sum, n, Window::Hann, t);
  }

 private:
  struct LinkRuntime {
    const Node* tx = nullptr;
    const Node* rx = nullptr;
    double signal_loss_db = 0.0;
    double jammer_loss_db = 0.0;
    double baseline_sinr_db = 0.0;
    double baseline_bps = 0.0;
    LinkStatusState status;
  };

  bool transmits(const Node& node) const {
    return node.role == NodeRole::BaseStation ? has_users(node.id) : cfg_.scenario.attachments.contains(node.id);
  }

  bool has_users(const std::string& bs) const {
    for (const auto& [u, b] : cfg_.scenario.attachments)
      if (b == bs) return true;
    return false;
  }

  void compute_baselines() {
    const std::uint64_t window = std::max<std::uint64_t>(1, tick_count(cfg_.baseline_window_s, cfg_.tick_s));
    for (std::size_t i = 0; i < links_.size(); ++i) {
      auto& rt = runtime_[i];
      double sinr_acc = 0.0;
      double bps_acc = 0.0;
      for (std::uint64_t k = 0; k < window; ++k) {
        Link link = links_[i];
        link.band = band_at(*rt.tx, static_cast<double>(k) * cfg_.tick_s);
        const auto sinr = sinr_db(link, rx_power_dbm(link.tx_power_dbm, rt.signal_loss_db), {},
                                  cfg_.scenario.noise_floor_dbm_per_hz);
        sinr_acc += sinr.effective_db;
        bps_acc += throughput_bps(sinr.per_subband_db, link.band, link.n_subbands, cfg_.scenario.cap_bps_per_hz);
      }
      rt.baseline_sinr_db = sinr_acc / static_cast<double>(window);
      rt.baseline_bps = bps_acc / static_cast<double>(window);
    }
  }

  void apply_event(const Event& e, double t) {
    switch (e.kind) {
      case EventKind::StartTraffic: traffic_active_ = true; return;
      case EventKind::StopTraffic: traffic_active_ = false; return;
      default: break;
    }
    if (!jammer_) return;
    switch (e.kind) {
      case EventKind::JammerOn: jammer_->enabled = true; break;
      case EventKind::JammerOff: jammer_->enabled = false; break;
      case EventKind::SetGain: override_gain(*jammer_, t, e.value); break;
      case EventKind::SetCenter:
        jammer_->tuned_band.center_hz = e.value;
        jammer_->pending_retune.reset();
        break;
      case EventKind::SetMode: jammer_->mode = e.mode; break;
      default: break;
    }
  }

  RunConfig cfg_;
  std::uint64_t total_ticks_ = 0;
  std::uint64_t next_tick_ = 0;
  std::vector<Link> links_;
  std::vector<LinkRuntime> runtime_;
  std::optional<JammerState> jammer_;
  const Node* jammer_node_ = nullptr;
  bool traffic_active_ = true;
  Band spectrum_;
  Band monitor_band_;
  Position monitor_point_;
  double sensing_floor_db_ = -200.0;
  std::vector<Event> timeline_;
  std::size_t timeline_pos_ = 0;
  std::deque<Event> commands_;
  RunRecord record_;
};

/// Execute a whole run.
inline RunRecord run(const RunConfig& config) {
  Engine engine(config);
  while (!engine.finished()) engine.step();
  return engine.take_record();
}

}  // namespace jamemu
