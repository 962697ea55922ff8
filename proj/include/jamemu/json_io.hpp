#pragma once

// JSON encodings shared by the scenario, engine and service layers.

#include "jamemu/channel.hpp"
#include "jamemu/jammer.hpp"
#include "jamemu/waveforms.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

namespace jamemu {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// dB values may be -inf (mute); JSON has no infinities, so that one is a string.
inline Json db_to_json(double db) {
  if (db == kMuteDb) return "-inf";
  return db;
}

inline double db_from_json(const Json& j) {
  if (j.is_string() && j.get<std::string>() == "-inf") return kMuteDb;
  if (!j.is_number()) throw ValidationError("", "expected a number or \"-inf\"");
  return j.get<double>();
}

inline Json to_json(const Band& b) { return Json{{"center_hz", b.center_hz}, {"width_hz", b.width_hz}}; }

inline Band band_from_json(const Json& j) {
  return Band{j.at("center_hz").get<double>(), j.at("width_hz").get<double>()};
}

inline Json to_json(const PathLossParams& p) {
  return Json{{"ref_loss_db", p.ref_loss_db},
              {"ref_dist_m", p.ref_dist_m},
              {"exponent", p.exponent},
              {"min_dist_m", p.min_dist_m}};
}

inline PathLossParams path_loss_from_json(const Json& j) {
  PathLossParams p;
  p.ref_loss_db = j.value("ref_loss_db", p.ref_loss_db);
  p.ref_dist_m = j.value("ref_dist_m", p.ref_dist_m);
  p.exponent = j.value("exponent", p.exponent);
  p.min_dist_m = j.value("min_dist_m", p.min_dist_m);
  return p;
}

inline Json to_json(const WaveformSpec& w) {
  Json j{{"kind", w.kind},
         {"bandwidth_hz", w.bandwidth_hz},
         {"symbol_rate_hz", w.symbol_rate_hz},
         {"gain_db", db_to_json(w.gain_db)},
         {"sample_rate_hz", w.sample_rate_hz},
         {"duration_s", w.duration_s}};
  if (w.custom_path) j["custom_path"] = w.custom_path->string();
  return j;
}

inline WaveformSpec waveform_from_json(const Json& j) {
  WaveformSpec w;
  if (j.contains("kind")) {
    const auto kind = parse_waveform_kind(j["kind"].get<std::string>());
    if (!kind) throw ValidationError("waveform.kind", "unknown waveform kind " + j["kind"].dump());
    w.kind = *kind;
  }
  w.bandwidth_hz = j.value("bandwidth_hz", w.bandwidth_hz);
  w.symbol_rate_hz = j.value("symbol_rate_hz", w.symbol_rate_hz);
  if (j.contains("gain_db")) w.gain_db = db_from_json(j["gain_db"]);
  w.sample_rate_hz = j.value("sample_rate_hz", w.sample_rate_hz);
  w.duration_s = j.value("duration_s", w.duration_s);
  if (j.contains("custom_path") && !j["custom_path"].is_null())
    w.custom_path = j["custom_path"].get<std::string>();
  return w;
}

inline Json to_json(const SensingConfig& s) {
  Json j{{"monitor_band", to_json(s.monitor_band)},
         {"fft_size", s.fft_size},
         {"threshold_db_above_floor", s.threshold_db_above_floor},
         {"min_detections", s.min_detections}};
  if (s.noise_floor_db) j["noise_floor_db"] = *s.noise_floor_db;
  return j;
}

inline SensingConfig sensing_from_json(const Json& j) {
  SensingConfig s;
  if (j.contains("monitor_band")) s.monitor_band = band_from_json(j["monitor_band"]);
  s.fft_size = j.value("fft_size", s.fft_size);
  s.threshold_db_above_floor = j.value("threshold_db_above_floor", s.threshold_db_above_floor);
  if (j.contains("noise_floor_db") && !j["noise_floor_db"].is_null())
    s.noise_floor_db = j["noise_floor_db"].get<double>();
  s.min_detections = j.value("min_detections", s.min_detections);
  return s;
}

/// Configuration part of a jammer (dynamic state is not persisted).
inline Json to_json(const JammerState& s) {
  Json sched = Json::array();
  for (const auto& step : s.gain_schedule) sched.push_back(Json{{"time_s", step.time_s}, {"gain_db", db_to_json(step.gain_db)}});
  return Json{{"mode", s.mode},
              {"waveform", to_json(s.waveform)},
              {"tuned_band", to_json(s.tuned_band)},
              {"gain_schedule", sched},
              {"sensing", to_json(s.sensing)},
              {"retune_latency_s", s.retune_latency_s},
              {"hold_s", s.hold_s},
              {"enabled", s.enabled}};
}

inline JammerState jammer_from_json(const Json& j) {
  JammerState s;
  if (j.contains("mode")) {
    const auto mode = j["mode"].get<std::string>();
    if (mode != "Proactive" && mode != "Reactive") throw ValidationError("jammer.mode", "unknown mode " + mode);
    s.mode = mode == "Proactive" ? JammerMode::Proactive : JammerMode::Reactive;
  }
  if (j.contains("waveform")) s.waveform = waveform_from_json(j["waveform"]);
  if (j.contains("tuned_band")) s.tuned_band = band_from_json(j["tuned_band"]);
  if (j.contains("gain_schedule")) {
    s.gain_schedule.clear();
    for (const auto& step : j["gain_schedule"])
      s.gain_schedule.push_back({step.at("time_s").get<double>(), db_from_json(step.at("gain_db"))});
  }
  if (j.contains("sensing")) s.sensing = sensing_from_json(j["sensing"]);
  s.retune_latency_s = j.value("retune_latency_s", s.retune_latency_s);
  s.hold_s = j.value("hold_s", s.hold_s);
  s.enabled = j.value("enabled", s.enabled);
  return s;
}

}  // namespace jamemu
