#pragma once

#include "jamemu/channel.hpp"
#include "jamemu/error.hpp"
#include "jamemu/waveforms.hpp"

#include <algorithm>
#include <bit>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace jamemu {

enum class JammerMode { Proactive, Reactive };

NLOHMANN_JSON_SERIALIZE_ENUM(JammerMode, {
                                             {JammerMode::Proactive, "Proactive"},
                                             {JammerMode::Reactive, "Reactive"},
                                         })

struct GainStep {
  double time_s = 0.0;
  double gain_db = 0.0;

  bool operator==(const GainStep&) const = default;
};

using GainSchedule = std::vector<GainStep>;

/// Gain of the latest step at or before `time_s`; the first step's gain before it.
inline double gain_at(std::span<const GainStep> schedule, double time_s) {
  if (schedule.empty()) throw ValidationError("gain_schedule", "schedule is empty");
  auto it = std::upper_bound(schedule.begin(), schedule.end(), time_s,
                             [](double t, const GainStep& s) { return t < s.time_s; });
  if (it == schedule.begin()) return schedule.front().gain_db;
  return std::prev(it)->gain_db;
}

/// One step per level, each lasting `step_s`, starting at t = 0.
inline GainSchedule stepped_schedule(std::span<const double> levels_db, double step_s) {
  GainSchedule out;
  for (std::size_t i = 0; i < levels_db.size(); ++i) out.push_back({step_s * static_cast<double>(i), levels_db[i]});
  return out;
}

struct SensingConfig {
  Band monitor_band{1020e6, 10e6};
  int fft_size = 1024;
  double threshold_db_above_floor = 10.0;
  /// Per-bin noise level (dBm). Left empty, the engine derives it from the
  /// scenario noise density and the bin width.
  std::optional<double> noise_floor_db;
  int min_detections = 1;

  bool operator==(const SensingConfig&) const = default;
};

inline void validate(const SensingConfig& cfg) {
  if (cfg.fft_size <= 0 || !std::has_single_bit(static_cast<unsigned>(cfg.fft_size)))
    throw ValidationError("sensing.fft_size", "must be a power of two");
  if (!(cfg.threshold_db_above_floor > 0.0))
    throw ValidationError("sensing.threshold_db_above_floor", "must be positive");
  if (cfg.min_detections < 1) throw ValidationError("sensing.min_detections", "must be >= 1");
  if (!(cfg.monitor_band.width_hz > 0.0)) throw ValidationError("sensing.monitor_band", "zero width");
}

struct Detection {
  bool present = false;
  double peak_freq_hz = 0.0;
  double peak_power_db = kPsdFloorDb;

  bool operator==(const Detection&) const = default;
};

/// Energy detection over the bins of `frame` whose centers fall inside the
/// monitor band. Ties for the maximum resolve to the middle of the run of
/// equal bins, so a flat-topped emission reports its center.
inline Detection sense(const PsdFrame& frame, const SensingConfig& cfg, double noise_floor_db) {
  const Band& band = cfg.monitor_band;
  // Frames may stop up to one bin short of either band edge.
  if (frame.power_db.empty() || frame.freq_start_hz - frame.freq_step_hz > band.low_hz() + 1e-6 ||
      frame.freq_end_hz() < band.high_hz() - 1e-6)
    throw ValidationError("frame", "PSD frame does not cover the monitor band");

  std::size_t best = frame.size();
  std::size_t run_end = frame.size();
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (!band.contains(frame.bin_center_hz(i))) continue;
    if (best == frame.size() || frame.power_db[i] > frame.power_db[best]) {
      best = i;
      run_end = i;
    } else if (frame.power_db[i] == frame.power_db[best] && run_end + 1 == i) {
      run_end = i;
    }
  }
  Detection d;
  if (best == frame.size()) return d;
  const std::size_t mid = best + (run_end - best) / 2;
  d.peak_power_db = frame.power_db[best];
  d.peak_freq_hz = frame.bin_center_hz(mid);
  d.present = d.peak_power_db > noise_floor_db + cfg.threshold_db_above_floor;
  return d;
}

inline Detection sense(const PsdFrame& frame, const SensingConfig& cfg) {
  if (!cfg.noise_floor_db) throw ValidationError("sensing.noise_floor_db", "not set");
  return sense(frame, cfg, *cfg.noise_floor_db);
}

struct PendingRetune {
  Band target;
  double due_s = 0.0;

  bool operator==(const PendingRetune&) const = default;
};

struct JammerState {
  JammerMode mode = JammerMode::Proactive;
  WaveformSpec waveform;
  Band tuned_band{1020e6, 156e3};
  GainSchedule gain_schedule{{0.0, 0.0}};
  SensingConfig sensing;
  double retune_latency_s = 0.02;
  double hold_s = 0.05;
  /// Operator switch (JammerOn / JammerOff).
  bool enabled = true;

  // Dynamic state.
  bool transmitting = false;
  std::optional<PendingRetune> pending_retune;
  std::optional<double> last_detection_s;
  int consecutive_detections = 0;

  bool operator==(const JammerState&) const = default;
};

inline void validate(const JammerState& state) {
  if (state.gain_schedule.empty()) throw ValidationError("gain_schedule", "schedule is empty");
  for (std::size_t i = 1; i < state.gain_schedule.size(); ++i) {
    if (!(state.gain_schedule[i].time_s > state.gain_schedule[i - 1].time_s))
      throw ValidationError("gain_schedule", "times must be strictly increasing");
  }
  if (!(state.tuned_band.width_hz > 0.0)) throw ValidationError("tuned_band", "zero width");
  if (state.retune_latency_s < 0.0) throw ValidationError("retune_latency_s", "must be >= 0");
  if (state.hold_s < 0.0) throw ValidationError("hold_s", "must be >= 0");
  validate(state.sensing);
}

struct TxDecision {
  bool on = false;
  Band band;
  double gain_db = kMuteDb;

  bool operator==(const TxDecision&) const = default;
};

/// Set the gain from `time_s` onward, dropping any later scheduled steps.
inline void override_gain(JammerState& state, double time_s, double gain_db) {
  auto& s = state.gain_schedule;
  s.erase(std::remove_if(s.begin(), s.end(), [&](const GainStep& g) { return g.time_s >= time_s; }), s.end());
  s.push_back({time_s, gain_db});
}

/// Advance the jammer to `time_s` given the latest detection.
inline std::pair<JammerState, TxDecision> jammer_step(JammerState state, const Detection& detection,
                                                      double time_s) {
  constexpr double kEps = 1e-9;
  auto apply_due_retune = [&] {
    if (state.pending_retune && time_s + kEps >= state.pending_retune->due_s) {
      state.tuned_band = state.pending_retune->target;
      state.pending_retune.reset();
    }
  };
  apply_due_retune();

  TxDecision decision;
  if (state.mode == JammerMode::Reactive) {
    if (detection.present) {
      ++state.consecutive_detections;
      const bool confirmed = state.consecutive_detections >= state.sensing.min_detections;
      if (confirmed) state.last_detection_s = time_s;
      const bool outside_tuned = !state.tuned_band.contains(detection.peak_freq_hz);
      const bool outside_pending =
          !state.pending_retune || !state.pending_retune->target.contains(detection.peak_freq_hz);
      if (confirmed && outside_tuned && outside_pending) {
        state.pending_retune =
            PendingRetune{Band{detection.peak_freq_hz, state.tuned_band.width_hz}, time_s + state.retune_latency_s};
        apply_due_retune();
      }
    } else {
      state.consecutive_detections = 0;
    }
  }

  bool on = state.enabled;
  if (on && state.mode == JammerMode::Reactive)
    on = state.last_detection_s && time_s - *state.last_detection_s <= state.hold_s + kEps;

  state.transmitting = on;
  if (on) {
    decision.on = true;
    decision.band = state.tuned_band;
    decision.gain_db = gain_at(state.gain_schedule, time_s);
  }
  return {std::move(state), decision};
}

}  // namespace jamemu
