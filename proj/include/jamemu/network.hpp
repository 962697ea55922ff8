#pragma once

#include "jamemu/channel.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jamemu {

inline constexpr int kDefaultSubbands = 50;
inline constexpr double kDefaultCapBpsPerHz = 6.0;

struct Link {
  std::string id;
  std::string tx_node;
  std::string rx_node;
  Band band;
  int n_subbands = kDefaultSubbands;
  double tx_power_dbm = 0.0;

  bool operator==(const Link&) const = default;
};

/// An interfering emission as seen by a receiver. `rx_power_dbm` is the level
/// it puts into a fully covered victim subband; partial coverage scales it by
/// the covered fraction of that subband.
struct Interferer {
  double rx_power_dbm = 0.0;
  Band band;
};

struct SinrResult {
  std::vector<double> per_subband_db;
  double effective_db = 0.0;
};

inline Band subband(const Band& band, int n_subbands, int index) {
  const double w = band.width_hz / n_subbands;
  return Band{band.low_hz() + w * (index + 0.5), w};
}

/// Per-subband and effective SINR of `link` given the received signal power.
/// The signal is split evenly across subbands; noise scales with subband width.
inline SinrResult sinr_db(const Link& link, double signal_rx_dbm, std::span<const Interferer> interferers,
                          double noise_floor_dbm_per_hz) {
  const int n = std::max(1, link.n_subbands);
  const double s_total = dbm_to_mw(signal_rx_dbm);
  const double s_sub = s_total / n;
  const double n_sub = dbm_to_mw(noise_floor_dbm_per_hz) * link.band.width_hz / n;

  SinrResult out;
  out.per_subband_db.resize(static_cast<std::size_t>(n));
  double sum_s = 0.0;
  double sum_den = 0.0;
  for (int s = 0; s < n; ++s) {
    const Band sb = subband(link.band, n, s);
    double den = n_sub;
    for (const auto& k : interferers) {
      const double ov = band_overlap(sb, k.band);
      if (ov > 0.0) den += dbm_to_mw(k.rx_power_dbm) * ov;
    }
    out.per_subband_db[static_cast<std::size_t>(s)] = 10.0 * std::log10(s_sub / den);
    sum_s += s_sub;
    sum_den += den;
  }
  out.effective_db = 10.0 * std::log10(sum_s / sum_den);
  return out;
}

/// Shannon rate per subband, capped at cap_bps_per_hz, summed over the band.
inline double throughput_bps(std::span<const double> per_subband_sinr_db, const Band& band, int n_subbands,
                             double cap_bps_per_hz = kDefaultCapBpsPerHz) {
  const double w = band.width_hz / std::max(1, n_subbands);
  double total = 0.0;
  for (double db : per_subband_sinr_db) {
    const double lin = std::pow(10.0, db / 10.0);
    total += w * std::min(std::log2(1.0 + lin), cap_bps_per_hz);
  }
  return total;
}

/// Attach/detach automaton with hysteresis and dwell.
struct LinkStatusState {
  bool attached = true;
  std::optional<double> below_since_s;
  std::optional<double> above_since_s;
  double detach_thresh_db = 0.0;
  double attach_thresh_db = 3.0;
  double dwell_s = 1.0;

  bool operator==(const LinkStatusState&) const = default;
};

inline LinkStatusState update_link_status(LinkStatusState state, double sinr, double time_s) {
  // Tolerance for tick times accumulated in floating point.
  constexpr double kEps = 1e-9;
  if (state.attached) {
    state.above_since_s.reset();
    if (sinr < state.detach_thresh_db) {
      if (!state.below_since_s) state.below_since_s = time_s;
      if (time_s - *state.below_since_s + kEps >= state.dwell_s) {
        state.attached = false;
        state.below_since_s.reset();
      }
    } else {
      state.below_since_s.reset();
    }
  } else {
    state.below_since_s.reset();
    if (sinr > state.attach_thresh_db) {
      if (!state.above_since_s) state.above_since_s = time_s;
      if (time_s - *state.above_since_s + kEps >= state.dwell_s) {
        state.attached = true;
        state.above_since_s.reset();
      }
    } else {
      state.above_since_s.reset();
    }
  }
  return state;
}

struct LinkMetrics {
  std::uint64_t tick = 0;
  double time_s = 0.0;
  std::uint32_t link_index = 0;
  double sinr_db = 0.0;
  double sinr_pct = 0.0;
  double throughput_bps = 0.0;
  double throughput_pct = 0.0;
  bool link_status = true;

  bool operator==(const LinkMetrics&) const = default;
};

/// 100 * sinr / baseline, clamped to [0, 100].
inline double sinr_percent(double sinr, double baseline_sinr_db) {
  if (!(baseline_sinr_db > 0.0)) return sinr >= baseline_sinr_db ? 100.0 : 0.0;
  return std::clamp(100.0 * sinr / baseline_sinr_db, 0.0, 100.0);
}

inline double throughput_percent(double throughput, double baseline_bps) {
  if (!(baseline_bps > 0.0)) return 0.0;
  return 100.0 * throughput / baseline_bps;
}

}  // namespace jamemu
