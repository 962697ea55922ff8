#pragma once

#include "jamemu/error.hpp"
#include "jamemu/waveforms.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace jamemu {

struct Position {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Position&) const = default;
};

inline double distance(Position a, Position b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Log-distance model: ref_loss + 10 * exponent * log10(max(d, min_dist) / ref_dist).
struct PathLossParams {
  double ref_loss_db = 30.0;
  double ref_dist_m = 1.0;
  double exponent = 3.0;
  double min_dist_m = 1.0;

  bool operator==(const PathLossParams&) const = default;
};

inline double path_loss_db(Position tx, Position rx, const PathLossParams& params) {
  const double d = std::max(distance(tx, rx), params.min_dist_m);
  return params.ref_loss_db + 10.0 * params.exponent * std::log10(d / params.ref_dist_m);
}

inline double rx_power_dbm(double tx_power_dbm, double pl_db) { return tx_power_dbm - pl_db; }

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

struct FirTaps {
  std::vector<Sample> taps;

  /// Power gain sum |h|^2 of the channel, in dB.
  double power_gain_db() const {
    double acc = 0.0;
    for (const auto& t : taps) acc += std::norm(t);
    return 10.0 * std::log10(acc);
  }

  bool operator==(const FirTaps&) const = default;
};

/// Flat channel equivalent to a path loss.
inline FirTaps flat_taps(double pl_db) { return FirTaps{{Sample{std::pow(10.0, -pl_db / 20.0), 0.0}}}; }

/// Linear convolution truncated to the input length.
inline IqBuffer apply_fir(IqBuffer buffer, const FirTaps& fir) {
  if (fir.taps.empty()) throw ValidationError("taps", "FIR tap sequence is empty");
  const auto& x = buffer.samples;
  std::vector<Sample> y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    Sample acc{};
    const std::size_t m_max = std::min(fir.taps.size(), n + 1);
    for (std::size_t m = 0; m < m_max; ++m) acc += fir.taps[m] * x[n - m];
    y[n] = acc;
  }
  buffer.samples = std::move(y);
  return buffer;
}

struct Band {
  double center_hz = 0.0;
  double width_hz = 1.0;

  double low_hz() const { return center_hz - width_hz / 2.0; }
  double high_hz() const { return center_hz + width_hz / 2.0; }
  bool contains(double f_hz) const { return f_hz >= low_hz() && f_hz <= high_hz(); }

  bool operator==(const Band&) const = default;
};

/// Fraction of `victim` covered by `other`, in [0, 1].
inline double band_overlap(const Band& victim, const Band& other) {
  const double lo = std::max(victim.low_hz(), other.low_hz());
  const double hi = std::min(victim.high_hz(), other.high_hz());
  if (hi <= lo || victim.width_hz <= 0.0) return 0.0;
  return std::min(1.0, (hi - lo) / victim.width_hz);
}

}  // namespace jamemu
