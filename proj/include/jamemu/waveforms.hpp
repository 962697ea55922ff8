#pragma once

#include "jamemu/error.hpp"
#include "jamemu/fft.hpp"
#include "jamemu/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace jamemu {

using Sample = std::complex<double>;

/// Linear gain sentinel: -inf dB mutes a signal.
inline constexpr double kMuteDb = -std::numeric_limits<double>::infinity();

/// Floor applied to every PSD bin so silent frames stay finite.
inline constexpr double kPsdFloorDb = -200.0;

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

inline double linear_to_db(double lin) {
  return std::max(kPsdFloorDb, 10.0 * std::log10(std::max(lin, 0.0)));
}

struct IqBuffer {
  std::vector<Sample> samples;
  double sample_rate_hz = 1.0;
  double center_freq_hz = 0.0;

  std::size_t size() const { return samples.size(); }

  double mean_power() const {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& s : samples) acc += std::norm(s);
    return acc / static_cast<double>(samples.size());
  }

  bool operator==(const IqBuffer&) const = default;
};

enum class WaveformKind { FSK, ASK, MSK, AWGN, BandNoise, CPFSK, CustomFile };

NLOHMANN_JSON_SERIALIZE_ENUM(WaveformKind, {
                                               {WaveformKind::FSK, "FSK"},
                                               {WaveformKind::ASK, "ASK"},
                                               {WaveformKind::MSK, "MSK"},
                                               {WaveformKind::AWGN, "AWGN"},
                                               {WaveformKind::BandNoise, "BandNoise"},
                                               {WaveformKind::CPFSK, "CPFSK"},
                                               {WaveformKind::CustomFile, "CustomFile"},
                                           })

inline std::string_view to_string(WaveformKind kind) {
  switch (kind) {
    case WaveformKind::FSK: return "FSK";
    case WaveformKind::ASK: return "ASK";
    case WaveformKind::MSK: return "MSK";
    case WaveformKind::AWGN: return "AWGN";
    case WaveformKind::BandNoise: return "BandNoise";
    case WaveformKind::CPFSK: return "CPFSK";
    case WaveformKind::CustomFile: return "CustomFile";
  }
  return "?";
}

inline std::optional<WaveformKind> parse_waveform_kind(std::string_view name) {
  for (auto k : {WaveformKind::FSK, WaveformKind::ASK, WaveformKind::MSK, WaveformKind::AWGN,
                 WaveformKind::BandNoise, WaveformKind::CPFSK, WaveformKind::CustomFile}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

inline bool is_constant_envelope(WaveformKind kind) {
  return kind == WaveformKind::FSK || kind == WaveformKind::MSK || kind == WaveformKind::CPFSK;
}

struct WaveformSpec {
  WaveformKind kind = WaveformKind::BandNoise;
  double bandwidth_hz = 156e3;
  double symbol_rate_hz = 50e3;  // unused by AWGN and BandNoise
  double gain_db = 0.0;
  double sample_rate_hz = 1e6;
  double duration_s = 1e-3;
  std::optional<std::filesystem::path> custom_path;

  std::size_t sample_count() const {
    return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  }

  bool operator==(const WaveformSpec&) const = default;
};

inline void validate(const WaveformSpec& spec) {
  if (!(spec.sample_rate_hz > 0.0) || !std::isfinite(spec.sample_rate_hz))
    throw ValidationError("sample_rate_hz", "must be positive");
  if (!(spec.bandwidth_hz > 0.0)) throw ValidationError("bandwidth_hz", "must be positive");
  if (spec.bandwidth_hz > spec.sample_rate_hz)
    throw ValidationError("bandwidth_hz", "exceeds sample rate");
  if (!(spec.duration_s > 0.0) || !std::isfinite(spec.duration_s))
    throw ValidationError("duration_s", "must be positive");
  if (spec.duration_s * spec.sample_rate_hz < 1.0 || spec.sample_count() < 1)
    throw ValidationError("duration_s", "shorter than one sample");
  const bool needs_symbols = spec.kind != WaveformKind::AWGN && spec.kind != WaveformKind::BandNoise &&
                             spec.kind != WaveformKind::CustomFile;
  if (needs_symbols && !(spec.symbol_rate_hz > 0.0))
    throw ValidationError("symbol_rate_hz", "must be positive");
  if (std::isnan(spec.gain_db) || spec.gain_db == std::numeric_limits<double>::infinity())
    throw ValidationError("gain_db", "must be finite or -inf");
  if (spec.kind == WaveformKind::CustomFile && !spec.custom_path)
    throw ValidationError("custom_path", "required for CustomFile");
  if (spec.kind != WaveformKind::CustomFile && spec.custom_path)
    throw ValidationError("custom_path", "only valid for CustomFile");
}

// ---------------------------------------------------------------------------
// Custom IQ files: interleaved little-endian float32 (I, Q) plus a JSON
// sidecar at "<path>.json" with sample_rate_hz and center_freq_hz.

inline std::filesystem::path iq_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

inline void write_iq_file(const std::filesystem::path& path, const IqBuffer& buffer) {
  static_assert(std::endian::native == std::endian::little, "IQ files are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& s : buffer.samples) {
    const float iq[2] = {static_cast<float>(s.real()), static_cast<float>(s.imag())};
    out.write(reinterpret_cast<const char*>(iq), sizeof iq);
  }
  std::ofstream meta(iq_sidecar_path(path));
  if (!meta) throw Error("cannot write sidecar for " + path.string());
  nlohmann::json j{{"schema_version", 1},
                   {"sample_rate_hz", buffer.sample_rate_hz},
                   {"center_freq_hz", buffer.center_freq_hz},
                   {"format", "cf32_le"}};
  meta << j.dump(2) << '\n';
}

inline IqBuffer read_iq_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read IQ file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw Error("IQ file is empty: " + path.string());
  if (bytes.size() % 8 != 0) throw Error("IQ file size is not a multiple of 8 bytes: " + path.string());

  std::ifstream meta_in(iq_sidecar_path(path));
  if (!meta_in) throw Error("missing IQ sidecar " + iq_sidecar_path(path).string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed IQ sidecar: ") + e.what());
  }
  if (!meta.contains("sample_rate_hz") || !meta["sample_rate_hz"].is_number())
    throw Error("IQ sidecar lacks numeric sample_rate_hz");

  IqBuffer buf;
  buf.sample_rate_hz = meta["sample_rate_hz"].get<double>();
  buf.center_freq_hz = meta.value("center_freq_hz", 0.0);
  if (!(buf.sample_rate_hz > 0.0)) throw Error("IQ sidecar sample_rate_hz must be positive");
  buf.samples.resize(bytes.size() / 8);
  for (std::size_t i = 0; i < buf.samples.size(); ++i) {
    float iq[2];
    std::memcpy(iq, bytes.data() + 8 * i, sizeof iq);
    if (!std::isfinite(iq[0]) || !std::isfinite(iq[1]))
      throw Error("IQ file contains a non-finite sample at index " + std::to_string(i));
    buf.samples[i] = {iq[0], iq[1]};
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Generators

/// Continuous-phase binary FSK. Bit 1 sits at +freq_dev_hz, bit 0 at -freq_dev_hz.
inline std::vector<Sample> cpfsk_modulate(std::span<const std::uint8_t> bits, double freq_dev_hz,
                                          double symbol_rate_hz, double sample_rate_hz, double amplitude,
                                          std::size_t n_samples) {
  std::vector<Sample> out(n_samples);
  double phase = 0.0;
  const double step = 2.0 * std::numbers::pi * freq_dev_hz / sample_rate_hz;
  for (std::size_t i = 0; i < n_samples; ++i) {
    out[i] = std::polar(amplitude, phase);
    auto sym = static_cast<std::size_t>(static_cast<double>(i) * symbol_rate_hz / sample_rate_hz);
    sym = std::min(sym, bits.size() - 1);
    phase += bits[sym] ? step : -step;
    phase = std::remainder(phase, 2.0 * std::numbers::pi);
  }
  return out;
}

namespace detail {

inline std::vector<std::uint8_t> random_bits(CounterRng& rng, std::size_t n) {
  std::vector<std::uint8_t> bits(n);
  for (auto& b : bits) b = rng.bit() ? 1 : 0;
  return bits;
}

inline std::size_t symbols_needed(const WaveformSpec& spec, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * spec.symbol_rate_hz / spec.sample_rate_hz)) + 1;
}

inline std::vector<Sample> complex_gaussian(CounterRng& rng, std::size_t n, double power) {
  std::vector<Sample> out(n);
  const double sigma = std::sqrt(power / 2.0);
  for (auto& s : out) {
    const double re = rng.normal();
    const double im = rng.normal();
    s = {sigma * re, sigma * im};
  }
  return out;
}

/// Zero every DFT bin outside |f| <= bandwidth/2, then rescale so expected
/// power stays `power`.
inline std::vector<Sample> band_limited_noise(CounterRng& rng, std::size_t n, double power, double bandwidth_hz,
                                              double sample_rate_hz) {
  auto x = complex_gaussian(rng, n, 1.0);
  fft_inplace(x, FftDirection::Forward);
  std::size_t kept = 0;
  const double half = bandwidth_hz / 2.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double f = (k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n)) *
                     sample_rate_hz / static_cast<double>(n);
    if (std::abs(f) <= half) {
      ++kept;
    } else {
      x[k] = 0.0;
    }
  }
  fft_inplace(x, FftDirection::Inverse);
  const double scale = kept == 0 ? 0.0
                                 : std::sqrt(power * static_cast<double>(n) / static_cast<double>(kept)) /
                                       static_cast<double>(n);
  for (auto& s : x) s *= scale;
  return x;
}

}  // namespace detail

/// Synthesize the baseband waveform described by `spec`. Deterministic in
/// (spec, seed).
inline IqBuffer gen_waveform(const WaveformSpec& spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t n = spec.sample_count();
  const double power = db_to_linear(spec.gain_db);
  const double amplitude = std::sqrt(power);
  CounterRng rng(seed);

  IqBuffer buf;
  buf.sample_rate_hz = spec.sample_rate_hz;

  switch (spec.kind) {
    case WaveformKind::AWGN:
      buf.samples = detail::complex_gaussian(rng, n, power);
      break;
    case WaveformKind::BandNoise:
      buf.samples = detail::band_limited_noise(rng, n, power, spec.bandwidth_hz, spec.sample_rate_hz);
      break;
    case WaveformKind::FSK: {
      auto bits = detail::random_bits(rng, detail::symbols_needed(spec, n));
      buf.samples = cpfsk_modulate(bits, spec.bandwidth_hz / 2.0, spec.symbol_rate_hz, spec.sample_rate_hz,
                                   amplitude, n);
      break;
    }
    case WaveformKind::CPFSK: {
      // h = 0.5 * bandwidth / symbol_rate, deviation = h * symbol_rate / 2.
      auto bits = detail::random_bits(rng, detail::symbols_needed(spec, n));
      buf.samples = cpfsk_modulate(bits, spec.bandwidth_hz / 4.0, spec.symbol_rate_hz, spec.sample_rate_hz,
                                   amplitude, n);
      break;
    }
    case WaveformKind::MSK: {
      auto bits = detail::random_bits(rng, detail::symbols_needed(spec, n));
      buf.samples = cpfsk_modulate(bits, spec.symbol_rate_hz / 4.0, spec.symbol_rate_hz, spec.sample_rate_hz,
                                   amplitude, n);
      break;
    }
    case WaveformKind::ASK: {
      // Two amplitude levels (0.5, 1.0), rescaled so the buffer power is exact.
      auto bits = detail::random_bits(rng, detail::symbols_needed(spec, n));
      buf.samples.resize(n);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        auto sym = static_cast<std::size_t>(static_cast<double>(i) * spec.symbol_rate_hz / spec.sample_rate_hz);
        const double level = bits[std::min(sym, bits.size() - 1)] ? 1.0 : 0.5;
        buf.samples[i] = level;
        acc += level * level;
      }
      const double scale = amplitude / std::sqrt(acc / static_cast<double>(n));
      for (auto& s : buf.samples) s *= scale;
      break;
    }
    case WaveformKind::CustomFile: {
      const IqBuffer file = read_iq_file(*spec.custom_path);
      if (std::abs(file.sample_rate_hz - spec.sample_rate_hz) > 1e-9 * spec.sample_rate_hz)
        throw Error("custom file sample rate " + std::to_string(file.sample_rate_hz) +
                    " does not match requested " + std::to_string(spec.sample_rate_hz));
      const double file_power = file.mean_power();
      const double scale = file_power > 0.0 ? amplitude / std::sqrt(file_power) : 0.0;
      buf.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) buf.samples[i] = file.samples[i % file.size()] * scale;
      buf.center_freq_hz = file.center_freq_hz;
      break;
    }
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Spectra

enum class Window { Rect, Hann };

struct PsdFrame {
  double freq_start_hz = 0.0;
  double freq_step_hz = 1.0;
  std::vector<double> power_db;
  double timestamp_s = 0.0;

  std::size_t size() const { return power_db.size(); }
  double bin_center_hz(std::size_t i) const { return freq_start_hz + freq_step_hz * static_cast<double>(i); }
  double freq_end_hz() const { return freq_start_hz + freq_step_hz * static_cast<double>(power_db.size()); }

  bool operator==(const PsdFrame&) const = default;
};

inline std::vector<double> window_coefficients(Window window, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (window == Window::Hann) {
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return w;
}

/// Averaged periodogram over non-overlapping blocks, fftshifted, in linear
/// power per bin. Bin powers sum to the mean sample power (exactly for rect).
inline std::vector<double> periodogram(const IqBuffer& buffer, std::size_t fft_size, Window window) {
  if (fft_size == 0 || !std::has_single_bit(fft_size))
    throw ValidationError("fft_size", "must be a power of two");
  if (buffer.size() < fft_size) throw ValidationError("buffer", "shorter than fft_size");

  const auto w = window_coefficients(window, fft_size);
  double w_energy = 0.0;
  for (double c : w) w_energy += c * c;

  const std::size_t blocks = buffer.size() / fft_size;
  std::vector<double> acc(fft_size, 0.0);
  std::vector<Sample> block(fft_size);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t i = 0; i < fft_size; ++i) block[i] = buffer.samples[b * fft_size + i] * w[i];
    fft_inplace(block, FftDirection::Forward);
    for (std::size_t k = 0; k < fft_size; ++k) acc[(k + fft_size / 2) % fft_size] += std::norm(block[k]);
  }
  const double norm = static_cast<double>(blocks) * static_cast<double>(fft_size) * w_energy;
  for (auto& v : acc) v /= norm;
  return acc;
}

inline PsdFrame psd(const IqBuffer& buffer, std::size_t fft_size = 1024, Window window = Window::Hann,
                    double timestamp_s = 0.0) {
  const auto lin = periodogram(buffer, fft_size, window);
  PsdFrame frame;
  frame.freq_step_hz = buffer.sample_rate_hz / static_cast<double>(fft_size);
  frame.freq_start_hz = buffer.center_freq_hz - buffer.sample_rate_hz / 2.0;
  frame.timestamp_s = timestamp_s;
  frame.power_db.resize(fft_size);
  std::transform(lin.begin(), lin.end(), frame.power_db.begin(), linear_to_db);
  return frame;
}

inline IqBuffer apply_gain(IqBuffer buffer, double delta_db) {
  const double scale = std::pow(10.0, delta_db / 20.0);
  for (auto& s : buffer.samples) s *= scale;
  return buffer;
}

/// Mix the buffer by `offset_hz` (positive moves energy up in frequency).
inline void frequency_shift(IqBuffer& buffer, double offset_hz) {
  const double step = 2.0 * std::numbers::pi * offset_hz / buffer.sample_rate_hz;
  for (std::size_t i = 0; i < buffer.size(); ++i)
    buffer.samples[i] *= std::polar(1.0, std::remainder(step * static_cast<double>(i), 2.0 * std::numbers::pi));
}

}  // namespace jamemu
