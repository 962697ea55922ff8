#include "jamemu/waveforms.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace jamemu;
namespace fs = std::filesystem;

namespace {

WaveformSpec make_spec(WaveformKind kind, double gain_db, double duration_s) {
  WaveformSpec s;
  s.kind = kind;
  s.bandwidth_hz = 100e3;
  s.symbol_rate_hz = 50e3;
  s.gain_db = gain_db;
  s.sample_rate_hz = 1e6;
  s.duration_s = duration_s;
  return s;
}

// Naive DFT; independent of the FFT backend.
std::vector<double> dft_power(const std::vector<Sample>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Sample acc{};
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((k * i) % n) / static_cast<double>(n));
    out[k] = std::norm(acc);
  }
  return out;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("jamemu_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("muted AWGN is all zeros", "[waveforms]") {
  const auto buf = gen_waveform(make_spec(WaveformKind::AWGN, kMuteDb, 1e-3), 1);
  REQUIRE(buf.size() == 1000);
  CHECK(std::all_of(buf.samples.begin(), buf.samples.end(), [](Sample s) { return s == Sample{}; }));
}

TEST_CASE("sample count is duration times rate", "[waveforms]") {
  for (auto kind : {WaveformKind::FSK, WaveformKind::ASK, WaveformKind::MSK, WaveformKind::AWGN,
                    WaveformKind::BandNoise, WaveformKind::CPFSK}) {
    const auto buf = gen_waveform(make_spec(kind, 0.0, 2.5e-3), 9);
    CHECK(buf.size() == 2500);
    CHECK(buf.sample_rate_hz == 1e6);
    CHECK(std::all_of(buf.samples.begin(), buf.samples.end(),
                      [](Sample s) { return std::isfinite(s.real()) && std::isfinite(s.imag()); }));
  }
}

TEST_CASE("power contract holds for every kind at 1e6 samples", "[waveforms]") {
  const double gain_db = GENERATE(0.0, -13.0, 7.5);
  for (auto kind : {WaveformKind::FSK, WaveformKind::ASK, WaveformKind::MSK, WaveformKind::AWGN,
                    WaveformKind::BandNoise, WaveformKind::CPFSK}) {
    const auto buf = gen_waveform(make_spec(kind, gain_db, 1.0), 11);
    REQUIRE(buf.size() == 1'000'000);
    double acc = 0.0;
    for (const auto& s : buf.samples) acc += s.real() * s.real() + s.imag() * s.imag();
    INFO(to_string(kind) << " at " << gain_db << " dB");
    CHECK(acc / 1e6 == Catch::Approx(std::pow(10.0, gain_db / 10.0)).epsilon(0.01));
  }
}

TEST_CASE("constant envelope holds for FSK, MSK and CPFSK only", "[waveforms]") {
  for (auto kind : {WaveformKind::FSK, WaveformKind::ASK, WaveformKind::MSK, WaveformKind::AWGN,
                    WaveformKind::BandNoise, WaveformKind::CPFSK}) {
    const auto buf = gen_waveform(make_spec(kind, 3.0, 0.01), 5);
    double lo = INFINITY, hi = 0.0;
    for (const auto& s : buf.samples) {
      lo = std::min(lo, std::abs(s));
      hi = std::max(hi, std::abs(s));
    }
    INFO(to_string(kind));
    CHECK(((hi - lo) / hi <= 1e-9) == is_constant_envelope(kind));
  }
}

TEST_CASE("FSK with a constant symbol stream peaks at the deviation", "[waveforms]") {
  const std::vector<std::uint8_t> ones(64, 1);
  IqBuffer buf;
  buf.sample_rate_hz = 1e6;
  buf.samples = cpfsk_modulate(ones, 50e3, 1e3, 1e6, 1.0, 8192);
  const auto frame = psd(buf, 1024, Window::Hann);
  const auto peak = static_cast<std::size_t>(
      std::max_element(frame.power_db.begin(), frame.power_db.end()) - frame.power_db.begin());
  CHECK(std::abs(frame.bin_center_hz(peak) - 50e3) <= frame.freq_step_hz);
}

TEST_CASE("band noise rejects at least 40 dB outside its band", "[waveforms]") {
  WaveformSpec s = make_spec(WaveformKind::BandNoise, 0.0, 4.096e-3);
  s.bandwidth_hz = 156e3;
  const auto buf = gen_waveform(s, 3);
  const auto p = dft_power(buf.samples);
  const std::size_t n = p.size();
  double in_sum = 0, out_sum = 0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double f = (k < n / 2 ? double(k) : double(k) - double(n)) * s.sample_rate_hz / double(n);
    if (std::abs(f) <= s.bandwidth_hz / 2) {
      in_sum += p[k];
      ++in_n;
    } else {
      out_sum += p[k];
      ++out_n;
    }
  }
  const double rejection_db = 10.0 * std::log10((in_sum / in_n) / std::max(out_sum / out_n, 1e-300));
  CHECK(rejection_db >= 40.0);
}

TEST_CASE("generation is deterministic in spec and seed", "[waveforms]") {
  for (auto kind : {WaveformKind::FSK, WaveformKind::ASK, WaveformKind::AWGN, WaveformKind::BandNoise}) {
    const auto spec = make_spec(kind, 0.0, 2e-3);
    CHECK(gen_waveform(spec, 17) == gen_waveform(spec, 17));
    CHECK_FALSE(gen_waveform(spec, 17) == gen_waveform(spec, 18));
  }
}

TEST_CASE("invalid specs are rejected", "[waveforms]") {
  auto s = make_spec(WaveformKind::AWGN, 0.0, 1e-3);
  s.bandwidth_hz = 2e6;
  CHECK_THROWS_AS(gen_waveform(s, 1), ValidationError);
  s = make_spec(WaveformKind::AWGN, 0.0, 0.0);
  CHECK_THROWS_AS(gen_waveform(s, 1), ValidationError);
  s = make_spec(WaveformKind::AWGN, 0.0, 1e-9);
  CHECK_THROWS_AS(gen_waveform(s, 1), ValidationError);
  s = make_spec(WaveformKind::CustomFile, 0.0, 1e-3);
  CHECK_THROWS_AS(gen_waveform(s, 1), ValidationError);
}

TEST_CASE("silent buffer maps to the floor clamp", "[waveforms][psd]") {
  IqBuffer buf;
  buf.sample_rate_hz = 1e6;
  buf.samples.assign(2048, Sample{});
  const auto frame = psd(buf, 1024, Window::Rect);
  REQUIRE(frame.size() == 1024);
  CHECK(std::all_of(frame.power_db.begin(), frame.power_db.end(), [](double v) { return v == kPsdFloorDb; }));
}

TEST_CASE("bin-centred tone lands in a single bin", "[waveforms][psd]") {
  constexpr std::size_t n = 1024;
  const int k = 37;
  IqBuffer buf;
  buf.sample_rate_hz = 1e6;
  for (std::size_t i = 0; i < 4 * n; ++i)
    buf.samples.push_back(std::polar(1.0, 2.0 * std::numbers::pi * k * static_cast<double>(i) / n));
  const auto lin = periodogram(buf, n, Window::Rect);
  const double total = std::accumulate(lin.begin(), lin.end(), 0.0);
  const auto peak = static_cast<std::size_t>(std::max_element(lin.begin(), lin.end()) - lin.begin());
  CHECK(peak == n / 2 + k);
  CHECK(lin[peak] / total >= 0.99);
  const auto frame = psd(buf, n, Window::Rect);
  CHECK(frame.bin_center_hz(peak) == Catch::Approx(k * 1e6 / n));
}

TEST_CASE("rect periodogram obeys Parseval", "[waveforms][psd]") {
  const auto buf = gen_waveform(make_spec(WaveformKind::AWGN, 4.0, 8.192e-3), 21);
  const auto lin = periodogram(buf, 1024, Window::Rect);
  const double sum = std::accumulate(lin.begin(), lin.end(), 0.0);
  double direct = 0.0;
  for (const auto& s : buf.samples) direct += std::norm(s);
  direct /= static_cast<double>(buf.size());
  CHECK(std::abs(sum - direct) / direct <= 1e-6);
}

TEST_CASE("psd rejects short buffers and odd sizes", "[waveforms][psd]") {
  const auto buf = gen_waveform(make_spec(WaveformKind::AWGN, 0.0, 5e-4), 1);
  CHECK_THROWS_AS(psd(buf, 1024), ValidationError);
  CHECK_THROWS_AS(psd(buf, 100), ValidationError);
}

TEST_CASE("apply_gain scales amplitudes", "[waveforms]") {
  const auto buf = gen_waveform(make_spec(WaveformKind::ASK, 0.0, 1e-3), 2);
  CHECK(apply_gain(buf, 0.0) == buf);
  const auto up = apply_gain(buf, 20.0);
  REQUIRE(up.size() == buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) CHECK(std::abs(up.samples[i] - 10.0 * buf.samples[i]) <= 1e-12);
  const auto muted = apply_gain(buf, kMuteDb);
  CHECK(muted.mean_power() == 0.0);
}

TEST_CASE("psd after a gain shifts every bin by the gain", "[waveforms][psd]") {
  const auto buf = gen_waveform(make_spec(WaveformKind::BandNoise, 0.0, 4.096e-3), 8);
  const double delta = GENERATE(-17.0, 6.0, 30.0);
  const auto a = psd(buf, 1024, Window::Rect);
  const auto b = psd(apply_gain(buf, delta), 1024, Window::Rect);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.power_db[i] + delta <= kPsdFloorDb + 1.0) continue;
    REQUIRE(b.power_db[i] - a.power_db[i] == Catch::Approx(delta).margin(1e-9));
  }
}

TEST_CASE("custom IQ files round-trip and are rescaled to the requested gain", "[waveforms]") {
  const auto dir = scratch_dir("custom_iq");
  IqBuffer src;
  src.sample_rate_hz = 1e6;
  src.center_freq_hz = 2.4e9;
  for (int i = 0; i < 500; ++i) src.samples.emplace_back(0.25 * std::cos(i * 0.1), -0.5 * std::sin(i * 0.03));
  write_iq_file(dir / "tone.iq", src);
  const auto back = read_iq_file(dir / "tone.iq");
  REQUIRE(back.size() == src.size());
  CHECK(back.center_freq_hz == 2.4e9);
  for (std::size_t i = 0; i < src.size(); ++i)
    CHECK(std::abs(back.samples[i] - src.samples[i]) <= 1e-7);

  auto spec = make_spec(WaveformKind::CustomFile, -3.0, 1.2e-3);
  spec.custom_path = dir / "tone.iq";
  const auto buf = gen_waveform(spec, 1);
  CHECK(buf.size() == 1200);
  CHECK(buf.mean_power() == Catch::Approx(std::pow(10.0, -0.3)).epsilon(0.02));
  CHECK(buf.samples[500] == buf.samples[0]);
}

TEST_CASE("malformed custom files are reported", "[waveforms]") {
  const auto dir = scratch_dir("bad_iq");
  auto spec = make_spec(WaveformKind::CustomFile, 0.0, 1e-3);
  spec.custom_path = dir / "missing.iq";
  CHECK_THROWS_AS(gen_waveform(spec, 1), Error);

  std::ofstream(dir / "odd.iq", std::ios::binary) << "abc";
  std::ofstream(dir / "odd.iq.json") << R"({"sample_rate_hz": 1e6})";
  spec.custom_path = dir / "odd.iq";
  CHECK_THROWS_AS(gen_waveform(spec, 1), Error);

  IqBuffer src;
  src.sample_rate_hz = 2e6;
  src.samples.assign(16, Sample{1.0, 0.0});
  write_iq_file(dir / "rate.iq", src);
  spec.custom_path = dir / "rate.iq";
  CHECK_THROWS_AS(gen_waveform(spec, 1), Error);
}
