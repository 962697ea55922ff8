// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "jamemu/experiments.hpp"
#include "jamemu/server.hpp"

#include "client.hpp"
#include "service_checks.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

using namespace jamemu;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0.0 && secs >= budget_s) {
    o.pass = false;
    o.detail += fmt::format(" (over the {} s budget)", budget_s);
  }
  if (!o.pass) ++failures;
  fmt::print("{} {} [{:.2f} s] {}\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail);
  std::fflush(stdout);
}

std::string describe(const Verdict& v) {
  std::string out;
  for (const auto& c : v.clauses)
    out += fmt::format("{}{}={:.4g}{}", out.empty() ? "" : ", ", c.name, c.value, c.pass ? "" : " (want " + c.expected + ")");
  return out;
}

Outcome from_verdict(const Verdict& v) { return {v.pass(), describe(v)}; }

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("jamemu_acceptance_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// -- Waveform suite oracles ---------------------------------------------------

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

std::vector<Sample> random_samples(CounterRng& rng, std::size_t n) {
  std::vector<Sample> v(n);
  for (auto& s : v) s = {2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
  return v;
}

Outcome waveform_suite() {
  std::vector<std::string> bad;
  WaveformSpec s;
  s.sample_rate_hz = 1e6;
  s.bandwidth_hz = 100e3;
  s.symbol_rate_hz = 50e3;

  // AWGN power within 1% at 1e6 samples.
  s.kind = WaveformKind::AWGN;
  s.duration_s = 1.0;
  for (double g : {0.0, -10.0, 6.0}) {
    s.gain_db = g;
    const auto buf = gen_waveform(s, 1);
    double acc = 0.0;
    for (const auto& x : buf.samples) acc += std::norm(x);
    const double err = std::abs(acc / static_cast<double>(buf.size()) / std::pow(10.0, g / 10.0) - 1.0);
    if (buf.size() != 1'000'000 || err > 0.01) bad.push_back(fmt::format("awgn power error {:.4f} at {} dB", err, g));
  }

  // Band noise out-of-band rejection by a direct DFT.
  s.kind = WaveformKind::BandNoise;
  s.gain_db = 0.0;
  s.bandwidth_hz = 156e3;
  s.duration_s = 4.096e-3;
  {
    const auto p = dft_power(gen_waveform(s, 3).samples);
    const std::size_t n = p.size();
    double in = 0, out = 0;
    std::size_t in_n = 0, out_n = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double f = (k < n / 2 ? double(k) : double(k) - double(n)) * s.sample_rate_hz / double(n);
      if (std::abs(f) <= s.bandwidth_hz / 2) {
        in += p[k];
        ++in_n;
      } else {
        out += p[k];
        ++out_n;
      }
    }
    const double rej = 10.0 * std::log10((in / in_n) / std::max(out / out_n, 1e-300));
    if (rej < 40.0) bad.push_back(fmt::format("band-noise rejection {:.1f} dB", rej));
  }

  // Constant envelope for the frequency-shift kinds.
  s.bandwidth_hz = 100e3;
  s.duration_s = 0.01;
  for (auto kind : {WaveformKind::FSK, WaveformKind::MSK, WaveformKind::CPFSK}) {
    s.kind = kind;
    const auto buf = gen_waveform(s, 5);
    double lo = INFINITY, hi = 0.0;
    for (const auto& x : buf.samples) {
      lo = std::min(lo, std::abs(x));
      hi = std::max(hi, std::abs(x));
    }
    if ((hi - lo) / hi > 1e-9) bad.push_back(fmt::format("{} envelope ripple {:.3g}", to_string(kind), (hi - lo) / hi));
  }

  // Parseval for the rectangular periodogram.
  s.kind = WaveformKind::AWGN;
  s.gain_db = 4.0;
  s.duration_s = 8.192e-3;
  {
    const auto buf = gen_waveform(s, 21);
    const auto lin = periodogram(buf, 1024, Window::Rect);
    double sum = 0.0, direct = 0.0;
    for (double v : lin) sum += v;
    for (const auto& x : buf.samples) direct += std::norm(x);
    direct /= static_cast<double>(buf.size());
    if (std::abs(sum - direct) / direct > 1e-6) bad.push_back("Parseval mismatch");
  }

  // FIR against brute-force convolution.
  CounterRng rng(stream_key(1, "acceptance-fir", 0));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    IqBuffer x;
    x.samples = random_samples(rng, 64 + rng.next_u64() % 512);
    const FirTaps h{random_samples(rng, 1 + rng.next_u64() % 24)};
    const auto y = apply_fir(x, h).samples;
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Sample acc{};
      for (std::size_t j = 0; j < h.taps.size() && j <= i; ++j) acc += h.taps[j] * x.samples[i - j];
      scale = std::max(scale, std::abs(acc));
      err = std::max(err, std::abs(y[i] - acc));
    }
    worst = std::max(worst, err / scale);
  }
  if (worst > 1e-9) bad.push_back(fmt::format("FIR relative error {:.3g}", worst));

  std::string detail = bad.empty() ? fmt::format("fir worst {:.2g}", worst) : "";
  for (const auto& b : bad) detail += b + "; ";
  return {bad.empty(), detail};
}

// -- Determinism --------------------------------------------------------------

using Runner = std::function<ExperimentResult(const std::optional<fs::path>&, const ExperimentOptions&)>;

std::string compare_dirs(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto other = b / e.path().filename();
    if (!fs::exists(other)) return e.path().filename().string() + " missing in the second run";
    if (slurp(e.path()) != slurp(other)) return e.path().filename().string() + " differs";
    ++files;
  }
  if (files < 5) return "record incomplete";
  return {};
}

Outcome determinism(const Calibration& cal) {
  const std::vector<std::tuple<std::string, Runner, std::string>> experiments = {
      {"fig5", [&](auto dir, auto opt) { return run_fig5(cal, dir, opt); }, "jammed_plateau_mean"},
      {"gain_sweep", [&](auto dir, auto opt) { return run_gain_sweep(cal, dir, opt); }, "dominated_step_count"},
      {"cluster", [&](auto dir, auto opt) { return run_cluster_impact(cal, dir, opt); }, "same_cluster_max_degradation"},
      {"chase", [&](auto dir, auto opt) { return run_fig3_chase(cal, dir, opt); }, "caught_evading_ratio"},
  };
  std::string detail;
  bool ok = true;
  for (const auto& [name, runner, clause] : experiments) {
    const auto a = scratch(name + "_a"), b = scratch(name + "_b");
    runner(a, {});
    runner(b, {});
    const auto diff = compare_dirs(a, b);
    ExperimentOptions silent;
    silent.silent_jammer = true;
    const auto control = runner(std::nullopt, silent);
    const bool control_fails = !control.verdict.clause(clause).pass;
    ok = ok && diff.empty() && control_fails;
    detail += fmt::format("{}: {}, silent control {}; ", name, diff.empty() ? "identical" : diff,
                          control_fails ? "fails" : "PASSES");
  }
  return {ok, detail};
}

// -- Service contracts --------------------------------------------------------

Outcome service_contracts() {
  const auto dir = scratch("service");
  RunManager manager(dir, 8);
  Server server(manager, {"127.0.0.1", 0});
  const auto port = server.start();
  std::string detail;
  int bad = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto err = servicecheck::check_command_sequence(port, seed);
    if (!err.empty()) {
      ++bad;
      if (detail.empty()) detail = fmt::format("sequence {}: {}; ", seed, err);
    }
  }
  detail += fmt::format("{}/50 command sequences exact; ", 50 - bad);
  const auto streams = servicecheck::check_streams(port, dir, 77);
  detail += streams.error.empty() ? fmt::format("{} streamed frames ordered and persisted", streams.frames)
                                  : streams.error;
  return {bad == 0 && streams.error.empty(), detail};
}

}  // namespace

int main() {
  const Calibration cal = default_calibration();

  criterion("fig5_shape", 10.0, [&] { return from_verdict(run_fig5(cal).verdict); });

  criterion("trace_accuracy", 5.0, [&] {
    const auto golden = read_trace_csv(golden_fig5_path());
    const auto r = run_fig5(cal);
    const auto cmp = compare_traces(trace_values(r.trace), trace_values(golden));
    return Outcome{cmp.min >= 75.0 && cmp.mean <= 98.0,
                   fmt::format("min {:.2f} (>= 75), mean {:.2f} (<= 98) over {} points", cmp.min, cmp.mean, cmp.length)};
  });

  criterion("fig6_staircase", 60.0, [&] { return from_verdict(run_gain_sweep(cal).verdict); });
  criterion("fig7_clusters", 60.0, [&] { return from_verdict(run_cluster_impact(cal).verdict); });
  criterion("fig3_chase", 10.0, [&] { return from_verdict(run_fig3_chase(cal).verdict); });
  criterion("waveform_suite", 0.0, waveform_suite);
  criterion("determinism_and_controls", 0.0, [&] { return determinism(cal); });
  criterion("service_contracts", 0.0, service_contracts);

  fmt::print("{}\n", failures == 0 ? "ALL CRITERIA PASS" : fmt::format("{} CRITERIA FAILED", failures));
  return failures == 0 ? 0 : 1;
}
