#include "jamemu/channel.hpp"
#include "jamemu/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace jamemu;

namespace {

std::vector<Sample> random_samples(CounterRng& rng, std::size_t n) {
  std::vector<Sample> out(n);
  for (auto& s : out) s = {rng.normal(), rng.normal()};
  return out;
}

// Full convolution, then keep the first len(x) outputs.
std::vector<Sample> brute_convolve(const std::vector<Sample>& x, const std::vector<Sample>& h) {
  std::vector<Sample> full(x.size() + h.size() - 1);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) full[i + j] += x[i] * h[j];
  full.resize(x.size());
  return full;
}

double max_rel_error(const std::vector<Sample>& a, const std::vector<Sample>& b) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return scale == 0.0 ? err : err / scale;
}

}  // namespace

TEST_CASE("path loss follows the log-distance form", "[channel]") {
  const PathLossParams p;  // 30 dB at 1 m, exponent 3, clamp 1 m
  CHECK(path_loss_db({0, 0}, {1, 0}, p) == Catch::Approx(30.0));
  CHECK(path_loss_db({0, 0}, {6, 8}, p) == Catch::Approx(60.0));
  CHECK(path_loss_db({3, 3}, {3, 3}, p) == Catch::Approx(30.0));
  CHECK(path_loss_db({0, 0}, {0.2, 0}, p) == Catch::Approx(30.0));
}

TEST_CASE("doubling the distance costs about 9 dB at exponent 3", "[channel]") {
  const PathLossParams p;
  const double d = GENERATE(5.0, 37.0, 410.0);
  CHECK(path_loss_db({0, 0}, {2 * d, 0}, p) - path_loss_db({0, 0}, {d, 0}, p) ==
        Catch::Approx(30.0 * std::log10(2.0)));
}

TEST_CASE("path loss is monotone and invariant under rigid motion", "[channel]") {
  const PathLossParams p{28.0, 1.0, 3.5, 2.0};
  CounterRng rng(stream_key(5, "pl", 0));
  double prev = -INFINITY;
  for (double d = 2.0; d < 1000.0; d *= 1.3) {
    const double pl = path_loss_db({0, 0}, {d, 0}, p);
    CHECK(pl > prev);
    prev = pl;
  }
  for (int i = 0; i < 100; ++i) {
    const Position a{100 * rng.normal(), 100 * rng.normal()};
    const Position b{100 * rng.normal(), 100 * rng.normal()};
    const double th = 2 * std::numbers::pi * rng.uniform();
    const Position shift{50 * rng.normal(), 50 * rng.normal()};
    auto move = [&](Position q) {
      return Position{q.x * std::cos(th) - q.y * std::sin(th) + shift.x, q.x * std::sin(th) + q.y * std::cos(th) + shift.y};
    };
    REQUIRE(path_loss_db(move(a), move(b), p) == Catch::Approx(path_loss_db(a, b, p)).epsilon(1e-12));
  }
}

TEST_CASE("received power is transmit power minus loss", "[channel]") {
  CHECK(rx_power_dbm(23, 90) == -67);
  CHECK(rx_power_dbm(0, 0) == 0);
  CHECK(rx_power_dbm(30, 120) == -90);
}

TEST_CASE("unit and delay taps", "[channel]") {
  IqBuffer buf;
  buf.samples = {{1, 2}, {3, 4}, {5, 6}};
  CHECK(apply_fir(buf, FirTaps{{Sample{1, 0}}}).samples == buf.samples);
  const auto delayed = apply_fir(buf, FirTaps{{Sample{0, 0}, Sample{1, 0}}});
  REQUIRE(delayed.size() == 3);
  CHECK(delayed.samples[0] == Sample{});
  CHECK(delayed.samples[1] == buf.samples[0]);
  CHECK(delayed.samples[2] == buf.samples[1]);
  CHECK_THROWS_AS(apply_fir(buf, FirTaps{}), ValidationError);
}

TEST_CASE("FIR output matches brute-force convolution", "[channel]") {
  CounterRng rng(stream_key(1, "fir", 0));
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t taps = 1 + rng.next_u64() % 24;
    const std::size_t len = 64 + rng.next_u64() % 512;
    IqBuffer x;
    x.samples = random_samples(rng, len);
    const FirTaps h{random_samples(rng, taps)};
    REQUIRE(max_rel_error(apply_fir(x, h).samples, brute_convolve(x.samples, h.taps)) <= 1e-9);
  }
  IqBuffer x;
  x.samples = random_samples(rng, 4096);
  const FirTaps h{random_samples(rng, 16)};
  CHECK(max_rel_error(apply_fir(x, h).samples, brute_convolve(x.samples, h.taps)) <= 1e-9);
}

TEST_CASE("FIR is linear", "[channel]") {
  CounterRng rng(stream_key(2, "fir", 0));
  for (int trial = 0; trial < 20; ++trial) {
    IqBuffer x, y, mix;
    x.samples = random_samples(rng, 300);
    y.samples = random_samples(rng, 300);
    const Sample a{rng.normal(), rng.normal()}, b{rng.normal(), rng.normal()};
    mix.samples.resize(300);
    for (std::size_t i = 0; i < 300; ++i) mix.samples[i] = a * x.samples[i] + b * y.samples[i];
    const FirTaps h{random_samples(rng, 9)};
    const auto fx = apply_fir(x, h), fy = apply_fir(y, h), fm = apply_fir(mix, h);
    std::vector<Sample> expect(300);
    for (std::size_t i = 0; i < 300; ++i) expect[i] = a * fx.samples[i] + b * fy.samples[i];
    REQUIRE(max_rel_error(fm.samples, expect) <= 1e-9);
  }
}

TEST_CASE("flat taps carry the path loss as power gain", "[channel]") {
  CHECK(flat_taps(93.5).power_gain_db() == Catch::Approx(-93.5));
}

TEST_CASE("band overlap", "[channel]") {
  const Band victim{1020e6, 10e6};
  CHECK(band_overlap(victim, victim) == 1.0);
  CHECK(band_overlap(victim, Band{1040e6, 10e6}) == 0.0);
  CHECK(band_overlap(victim, Band{1021e6, 156e3}) == Catch::Approx(156e3 / 10e6));
  CHECK(band_overlap(victim, Band{1025e6, 10e6}) == Catch::Approx(0.5));
}

TEST_CASE("band overlap satisfies the shared-width identity", "[channel]") {
  CounterRng rng(stream_key(3, "overlap", 0));
  for (int i = 0; i < 200; ++i) {
    const Band a{1e9 + 5e6 * rng.normal(), 1e5 + 1e7 * rng.uniform()};
    const Band b{1e9 + 5e6 * rng.normal(), 1e5 + 1e7 * rng.uniform()};
    REQUIRE(band_overlap(a, b) * a.width_hz == Catch::Approx(band_overlap(b, a) * b.width_hz).margin(1e-6));
    REQUIRE(band_overlap(a, b) >= 0.0);
    REQUIRE(band_overlap(a, b) <= 1.0);
  }
}
