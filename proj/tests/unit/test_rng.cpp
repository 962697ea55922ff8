#include "jamemu/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

using namespace jamemu;

TEST_CASE("counter stream matches the published SplitMix64 sequence", "[rng]") {
  // Reference outputs of SplitMix64 seeded with 0.
  CounterRng rng(0);
  CHECK(rng.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(rng.next_u64() == 0x06c45d188009454fULL);
  CHECK(rng.counter() == 3);
}

TEST_CASE("streams are keyed by seed, node and buffer", "[rng]") {
  std::set<std::uint64_t> keys;
  for (std::uint64_t seed : {1ULL, 2ULL})
    for (const char* node : {"bs0", "ue0_0", "jammer"})
      for (std::uint64_t idx : {0ULL, 1ULL, 1000ULL}) keys.insert(stream_key(seed, node, idx));
  CHECK(keys.size() == 18);
  CHECK(stream_key(7, "bs3", 9) == stream_key(7, "bs3", 9));
}

TEST_CASE("uniform and normal draws have the right moments", "[rng]") {
  CounterRng rng(stream_key(42, "moments", 0));
  constexpr int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  double umin = 1, umax = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(umin >= 0.0);
  CHECK(umax < 1.0);
  CHECK(su / n == Catch::Approx(0.5).margin(0.005));
  CHECK(sn / n == Catch::Approx(0.0).margin(0.01));
  CHECK(sn2 / n == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("identical keys replay identical sequences", "[rng]") {
  CounterRng a(stream_key(3, "x", 4));
  CounterRng b(stream_key(3, "x", 4));
  for (int i = 0; i < 1000; ++i) REQUIRE(a.normal() == b.normal());
}
