#include "jamemu/server.hpp"

#include "client.hpp"
#include "service_checks.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <atomic>

using namespace jamemu;
using testclient::get;
using testclient::Json;
using testclient::post;
using testclient::request;
namespace http = testclient::http;

namespace {

struct Fixture {
  fs::path dir;
  RunManager manager;
  Server server;
  unsigned short port;

  explicit Fixture(std::size_t capacity = 4)
      : dir(scratch_dir()), manager(dir, capacity), server(manager, {"127.0.0.1", 0}), port(server.start()) {}

  static fs::path scratch_dir() {
    static std::atomic<int> n{0};
    auto d = fs::temp_directory_path() / ("jamemu_service_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(d);
    return d;
  }

  std::string start(double duration_s, double factor, std::uint64_t seed = 5) {
    const auto r = post(port, "/runs", servicecheck::live_run_doc(seed, duration_s, factor));
    REQUIRE(r.status == 201);
    return r.json()["run_id"];
  }
};

}  // namespace

TEST_CASE("starting a run returns a handle", "[service]") {
  Fixture f;
  const auto r = post(f.port, "/runs", servicecheck::live_run_doc(1, 0.2, 0.0));
  REQUIRE(r.status == 201);
  const auto h = r.json();
  for (const char* key : {"schema_version", "run_id", "state", "started_at", "config_hash", "config_ref"})
    CHECK(h.contains(key));
  const std::string id = h["run_id"];
  CHECK(servicecheck::wait_finished(f.port, id)["state"] == "Finished");
  const auto list = get(f.port, "/runs").json();
  REQUIRE(list["runs"].size() == 1);
  CHECK(list["runs"][0]["run_id"] == id);
  CHECK(f.start(0.1, 0.0) != id);
}

TEST_CASE("invalid configurations are rejected with the offending field", "[service]") {
  Fixture f;
  auto doc = servicecheck::live_run_doc(1, 0.2, 0.0);
  doc["tick_s"] = 0.0;
  auto r = post(f.port, "/runs", doc);
  CHECK(r.status == 422);
  CHECK(r.json()["field"] == "tick_s");

  r = request(f.port, http::verb::post, "/runs", "{not json");
  CHECK(r.status == 422);
  CHECK(r.json()["field"] == "body");

  doc = servicecheck::live_run_doc(1, 0.2, 0.0);
  doc["realtime_factor"] = -1;
  CHECK(post(f.port, "/runs", doc).json()["field"] == "realtime_factor");
  CHECK(get(f.port, "/runs").json()["runs"].empty());
}

TEST_CASE("capacity is enforced and freed by aborting", "[service]") {
  Fixture f(2);
  const auto a = f.start(30.0, 1.0);
  f.start(30.0, 1.0);
  CHECK(post(f.port, "/runs", servicecheck::live_run_doc(3, 30.0, 1.0)).status == 429);
  const auto del = request(f.port, http::verb::delete_, "/runs/" + a);
  REQUIRE(del.status == 200);
  CHECK(del.json()["state"] == "Aborted");
  CHECK(request(f.port, http::verb::delete_, "/runs/" + a).status == 409);
  CHECK(post(f.port, "/runs", servicecheck::live_run_doc(3, 30.0, 1.0)).status == 201);
  // The aborted run still persists what it produced.
  const auto summary = get(f.port, "/runs/" + a + "/record");
  REQUIRE(summary.status == 200);
  CHECK(summary.json()["ticks"].get<std::uint64_t>() < 3000);
}

TEST_CASE("unknown runs and routes are 404", "[service]") {
  Fixture f;
  CHECK(get(f.port, "/runs/run-999999").status == 404);
  CHECK(post(f.port, "/runs/run-999999/jammer", Json{{"kind", "JammerOn"}}).status == 404);
  CHECK(get(f.port, "/runs/run-999999/stream/metrics").status == 404);
  CHECK(get(f.port, "/runs/run-999999/record").status == 404);
  CHECK(get(f.port, "/nowhere").status == 404);
  const auto id = f.start(0.1, 0.0);
  servicecheck::wait_finished(f.port, id);
  CHECK(get(f.port, "/runs/" + id + "/stream/audio").status == 404);
  CHECK(get(f.port, "/runs/" + id + "/record/secret.txt").status == 404);
}

TEST_CASE("commands are validated and refused outside a live run", "[service]") {
  Fixture f;
  const auto id = f.start(20.0, 1.0);
  servicecheck::wait_live(f.port, id);
  auto r = post(f.port, "/runs/" + id + "/jammer", Json{{"kind", "SetCenter"}, {"center_hz", 5e9}});
  CHECK(r.status == 422);
  CHECK(r.json()["field"] == "center_hz");
  r = post(f.port, "/runs/" + id + "/jammer", Json{{"kind", "SetGain"}});
  CHECK(r.status == 422);
  CHECK(r.json()["field"] == "gain_db");
  CHECK(post(f.port, "/runs/" + id + "/jammer", Json{{"kind", "Explode"}}).status == 422);
  CHECK(get(f.port, "/runs/" + id + "/stream/metrics").status == 426);
  CHECK(get(f.port, "/runs/" + id + "/record").status == 409);

  r = post(f.port, "/runs/" + id + "/jammer", Json{{"kind", "JammerOn"}});
  REQUIRE(r.status == 200);
  CHECK(r.json()["effective_tick"].get<std::uint64_t>() >= 1);

  request(f.port, http::verb::delete_, "/runs/" + id);
  CHECK(post(f.port, "/runs/" + id + "/jammer", Json{{"kind", "JammerOff"}}).status == 409);
}

TEST_CASE("a run out of ticks refuses commands with a conflict", "[service]") {
  RunManager manager(Fixture::scratch_dir(), 1);
  RunConfig cfg = run_config_from_json(servicecheck::live_run_doc(4, 0.05, 0.0));
  const auto run = manager.start(cfg, {0.0});
  run->wait();
  CHECK_THROWS_AS(run->command({0.0, EventKind::JammerOn}), LifecycleError);
}

TEST_CASE("acknowledged ticks match where the effect first appears", "[service]") {
  Fixture f;
  for (std::uint64_t seed = 100; seed < 106; ++seed) {
    INFO("seed " << seed);
    CHECK(servicecheck::check_command_sequence(f.port, seed).empty());
  }
}

TEST_CASE("live streams are ordered and reproducible from the record", "[service]") {
  Fixture f;
  const auto res = servicecheck::check_streams(f.port, f.dir, 21);
  INFO(res.error);
  CHECK(res.error.empty());
  CHECK(res.frames > 100);
  CHECK(res.gaps == 0);
}

TEST_CASE("finished runs replay their streams and close normally", "[service]") {
  Fixture f;
  const auto id = f.start(0.5, 0.0);
  servicecheck::wait_finished(f.port, id);
  const auto summary = get(f.port, "/runs/" + id + "/record").json();
  const auto ticks = summary["ticks"].get<std::size_t>();
  CHECK(ticks == 50);

  const auto nd = get(f.port, "/runs/" + id + "/stream/metrics");
  CHECK(nd.content_type == "application/x-ndjson");
  const auto lines = servicecheck::ndjson(nd.body);
  REQUIRE(lines.size() == ticks);
  for (std::size_t k = 0; k < ticks; ++k) REQUIRE(lines[k]["tick"] == k);

  testclient::StreamClient ws(f.port, "/runs/" + id + "/stream/metrics");
  const auto frames = ws.drain();
  CHECK(frames == lines);
  CHECK(ws.closed_normally());

  const auto spec = servicecheck::ndjson(get(f.port, "/runs/" + id + "/stream/spectrogram").body);
  CHECK(spec.size() == ticks);
}

TEST_CASE("unknown streams refuse the upgrade", "[service]") {
  Fixture f;
  const auto id = f.start(0.1, 0.0);
  servicecheck::wait_finished(f.port, id);
  CHECK_THROWS(testclient::StreamClient(f.port, "/runs/" + id + "/stream/audio"));
  CHECK_THROWS(testclient::StreamClient(f.port, "/runs/run-424242/stream/metrics"));
}

TEST_CASE("switching the jammer on raises in-band power from the acknowledged tick", "[service]") {
  Fixture f;
  auto doc = servicecheck::live_run_doc(8, 2.0, 4.0);
  doc["spectrogram_every_ticks"] = 1;
  const auto r = post(f.port, "/runs", doc);
  REQUIRE(r.status == 201);
  const std::string id = r.json()["run_id"];
  servicecheck::wait_live(f.port, id);
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  const auto ack = post(f.port, "/runs/" + id + "/jammer", Json{{"kind", "JammerOn"}});
  REQUIRE(ack.status == 200);
  const auto tick = ack.json()["effective_tick"].get<std::uint64_t>();
  servicecheck::wait_finished(f.port, id);

  const auto rec = read_record(f.dir / "runs" / id);
  auto mean_power = [&](std::uint64_t k) {
    const auto& e = rec.spectrogram.at(k);
    REQUIRE(e.tick == k);
    double acc = 0.0;
    for (double v : e.frame.power_db) acc += v;
    return acc / static_cast<double>(e.frame.size());
  };
  REQUIRE(tick >= 2);
  REQUIRE(tick + 1 < rec.spectrogram.size());
  CHECK(mean_power(tick - 1) - mean_power(tick - 2) == Catch::Approx(0.0).margin(1.0));
  CHECK(mean_power(tick) - mean_power(tick - 1) > 10.0);
}

TEST_CASE("slow consumers see a gap marker and no reordering", "[service]") {
  Subscription sub(StreamKind::Metrics, 3);
  for (int i = 1; i <= 5; ++i) sub.push(std::to_string(i));
  const auto gap = Json::parse(*sub.next(std::chrono::milliseconds(0)));
  CHECK(gap["type"] == "gap");
  CHECK(gap["dropped"] == 2);
  CHECK(*sub.next(std::chrono::milliseconds(0)) == "3");
  sub.push("6");
  CHECK(*sub.next(std::chrono::milliseconds(0)) == "4");
  CHECK(*sub.next(std::chrono::milliseconds(0)) == "5");
  CHECK(*sub.next(std::chrono::milliseconds(0)) == "6");
  CHECK_FALSE(sub.next(std::chrono::milliseconds(0)));
  CHECK_FALSE(sub.ended());
  sub.close();
  CHECK(sub.ended());
  CHECK(sub.dropped_total() == 2);
}

TEST_CASE("record files are served with their types", "[service]") {
  Fixture f;
  const auto id = f.start(0.2, 0.0);
  servicecheck::wait_finished(f.port, id);
  const auto summary = get(f.port, "/runs/" + id + "/record").json();
  CHECK(summary["files"].size() == 5);
  const auto csv = get(f.port, "/runs/" + id + "/record/metrics.csv");
  CHECK(csv.status == 200);
  CHECK(csv.content_type == "text/csv");
  CHECK(csv.body.starts_with("time_s,node_id,link_id"));
  const auto bin = get(f.port, "/runs/" + id + "/record/spectrogram.bin");
  CHECK(bin.body.substr(0, 8) == "JMSPEC01");
  const auto cfg = get(f.port, "/runs/" + id + "/record/config.json").json();
  CHECK(run_config_from_json(cfg) == run_config_from_json(servicecheck::live_run_doc(5, 0.2, 0.0)));
  CHECK(request(f.port, http::verb::options, "/runs").status == 204);
}
