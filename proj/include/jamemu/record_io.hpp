#pragma once

// On-disk layout of a run record and the JSON frames streamed to clients.

#include "jamemu/engine.hpp"

#include <fmt/format.h>

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace jamemu {

namespace fs = std::filesystem;

inline constexpr char kSpectrogramMagic[8] = {'J', 'M', 'S', 'P', 'E', 'C', '0', '1'};

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == data.size()) {
    const std::uint32_t v = data[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == data.size()) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = value(c);
    if (v < 0) throw Error("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

/// Power bins as little-endian float32.
inline std::vector<std::uint8_t> pack_bins(std::span<const double> power_db) {
  static_assert(std::endian::native == std::endian::little);
  std::vector<std::uint8_t> out(power_db.size() * 4);
  for (std::size_t i = 0; i < power_db.size(); ++i) {
    const float f = static_cast<float>(power_db[i]);
    std::memcpy(out.data() + 4 * i, &f, 4);
  }
  return out;
}

inline std::vector<double> unpack_bins(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) throw Error("bin payload is not a whole number of float32 values");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stream frames

inline Json metrics_frame(const RunRecord& rec, const LinkMetrics& m) {
  const auto& link = rec.links[m.link_index];
  return Json{{"tick", m.tick},
              {"time_s", m.time_s},
              {"node_id", link.node_id},
              {"link_id", link.id},
              {"sinr_db", m.sinr_db},
              {"sinr_pct", m.sinr_pct},
              {"throughput_bps", m.throughput_bps},
              {"throughput_pct", m.throughput_pct},
              {"link_status", m.link_status}};
}

inline Json spectrogram_frame_json(const SpectrogramEntry& e) {
  return Json{{"tick", e.tick},
              {"timestamp_s", e.frame.timestamp_s},
              {"freq_start_hz", e.frame.freq_start_hz},
              {"freq_step_hz", e.frame.freq_step_hz},
              {"n_bins", e.frame.size()},
              {"power_db_f32le_b64", base64_encode(pack_bins(e.frame.power_db))}};
}

inline Json jammer_log_json(const JammerLogEntry& e) {
  return Json{{"tick", e.tick},
              {"time_s", e.time_s},
              {"on", e.on},
              {"band", to_json(e.band)},
              {"gain_db", db_to_json(e.gain_db)},
              {"detection",
               {{"present", e.detection.present},
                {"peak_freq_hz", e.detection.peak_freq_hz},
                {"peak_power_db", e.detection.peak_power_db}}}};
}

inline JammerLogEntry jammer_log_from_json(const Json& j) {
  JammerLogEntry e;
  e.tick = j.at("tick").get<std::uint64_t>();
  e.time_s = j.at("time_s").get<double>();
  e.on = j.at("on").get<bool>();
  e.band = band_from_json(j.at("band"));
  e.gain_db = db_from_json(j.at("gain_db"));
  const auto& d = j.at("detection");
  e.detection = {d.at("present").get<bool>(), d.at("peak_freq_hz").get<double>(), d.at("peak_power_db").get<double>()};
  return e;
}

// ---------------------------------------------------------------------------
// Files

inline std::string format_number(double v) { return fmt::format("{}", v); }

inline void write_metrics_csv(std::ostream& out, const RunRecord& rec) {
  out << "time_s,node_id,link_id,sinr_db,sinr_pct,throughput_bps,throughput_pct,link_status\n";
  for (const auto& m : rec.metrics) {
    const auto& link = rec.links[m.link_index];
    out << fmt::format("{},{},{},{},{},{},{},{}\n", m.time_s, link.node_id, link.id, m.sinr_db, m.sinr_pct,
                       m.throughput_bps, m.throughput_pct, m.link_status ? 1 : 0);
  }
}

struct MetricsRow {
  double time_s = 0.0;
  std::string node_id;
  std::string link_id;
  double sinr_db = 0.0;
  double sinr_pct = 0.0;
  double throughput_bps = 0.0;
  double throughput_pct = 0.0;
  bool link_status = true;
};

inline std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "time_s,node_id,link_id,sinr_db,sinr_pct,throughput_bps,throughput_pct,link_status")
    throw Error("unexpected metrics header in " + path.string());
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 8> f;
    std::stringstream ss(line);
    for (auto& cell : f)
      if (!std::getline(ss, cell, ',')) throw Error("short metrics row: " + line);
    rows.push_back({std::stod(f[0]), f[1], f[2], std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6]),
                    f[7] == "1"});
  }
  return rows;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("truncated spectrogram file");
  return v;
}

/// Header: magic, u32 version, u32 bins, u64 frames. Each frame: u64 tick,
/// f64 timestamp, f64 start, f64 step, then `bins` float32 power values.
inline void write_spectrogram_bin(std::ostream& out, std::span<const SpectrogramEntry> frames) {
  const std::uint32_t bins = frames.empty() ? 0u : static_cast<std::uint32_t>(frames.front().frame.size());
  out.write(kSpectrogramMagic, sizeof kSpectrogramMagic);
  write_le<std::uint32_t>(out, 1);
  write_le<std::uint32_t>(out, bins);
  write_le<std::uint64_t>(out, frames.size());
  for (const auto& e : frames) {
    write_le<std::uint64_t>(out, e.tick);
    write_le<double>(out, e.frame.timestamp_s);
    write_le<double>(out, e.frame.freq_start_hz);
    write_le<double>(out, e.frame.freq_step_hz);
    const auto packed = pack_bins(e.frame.power_db);
    out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  }
}

inline std::vector<SpectrogramEntry> read_spectrogram_bin(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kSpectrogramMagic, 8) != 0) throw Error("bad spectrogram magic");
  if (read_le<std::uint32_t>(in) != 1) throw Error("unsupported spectrogram version");
  const auto bins = read_le<std::uint32_t>(in);
  const auto count = read_le<std::uint64_t>(in);
  std::vector<SpectrogramEntry> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(bins) * 4);
  for (std::uint64_t i = 0; i < count; ++i) {
    SpectrogramEntry e;
    e.tick = read_le<std::uint64_t>(in);
    e.frame.timestamp_s = read_le<double>(in);
    e.frame.freq_start_hz = read_le<double>(in);
    e.frame.freq_step_hz = read_le<double>(in);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw Error("truncated spectrogram file");
    e.frame.power_db = unpack_bins(buf);
    out.push_back(std::move(e));
  }
  return out;
}

inline Json record_summary_json(const RunRecord& rec) {
  Json links = Json::array();
  for (const auto& l : rec.links)
    links.push_back({{"id", l.id},
                     {"node_id", l.node_id},
                     {"tx_node", l.tx_node},
                     {"rx_node", l.rx_node},
                     {"baseline_sinr_db", l.baseline_sinr_db},
                     {"baseline_throughput_bps", l.baseline_throughput_bps}});
  Json commands = Json::array();
  for (const auto& c : rec.commands) commands.push_back({{"tick", c.tick}, {"command", to_json(c.command)}});
  return Json{{"schema_version", kSchemaVersion},
              {"config_hash", rec.config_hash},
              {"tick_s", rec.tick_s},
              {"ticks", rec.ticks},
              {"links", links},
              {"commands", commands}};
}

/// Persist a record as metrics.csv, spectrogram.bin, jammer_log.jsonl,
/// config.json and record.json inside `dir`.
inline void write_record(const fs::path& dir, const RunRecord& rec, const RunConfig& cfg) {
  fs::create_directories(dir);
  auto open = [&](const char* name, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(dir / name, mode | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("metrics.csv");
    write_metrics_csv(out, rec);
  }
  {
    auto out = open("spectrogram.bin", std::ios::out | std::ios::binary);
    write_spectrogram_bin(out, rec.spectrogram);
  }
  {
    auto out = open("jammer_log.jsonl");
    for (const auto& e : rec.jammer_log) out << jammer_log_json(e).dump() << '\n';
  }
  open("config.json") << to_json(cfg).dump(2) << '\n';
  open("record.json") << record_summary_json(rec).dump(2) << '\n';
}

/// Rebuild a record from `write_record` output. Metrics come back at the
/// precision printed in the CSV.
inline RunRecord read_record(const fs::path& dir) {
  auto slurp_json = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw Error("cannot open " + (dir / name).string());
    return Json::parse(in);
  };
  const Json summary = slurp_json("record.json");
  RunRecord rec;
  rec.config_hash = summary.at("config_hash").get<std::string>();
  rec.tick_s = summary.at("tick_s").get<double>();
  rec.ticks = summary.at("ticks").get<std::uint64_t>();
  for (const auto& l : summary.at("links"))
    rec.links.push_back({l.at("id"), l.at("node_id"), l.at("tx_node"), l.at("rx_node"), l.at("baseline_sinr_db"),
                         l.at("baseline_throughput_bps")});
  for (const auto& c : summary.at("commands"))
    rec.commands.push_back({c.at("tick").get<std::uint64_t>(), event_from_json(c.at("command"))});

  const auto rows = read_metrics_csv(dir / "metrics.csv");
  if (rows.size() != rec.links.size() * rec.ticks) throw Error("metrics.csv row count does not match record.json");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    LinkMetrics m;
    m.tick = i / rec.links.size();
    m.link_index = static_cast<std::uint32_t>(i % rec.links.size());
    if (rec.links[m.link_index].id != r.link_id) throw Error("metrics.csv link order mismatch");
    m.time_s = r.time_s;
    m.sinr_db = r.sinr_db;
    m.sinr_pct = r.sinr_pct;
    m.throughput_bps = r.throughput_bps;
    m.throughput_pct = r.throughput_pct;
    m.link_status = r.link_status;
    rec.metrics.push_back(m);
  }
  rec.spectrogram = read_spectrogram_bin(dir / "spectrogram.bin");
  std::ifstream log(dir / "jammer_log.jsonl");
  std::string line;
  while (std::getline(log, line))
    if (!line.empty()) rec.jammer_log.push_back(jammer_log_from_json(Json::parse(line)));
  return rec;
}

}  // namespace jamemu
