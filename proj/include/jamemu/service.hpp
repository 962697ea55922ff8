#pragma once

// Run lifecycle management and frame fan-out, independent of the transport.

#include "jamemu/engine.hpp"
#include "jamemu/record_io.hpp"

#include <fmt/format.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <stop_token>
#include <thread>

namespace jamemu {

enum class RunState { Pending, Live, Finished, Aborted };

inline std::string to_string(RunState s) {
  switch (s) {
    case RunState::Pending: return "Pending";
    case RunState::Live: return "Live";
    case RunState::Finished: return "Finished";
    case RunState::Aborted: return "Aborted";
  }
  return "?";
}

enum class StreamKind { Metrics, Spectrogram, JammerLog };

inline std::string to_string(StreamKind k) {
  switch (k) {
    case StreamKind::Metrics: return "metrics";
    case StreamKind::Spectrogram: return "spectrogram";
    case StreamKind::JammerLog: return "jammer_log";
  }
  return "?";
}

inline std::optional<StreamKind> parse_stream_kind(std::string_view name) {
  if (name == "metrics") return StreamKind::Metrics;
  if (name == "spectrogram") return StreamKind::Spectrogram;
  if (name == "jammer_log") return StreamKind::JammerLog;
  return std::nullopt;
}

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// The run is in the wrong lifecycle state for the request.
class LifecycleError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Frames

inline Json metrics_tick_frame(const RunRecord& rec, std::uint64_t tick) {
  Json links = Json::array();
  for (std::size_t i = 0; i < rec.links.size(); ++i) {
    Json m = metrics_frame(rec, rec.at(tick, i));
    m.erase("tick");
    m.erase("time_s");
    links.push_back(std::move(m));
  }
  const double t = rec.links.empty() ? static_cast<double>(tick) * rec.tick_s : rec.at(tick, 0).time_s;
  return Json{{"schema_version", kSchemaVersion}, {"type", "metrics"}, {"tick", tick}, {"time_s", t}, {"links", links}};
}

inline Json tagged(Json frame, const char* type) {
  frame["schema_version"] = kSchemaVersion;
  frame["type"] = type;
  return frame;
}

inline Json gap_frame(std::uint64_t dropped) {
  return Json{{"schema_version", kSchemaVersion}, {"type", "gap"}, {"dropped", dropped}};
}

/// One subscriber's queue. Overflow drops the oldest undelivered frame and
/// the consumer sees a gap marker before the next frame it receives.
class Subscription {
 public:
  explicit Subscription(StreamKind kind, std::size_t capacity = 256) : kind_(kind), capacity_(capacity) {}

  StreamKind kind() const { return kind_; }

  void push(std::string frame) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      if (capacity_ > 0 && frames_.size() >= capacity_) {
        frames_.pop_front();
        ++pending_gap_;
        ++dropped_total_;
      }
      frames_.push_back(std::move(frame));
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  /// Next frame, waiting up to `timeout`. Empty when nothing arrived in time
  /// or the stream has ended; check ended() to tell them apart.
  std::optional<std::string> next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !frames_.empty() || closed_; });
    if (frames_.empty()) return std::nullopt;
    if (pending_gap_ > 0) {
      const auto n = pending_gap_;
      pending_gap_ = 0;
      return gap_frame(n).dump();
    }
    std::string out = std::move(frames_.front());
    frames_.pop_front();
    return out;
  }

  bool ended() const {
    std::lock_guard lock(mu_);
    return closed_ && frames_.empty();
  }

  std::uint64_t dropped_total() const {
    std::lock_guard lock(mu_);
    return dropped_total_;
  }

 private:
  StreamKind kind_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> frames_;
  std::uint64_t pending_gap_ = 0;
  std::uint64_t dropped_total_ = 0;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Runs

struct StartOptions {
  /// Simulated seconds per wall-clock second; 0 runs unpaced.
  double realtime_factor = 1.0;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunManager;

class Run {
 public:
  Run(std::string id, RunConfig config, StartOptions opts, fs::path dir)
      : id_(std::move(id)), config_(std::move(config)), opts_(opts), dir_(std::move(dir)),
        engine_(std::make_unique<Engine>(config_)), started_at_(utc_timestamp()) {}

  ~Run() {
    if (worker_.joinable()) {
      worker_.request_stop();
      worker_.join();
    }
  }

  const std::string& id() const { return id_; }
  const RunConfig& config() const { return config_; }
  const fs::path& dir() const { return dir_; }

  RunState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  Json handle() const {
    std::lock_guard lock(mu_);
    return Json{{"schema_version", kSchemaVersion},
                {"run_id", id_},
                {"state", to_string(state_)},
                {"started_at", started_at_},
                {"config_hash", engine_ ? engine_->record().config_hash : record_.config_hash},
                {"config_ref", "/runs/" + id_ + "/record/config.json"},
                {"next_tick", engine_ ? engine_->next_tick() : record_.ticks},
                {"total_ticks", total_ticks_}};
  }

  void start() {
    total_ticks_ = engine_->total_ticks();
    worker_ = std::jthread([this](std::stop_token st) { loop(st); });
  }

  /// Queue a command; returns the tick at which it takes effect.
  std::uint64_t command(const Event& cmd) {
    std::lock_guard lock(mu_);
    if (state_ != RunState::Live) throw LifecycleError("run " + id_ + " is " + to_string(state_) + ", not Live");
    if (engine_->finished()) throw LifecycleError("run " + id_ + " has no ticks left");
    return engine_->apply_command(cmd);
  }

  std::shared_ptr<Subscription> subscribe(StreamKind kind, std::size_t capacity = 256) {
    std::lock_guard lock(mu_);
    if (state_ == RunState::Finished || state_ == RunState::Aborted) {
      auto sub = std::make_shared<Subscription>(kind, 0);
      replay(*sub, record_);
      sub->close();
      return sub;
    }
    auto sub = std::make_shared<Subscription>(kind, capacity);
    subs_.push_back(sub);
    return sub;
  }

  void abort() {
    worker_.request_stop();
    cv_.notify_all();
  }

  void wait() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return state_ == RunState::Finished || state_ == RunState::Aborted; });
  }

  bool wait_for(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return state_ == RunState::Finished || state_ == RunState::Aborted; });
  }

  /// The complete record; only available once the run has ended.
  const RunRecord& record() const {
    std::lock_guard lock(mu_);
    if (state_ != RunState::Finished && state_ != RunState::Aborted)
      throw LifecycleError("run " + id_ + " has not ended");
    return record_;
  }

 private:
  static void replay(Subscription& sub, const RunRecord& rec) {
    switch (sub.kind()) {
      case StreamKind::Metrics:
        for (std::uint64_t k = 0; k < rec.ticks; ++k) sub.push(metrics_tick_frame(rec, k).dump());
        break;
      case StreamKind::Spectrogram:
        for (const auto& e : rec.spectrogram) sub.push(tagged(spectrogram_frame_json(e), "spectrogram").dump());
        break;
      case StreamKind::JammerLog:
        for (const auto& e : rec.jammer_log) sub.push(tagged(jammer_log_json(e), "jammer_log").dump());
        break;
    }
  }

  void publish(const TickOutput& out) {
    std::erase_if(subs_, [](const std::weak_ptr<Subscription>& w) { return w.expired(); });
    if (subs_.empty()) return;
    const auto& rec = engine_->record();
    std::optional<std::string> metrics, spectrum, jam;
    for (const auto& w : subs_) {
      auto sub = w.lock();
      if (!sub) continue;
      switch (sub->kind()) {
        case StreamKind::Metrics:
          if (!metrics) metrics = metrics_tick_frame(rec, out.tick).dump();
          sub->push(*metrics);
          break;
        case StreamKind::Spectrogram:
          if (!out.has_spectrogram) break;
          if (!spectrum) spectrum = tagged(spectrogram_frame_json(rec.spectrogram.back()), "spectrogram").dump();
          sub->push(*spectrum);
          break;
        case StreamKind::JammerLog:
          if (!out.has_jammer_entry) break;
          if (!jam) jam = tagged(jammer_log_json(rec.jammer_log.back()), "jammer_log").dump();
          sub->push(*jam);
          break;
      }
    }
  }

  void loop(std::stop_token st) {
    {
      std::lock_guard lock(mu_);
      state_ = RunState::Live;
    }
    cv_.notify_all();
    const auto t0 = std::chrono::steady_clock::now();
    bool aborted = false;
    for (;;) {
      {
        std::lock_guard lock(mu_);
        if (engine_->finished()) break;
        if (st.stop_requested()) {
          aborted = true;
          break;
        }
        const auto out = engine_->step();
        publish(out);
      }
      if (opts_.realtime_factor > 0.0) {
        const double sim = static_cast<double>(engine_next_tick()) * config_.tick_s / opts_.realtime_factor;
        const auto due = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(sim));
        std::unique_lock lock(mu_);
        cv_.wait_until(lock, due, [&] { return st.stop_requested(); });
      }
    }
    std::unique_lock lock(mu_);
    record_ = engine_->take_record();
    engine_.reset();
    try {
      write_record(dir_, record_, config_);
    } catch (const std::exception&) {
      // The in-memory record still serves replays.
    }
    state_ = aborted ? RunState::Aborted : RunState::Finished;
    for (const auto& w : subs_)
      if (auto sub = w.lock()) sub->close();
    subs_.clear();
    lock.unlock();
    cv_.notify_all();
  }

  std::uint64_t engine_next_tick() {
    std::lock_guard lock(mu_);
    return engine_ ? engine_->next_tick() : record_.ticks;
  }

  std::string id_;
  RunConfig config_;
  StartOptions opts_;
  fs::path dir_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::unique_ptr<Engine> engine_;
  RunRecord record_;
  RunState state_ = RunState::Pending;
  std::uint64_t total_ticks_ = 0;
  std::string started_at_;
  std::vector<std::weak_ptr<Subscription>> subs_;
  std::jthread worker_;
};

/// Registry of runs with a cap on how many may be active at once.
class RunManager {
 public:
  explicit RunManager(fs::path data_dir, std::size_t capacity = 4)
      : data_dir_(std::move(data_dir)), capacity_(capacity) {}

  ~RunManager() {
    std::vector<std::shared_ptr<Run>> runs;
    {
      std::lock_guard lock(mu_);
      for (auto& [id, run] : runs_) runs.push_back(run);
    }
    for (auto& r : runs) r->abort();
  }

  const fs::path& data_dir() const { return data_dir_; }
  std::size_t capacity() const { return capacity_; }

  /// Validate, register and launch. Throws ValidationError or CapacityError.
  std::shared_ptr<Run> start(const Json& doc) {
    RunConfig cfg = run_config_from_json(doc);
    StartOptions opts;
    if (doc.contains("realtime_factor")) {
      if (!doc["realtime_factor"].is_number() || doc["realtime_factor"].get<double>() < 0.0)
        throw ValidationError("realtime_factor", "must be a non-negative number");
      opts.realtime_factor = doc["realtime_factor"].get<double>();
    }
    return start(std::move(cfg), opts);
  }

  std::shared_ptr<Run> start(RunConfig cfg, StartOptions opts = {}) {
    validate(cfg);
    std::lock_guard lock(mu_);
    std::size_t active = 0;
    for (const auto& [id, run] : runs_) {
      const auto s = run->state();
      active += (s == RunState::Pending || s == RunState::Live);
    }
    if (active >= capacity_) throw CapacityError(fmt::format("capacity of {} concurrent runs exhausted", capacity_));
    const std::string id = fmt::format("run-{:06d}", ++counter_);
    auto run = std::make_shared<Run>(id, std::move(cfg), opts, data_dir_ / "runs" / id);
    runs_[id] = run;
    run->start();
    return run;
  }

  std::shared_ptr<Run> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = runs_.find(id);
    if (it == runs_.end()) throw NotFoundError("unknown run '" + id + "'");
    return it->second;
  }

  std::vector<std::shared_ptr<Run>> list() const {
    std::lock_guard lock(mu_);
    std::vector<std::shared_ptr<Run>> out;
    for (const auto& [id, run] : runs_) out.push_back(run);
    return out;
  }

  Json command(const std::string& id, const Json& doc) {
    const Event cmd = event_from_json(doc);
    const auto tick = get(id)->command(cmd);
    return Json{{"schema_version", kSchemaVersion}, {"run_id", id}, {"effective_tick", tick},
                {"command", to_json(cmd)}};
  }

  std::shared_ptr<Subscription> subscribe(const std::string& id, std::string_view stream,
                                          std::size_t capacity = 256) {
    const auto kind = parse_stream_kind(stream);
    if (!kind) throw NotFoundError("unknown stream '" + std::string(stream) + "'");
    return get(id)->subscribe(*kind, capacity);
  }

 private:
  fs::path data_dir_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Run>> runs_;
  std::uint64_t counter_ = 0;
};

}  // namespace jamemu
