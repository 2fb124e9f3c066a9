#pragma once

// Ingestion pipeline: accept recordings, classify and pitch-tag them on a
// worker pool, bind them to tracks, and announce each new assignment.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "exsampling/audio.hpp"
#include "exsampling/classifier.hpp"
#include "exsampling/error.hpp"
#include "exsampling/labels.hpp"
#include "exsampling/mapping.hpp"
#include "exsampling/osc.hpp"
#include "exsampling/pitch.hpp"

namespace exsampling {

struct ClassifierConfig {
  std::string kind = "baseline";  // "baseline" | "external"
  std::string model_path;
  std::vector<std::string> command;
  int timeout_ms = 30000;
};

struct ServiceConfig {
  osc::Endpoint bind{"0.0.0.0", 8080};
  std::optional<osc::Endpoint> osc_target = osc::Endpoint{"127.0.0.1", 9000};
  std::optional<osc::Endpoint> note_listen;  // inbound "/exsampling/note"
  std::filesystem::path sample_dir = "./samples";
  std::filesystem::path static_dir;  // recorder UI assets; empty = built-in pages
  MappingConfig mapping;
  double top_db = 20.0;
  double segment_seconds = 5.0;
  int workers = 2;
  std::size_t queue_capacity = 64;
  std::size_t max_upload_bytes = 16u << 20;
  ClassifierConfig classifier;

  PreprocessOptions preprocess_options() const {
    PreprocessOptions p;
    p.trim.top_db = top_db;
    p.segment_seconds = segment_seconds;
    return p;
  }

  static ServiceConfig from_json(const nlohmann::json& j) {
    ServiceConfig c;
    if (j.contains("bind")) c.bind = osc::Endpoint::parse(j["bind"].get<std::string>());
    if (j.contains("osc_target")) {
      if (j["osc_target"].is_null()) c.osc_target.reset();
      else c.osc_target = osc::Endpoint::parse(j["osc_target"].get<std::string>());
    }
    if (j.contains("note_listen") && !j["note_listen"].is_null())
      c.note_listen = osc::Endpoint::parse(j["note_listen"].get<std::string>());
    c.sample_dir = j.value("sample_dir", c.sample_dir.string());
    c.static_dir = j.value("static_dir", std::string{});
    if (j.contains("mapping_overrides")) c.mapping = MappingConfig::from_json(j["mapping_overrides"]);
    c.top_db = j.value("top_db", c.top_db);
    c.segment_seconds = j.value("segment_seconds", c.segment_seconds);
    c.workers = j.value("workers", c.workers);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      c.classifier.kind = k.value("kind", c.classifier.kind);
      c.classifier.model_path = k.value("model_path", std::string{});
      c.classifier.timeout_ms = k.value("timeout_ms", c.classifier.timeout_ms);
      if (k.contains("command")) {
        if (k["command"].is_string()) c.classifier.command = {k["command"].get<std::string>()};
        else c.classifier.command = k["command"].get<std::vector<std::string>>();
      }
    }
    if (c.workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be >= 1");
    if (c.queue_capacity < 1) throw Error(ErrorCode::InvalidArgument, "queue_capacity must be >= 1");
    return c;
  }

  static ServiceConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
    }
  }
};

inline std::unique_ptr<ClassifierProvider> make_classifier(const ClassifierConfig& cfg) {
  if (cfg.kind == "baseline") {
    if (cfg.model_path.empty()) throw Error(ErrorCode::InvalidArgument, "baseline classifier needs model_path");
    return std::make_unique<BaselineClassifier>(load_model(cfg.model_path));
  }
  if (cfg.kind == "external") {
    BridgeConfig bridge;
    bridge.command = cfg.command;
    bridge.timeout_ms = cfg.timeout_ms;
    if (bridge.command.empty()) throw Error(ErrorCode::InvalidArgument, "external classifier needs command");
    return std::make_unique<ExternalClassifier>(std::move(bridge));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown classifier kind '" + cfg.kind + "'");
}

enum class SubmissionState { Queued, Processing, Done, Rejected };

inline std::string_view to_string(SubmissionState s) {
  switch (s) {
    case SubmissionState::Queued: return "queued";
    case SubmissionState::Processing: return "processing";
    case SubmissionState::Done: return "done";
    case SubmissionState::Rejected: return "rejected";
  }
  return "unknown";
}

struct SubmissionStatus {
  std::string id;
  SubmissionState state = SubmissionState::Queued;
  std::optional<std::string> participant;
  std::optional<GeoLocation> location;
  std::int64_t submitted_at_ms = 0;
  // done
  std::optional<ClassLabel> label;
  std::optional<InstrumentTrack> instrument;
  double original_midi = kDefaultOriginalMidi;
  bool pitch_detected = false;
  double confidence = 0.0;
  // rejected
  std::string reason;
  std::string detail;

  bool terminal() const { return state == SubmissionState::Done || state == SubmissionState::Rejected; }
};

inline nlohmann::json to_json(const SubmissionStatus& s) {
  nlohmann::json j = {{"id", s.id}, {"state", to_string(s.state)}, {"submitted_at", s.submitted_at_ms}};
  if (s.state == SubmissionState::Done) {
    j["label"] = s.label->name();
    j["instrument"] = to_string(*s.instrument);
    j["original_midi"] = s.original_midi;
    j["pitch_detected"] = s.pitch_detected;
    j["confidence"] = s.confidence;
  } else if (s.state == SubmissionState::Rejected) {
    j["reason"] = s.reason;
    if (!s.detail.empty()) j["detail"] = s.detail;
  }
  return j;
}

// Rejection reason reported to participants for a pipeline error.
inline std::string rejection_reason(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoSignal: return "no_signal";
    case ErrorCode::TooShort: return "too_short";
    case ErrorCode::MalformedContainer:
    case ErrorCode::UnsupportedEncoding:
    case ErrorCode::EmptyAudio:
    case ErrorCode::MalformedAudio: return "malformed_audio";
    case ErrorCode::TooLarge: return "too_large";
    default: return "internal_error";
  }
}

// Status per submission id. States only move forward.
class StatusStore {
 public:
  void insert(SubmissionStatus status) {
    std::unique_lock lock(mutex_);
    map_.emplace(status.id, std::move(status));
  }

  void update(const std::string& id, const std::function<void(SubmissionStatus&)>& fn) {
    std::unique_lock lock(mutex_);
    auto it = map_.find(id);
    if (it == map_.end()) throw Error(ErrorCode::NotFound, id);
    SubmissionStatus next = it->second;
    fn(next);
    if (static_cast<int>(next.state) < static_cast<int>(it->second.state) || (it->second.terminal() && next.state != it->second.state))
      throw Error(ErrorCode::InvalidArgument, "illegal state transition for " + id);
    it->second = std::move(next);
  }

  std::optional<SubmissionStatus> find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = map_.find(id);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, SubmissionStatus> map_;
};

inline std::string random_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)};
  std::uint64_t hi, lo;
  {
    std::lock_guard lock(m);
    hi = rng();
    lo = rng();
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(32, '0');
  for (int i = 0; i < 16; ++i) {
    out[15 - i] = hex[(hi >> (4 * i)) & 0xf];
    out[31 - i] = hex[(lo >> (4 * i)) & 0xf];
  }
  return out;
}

inline std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct Submission {
  std::vector<std::uint8_t> audio;
  std::optional<std::string> participant;
  std::optional<GeoLocation> location;
};

class Service {
 public:
  using Announcer = std::function<void(const osc::Message&)>;
  using Clock = std::function<std::int64_t()>;
  using Logger = std::function<void(const std::string&)>;

  struct Hooks {
    Announcer announce;  // defaults to UDP to config.osc_target
    Clock clock = system_clock_ms;
    Logger log = [](const std::string& line) { std::clog << "[exsampling] " << line << '\n'; };
  };

  Service(ServiceConfig config, std::shared_ptr<const ClassifierProvider> classifier)
      : Service(std::move(config), std::move(classifier), Hooks{}) {}

  Service(ServiceConfig config, std::shared_ptr<const ClassifierProvider> classifier, Hooks hooks)
      : config_(std::move(config)), classifier_(std::move(classifier)), hooks_(std::move(hooks)) {
    if (!classifier_) throw Error(ErrorCode::InvalidArgument, "no classifier");
    std::filesystem::create_directories(config_.sample_dir);
    if (!hooks_.announce && config_.osc_target) {
      auto sender = std::make_shared<osc::UdpSender>(*config_.osc_target);
      hooks_.announce = [sender](const osc::Message& m) { sender->send(m); };
    }
    if (!hooks_.clock) hooks_.clock = system_clock_ms;
    if (!hooks_.log) hooks_.log = [](const std::string&) {};
    for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  ~Service() { shutdown(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Finishes queued work, then stops the workers.
  void shutdown() {
    {
      std::lock_guard lock(queue_mutex_);
      if (stopping_) return;
      stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

  // Persists the upload and queues it. Returns the new submission id.
  std::string submit(Submission sub) {
    if (sub.audio.size() > config_.max_upload_bytes)
      throw Error(ErrorCode::TooLarge, std::to_string(sub.audio.size()) + " bytes exceeds limit of " +
                                           std::to_string(config_.max_upload_bytes));
    if (!looks_like_wav(sub.audio)) throw Error(ErrorCode::MalformedAudio, "payload is not a RIFF/WAVE file");
    if (sub.location && !GeoLocation::valid(sub.location->lat, sub.location->lon))
      throw Error(ErrorCode::InvalidArgument, "location out of range");

    SubmissionStatus status;
    status.id = random_id();
    status.participant = sub.participant;
    status.location = sub.location;
    status.submitted_at_ms = hooks_.clock();

    write_file_bytes(upload_path(status.id), sub.audio);
    {
      std::lock_guard lock(queue_mutex_);
      if (stopping_ || queue_.size() >= config_.queue_capacity) {
        std::error_code ignored;
        std::filesystem::remove(upload_path(status.id), ignored);
        throw Error(ErrorCode::TooBusy, stopping_ ? "service is shutting down" : "job queue is full");
      }
      statuses_.insert(status);
      queue_.push_back(Job{status.id, next_ticket_++, std::move(sub), status.submitted_at_ms});
    }
    queue_cv_.notify_one();
    return status.id;
  }

  std::optional<SubmissionStatus> find_status(const std::string& id) const { return statuses_.find(id); }

  SubmissionStatus get_status(const std::string& id) const {
    auto s = statuses_.find(id);
    if (!s) throw Error(ErrorCode::NotFound, id);
    return *s;
  }

  RegistrySnapshot get_state() const { return registry_.snapshot(); }
  const SampleRegistry& registry() const noexcept { return registry_; }
  const ServiceConfig& config() const noexcept { return config_; }

  // Blocks until every submitted job has reached a terminal state.
  void wait_idle() {
    std::unique_lock lock(queue_mutex_);
    idle_cv_.wait(lock, [this] { return committed_ == next_ticket_; });
  }

  std::filesystem::path upload_path(const std::string& id) const { return config_.sample_dir / (id + ".upload.wav"); }
  std::filesystem::path sample_path(const std::string& id) const { return config_.sample_dir / (id + ".wav"); }

 private:
  struct Job {
    std::string id;
    std::uint64_t ticket;
    Submission submission;
    std::int64_t received_at_ms;
  };

  // Result of the CPU-heavy stage, applied in submission order.
  struct Outcome {
    std::optional<SampleAssignment> assignment;
    std::string reason;
    std::string detail;
  };

  void worker_loop() {
    while (true) {
      Job job;
      {
        std::unique_lock lock(queue_mutex_);
        queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      statuses_.update(job.id, [](SubmissionStatus& s) { s.state = SubmissionState::Processing; });
      Outcome outcome = analyze(job);
      commit_in_order(job, std::move(outcome));
    }
  }

  Outcome analyze(const Job& job) {
    Outcome out;
    try {
      const AudioClip decoded = decode_wav(job.submission.audio);
      const Preprocessed pre = preprocess(decoded, config_.preprocess_options());
      const ClassificationResult result = classify_segments(pre.segments, *classifier_);
      const PitchEstimate pitch = estimate_pitch(pre.trimmed);

      SampleAssignment a;
      a.sample_id = job.id;
      a.file_path = std::filesystem::absolute(sample_path(job.id)).string();
      a.label = result.winner;
      a.instrument = map_label(result.winner, config_.mapping);
      if (pitch.present()) a.detected_midi = pitch.midi();
      a.confidence = result.confidence;
      a.location = job.submission.location;
      a.received_at_ms = job.received_at_ms;
      save_wav(a.file_path, pre.trimmed, WavEncoding::Float32);
      out.assignment = std::move(a);
    } catch (const Error& e) {
      out.reason = rejection_reason(e.code());
      out.detail = e.what();
    } catch (const std::exception& e) {
      out.reason = "internal_error";
      out.detail = e.what();
    }
    return out;
  }

  // Assignments are applied and announced in submission order, so the track
  // registry always ends up holding the most recently received sample.
  void commit_in_order(const Job& job, Outcome outcome) {
    std::unique_lock lock(queue_mutex_);
    commit_cv_.wait(lock, [&] { return committed_ == job.ticket; });
    lock.unlock();

    if (outcome.assignment) {
      const SampleAssignment& a = *outcome.assignment;
      auto replaced = registry_.assign(a);
      if (replaced)
        hooks_.log("track " + std::string(to_string(a.instrument)) + ": " + replaced->sample_id + " retired (" +
                   replaced->file_path + ")");
      hooks_.log("track " + std::string(to_string(a.instrument)) + " <- " + std::string(a.label.name()) + " (" +
                 a.sample_id + ")");
      write_assignments();
      statuses_.update(job.id, [&](SubmissionStatus& s) {
        s.state = SubmissionState::Done;
        s.label = a.label;
        s.instrument = a.instrument;
        s.original_midi = a.original_midi();
        s.pitch_detected = a.detected_midi.has_value();
        s.confidence = a.confidence;
      });
      if (hooks_.announce) {
        try {
          hooks_.announce(osc::sample_announce(a));
        } catch (const std::exception& e) {
          hooks_.log(std::string("announce failed: ") + e.what());
        }
      }
    } else {
      hooks_.log("rejected " + job.id + ": " + outcome.detail);
      statuses_.update(job.id, [&](SubmissionStatus& s) {
        s.state = SubmissionState::Rejected;
        s.reason = outcome.reason;
        s.detail = outcome.detail;
      });
    }

    lock.lock();
    ++committed_;
    commit_cv_.notify_all();
    if (committed_ == next_ticket_) idle_cv_.notify_all();
  }

  void write_assignments() {
    try {
      const auto path = config_.sample_dir / "assignments.json";
      std::ofstream out(path, std::ios::trunc);
      out << snapshot_to_json(registry_.snapshot()).dump(2) << '\n';
    } catch (const std::exception& e) {
      hooks_.log(std::string("could not write assignments.json: ") + e.what());
    }
  }

  ServiceConfig config_;
  std::shared_ptr<const ClassifierProvider> classifier_;
  Hooks hooks_;
  SampleRegistry registry_;
  StatusStore statuses_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable commit_cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t committed_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

inline nlohmann::json state_to_json(const RegistrySnapshot& snap) {
  nlohmann::json tracks = nlohmann::json::object();
  for (auto t : kAllTracks) {
    const auto& slot = snap[track_index(t)];
    if (!slot) {
      tracks[std::string(to_string(t))] = nullptr;
      continue;
    }
    nlohmann::json entry = {{"id", slot->sample_id},
                            {"label", slot->label.name()},
                            {"received_at", slot->received_at_ms},
                            {"original_midi", slot->original_midi()},
                            {"location", nullptr}};
    if (slot->location) entry["location"] = {{"lat", slot->location->lat}, {"lon", slot->location->lon}};
    tracks[std::string(to_string(t))] = entry;
  }
  return {{"tracks", tracks}};
}

inline nlohmann::json labels_to_json(const MappingConfig& mapping) {
  auto list = nlohmann::json::array();
  for (auto name : label_names()) {
    const auto label = ClassLabel::parse(name);
    list.push_back({{"label", name},
                    {"instrument", to_string(map_label(label, mapping))},
                    {"default", to_string(default_track(label))}});
  }
  return {{"labels", list}};
}

}  // namespace exsampling
