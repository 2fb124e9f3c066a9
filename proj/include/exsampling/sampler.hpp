#pragma once

// One-shot sample playback driven by note events.
//
// Percussive tracks play at the recorded pitch; melodic tracks transpose by
// resampling, so pitch and playback speed move together. The note length
// truncates the sample, with a short linear fade at the cut.

#include <algorithm>
#include <array>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "exsampling/audio.hpp"
#include "exsampling/error.hpp"
#include "exsampling/labels.hpp"
#include "exsampling/mapping.hpp"
#include "exsampling/note.hpp"

namespace exsampling {

inline constexpr double kFadeOutSeconds = 0.005;

inline double playback_rate(double original_midi, int note, bool percussive) {
  return percussive ? 1.0 : std::exp2((static_cast<double>(note) - original_midi) / 12.0);
}

// Number of output samples before truncation: positions i * rate < len.
inline std::size_t resampled_length(std::size_t len, double rate) {
  auto n = static_cast<std::size_t>(std::ceil(static_cast<double>(len) / rate));
  while (n > 0 && static_cast<double>(n - 1) * rate >= static_cast<double>(len)) --n;
  while (static_cast<double>(n) * rate < static_cast<double>(len)) ++n;
  return n;
}

inline std::size_t duration_samples(int duration_ms, int sample_rate) {
  return static_cast<std::size_t>(static_cast<std::int64_t>(duration_ms) * sample_rate / 1000);
}

inline AudioClip render_note(const AudioClip& sample, double original_midi, const NoteEvent& ev, bool percussive) {
  if (sample.empty()) throw Error(ErrorCode::EmptySample, "cannot play an empty sample");
  validate(ev);
  const double rate = playback_rate(original_midi, ev.note, percussive);
  const double gain = static_cast<double>(ev.velocity) / 127.0;
  const std::size_t n = std::min(resampled_length(sample.size(), rate), duration_samples(ev.duration_ms, sample.sample_rate));

  AudioClip out;
  out.sample_rate = sample.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float v = rate == 1.0 ? sample.samples[i] : interpolate_linear(sample.samples, static_cast<double>(i) * rate);
    out.samples[i] = static_cast<float>(v * gain);
  }

  const auto fade = std::min(n, static_cast<std::size_t>(std::lround(kFadeOutSeconds * sample.sample_rate)));
  for (std::size_t j = n - fade; j < n; ++j)
    out.samples[j] = static_cast<float>(out.samples[j] * (static_cast<double>(n - 1 - j) / static_cast<double>(fade)));
  return out;
}

// A loaded sample bound to a track.
struct Voice {
  AudioClip clip;
  double original_midi = kDefaultOriginalMidi;
};

using VoiceSet = std::array<std::optional<Voice>, kTrackCount>;

// Loads every assigned sample file, resampled to `sample_rate`.
inline VoiceSet load_voices(const RegistrySnapshot& snapshot, int sample_rate = kInternalSampleRate) {
  VoiceSet voices;
  for (std::size_t t = 0; t < kTrackCount; ++t) {
    if (!snapshot[t]) continue;
    voices[t] = Voice{resample(load_wav(snapshot[t]->file_path), sample_rate), snapshot[t]->original_midi()};
  }
  return voices;
}

struct ScoreRender {
  AudioClip mix;
  std::vector<std::string> skipped;  // one entry per event that had no sample
};

inline ScoreRender render_score(const std::vector<NoteEvent>& events, const VoiceSet& voices,
                                int sample_rate = kInternalSampleRate) {
  ScoreRender out;
  out.mix.sample_rate = sample_rate;
  std::vector<double> acc;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& ev = events[i];
    const auto& voice = voices[track_index(ev.instrument)];
    if (!voice) {
      out.skipped.push_back("event " + std::to_string(i) + ": no sample on " + std::string(to_string(ev.instrument)));
      continue;
    }
    const AudioClip note = render_note(voice->clip, voice->original_midi, ev, is_percussive(ev.instrument));
    const auto offset = static_cast<std::size_t>(ev.onset_ms * sample_rate / 1000);
    if (acc.size() < offset + note.size()) acc.resize(offset + note.size(), 0.0);
    for (std::size_t k = 0; k < note.size(); ++k) acc[offset + k] += note.samples[k];
  }
  out.mix.samples.resize(acc.size());
  std::transform(acc.begin(), acc.end(), out.mix.samples.begin(), [](double x) { return static_cast<float>(std::tanh(x)); });
  return out;
}

inline NoteEvent note_from_json(const nlohmann::json& j) {
  NoteEvent ev;
  ev.instrument = parse_track(j.at("instrument").get<std::string>());
  ev.note = j.at("note").get<int>();
  ev.velocity = j.value("velocity", 127);
  ev.duration_ms = j.at("duration_ms").get<int>();
  ev.onset_ms = j.value("onset_ms", std::int64_t{0});
  validate(ev);
  return ev;
}

inline nlohmann::json to_json(const NoteEvent& ev) {
  return {{"instrument", to_string(ev.instrument)},
          {"note", ev.note},
          {"velocity", ev.velocity},
          {"duration_ms", ev.duration_ms},
          {"onset_ms", ev.onset_ms}};
}

inline std::vector<NoteEvent> score_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("events") ? j["events"] : j;
  if (!list.is_array()) throw Error(ErrorCode::InvalidArgument, "score must be a JSON array of note events");
  std::vector<NoteEvent> events;
  for (const auto& item : list) events.push_back(note_from_json(item));
  return events;
}

// Live playback: a single task drains queued note events, rendering each one
// against the registry as it stands when the event is taken off the queue.
// Rendered audio goes to the sink (an audio device adapter, a recorder, a log).
class LiveMixer {
 public:
  using SnapshotSource = std::function<RegistrySnapshot()>;
  using Sink = std::function<void(const NoteEvent&, const AudioClip&)>;
  using SkipReport = std::function<void(const NoteEvent&, const std::string&)>;

  LiveMixer(SnapshotSource source, Sink sink, SkipReport on_skip = {})
      : source_(std::move(source)), sink_(std::move(sink)), on_skip_(std::move(on_skip)), thread_([this] { run(); }) {}

  ~LiveMixer() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  void enqueue(const NoteEvent& ev) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(ev);
    }
    cv_.notify_one();
  }

  // Blocks until every queued event has been rendered.
  void drain() {
    std::unique_lock lock(mutex_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
  }

 private:
  void run() {
    std::unique_lock lock(mutex_);
    while (true) {
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      NoteEvent ev = queue_.front();
      queue_.pop_front();
      busy_ = true;
      lock.unlock();
      play(ev);
      lock.lock();
      busy_ = false;
      if (queue_.empty()) idle_cv_.notify_all();
    }
  }

  void play(const NoteEvent& ev) {
    try {
      const auto snap = source_();
      const auto& slot = snap[track_index(ev.instrument)];
      if (!slot) {
        if (on_skip_) on_skip_(ev, "no sample assigned");
        return;
      }
      auto it = cache_.find(slot->file_path);
      if (it == cache_.end())
        it = cache_.emplace(slot->file_path, resample(load_wav(slot->file_path), kInternalSampleRate)).first;
      sink_(ev, render_note(it->second, slot->original_midi(), ev, is_percussive(ev.instrument)));
    } catch (const std::exception& e) {
      if (on_skip_) on_skip_(ev, e.what());
    }
  }

  SnapshotSource source_;
  Sink sink_;
  SkipReport on_skip_;
  std::map<std::string, AudioClip> cache_;  // only touched by the mixer thread
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<NoteEvent> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace exsampling
