#pragma once

// Label -> track mapping and the live per-track sample registry.

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "exsampling/error.hpp"
#include "exsampling/labels.hpp"

namespace exsampling {

inline constexpr double kDefaultOriginalMidi = 60.0;

struct MappingConfig {
  std::map<ClassLabel, InstrumentTrack> overrides;

  // Accepts {"Bark": "Piano", ...}; unknown labels or tracks are rejected.
  static MappingConfig from_json(const nlohmann::json& j) {
    MappingConfig cfg;
    if (j.is_null()) return cfg;
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "mapping overrides must be an object");
    for (const auto& [label, track] : j.items()) {
      if (!track.is_string()) throw Error(ErrorCode::UnknownInstrument, "override for " + label);
      cfg.overrides[ClassLabel::parse(label)] = parse_track(track.get<std::string>());
    }
    return cfg;
  }
};

inline InstrumentTrack map_label(ClassLabel label, const MappingConfig& config = {}) {
  if (auto it = config.overrides.find(label); it != config.overrides.end()) return it->second;
  return default_track(label);
}

inline InstrumentTrack map_label(std::string_view label, const MappingConfig& config = {}) {
  return map_label(ClassLabel::parse(label), config);
}

struct GeoLocation {
  double lat = 0.0;
  double lon = 0.0;

  static bool valid(double lat, double lon) {
    return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
  }
  friend bool operator==(const GeoLocation&, const GeoLocation&) = default;
};

struct SampleAssignment {
  std::string sample_id;
  std::string file_path;
  ClassLabel label = ClassLabel::from_index(0);
  InstrumentTrack instrument = InstrumentTrack::Bass;
  std::optional<double> detected_midi;  // absent when no pitch was found
  double confidence = 0.0;
  std::optional<GeoLocation> location;
  std::int64_t received_at_ms = 0;

  double original_midi() const { return detected_midi.value_or(kDefaultOriginalMidi); }
};

inline nlohmann::json to_json(const SampleAssignment& a) {
  nlohmann::json j = {
      {"sample_id", a.sample_id},
      {"file_path", a.file_path},
      {"label", a.label.name()},
      {"instrument", to_string(a.instrument)},
      {"original_midi", a.original_midi()},
      {"pitch_detected", a.detected_midi.has_value()},
      {"confidence", a.confidence},
      {"received_at", a.received_at_ms},
      {"location", nullptr},
  };
  if (a.location) j["location"] = {{"lat", a.location->lat}, {"lon", a.location->lon}};
  return j;
}

inline SampleAssignment assignment_from_json(const nlohmann::json& j) {
  SampleAssignment a;
  a.sample_id = j.at("sample_id").get<std::string>();
  a.file_path = j.at("file_path").get<std::string>();
  a.label = ClassLabel::parse(j.at("label").get<std::string>());
  a.instrument = parse_track(j.at("instrument").get<std::string>());
  if (j.value("pitch_detected", true) && j.contains("original_midi") && !j["original_midi"].is_null())
    a.detected_midi = j["original_midi"].get<double>();
  a.confidence = j.value("confidence", 0.0);
  a.received_at_ms = j.value("received_at", std::int64_t{0});
  if (j.contains("location") && !j["location"].is_null()) {
    GeoLocation loc{j["location"].at("lat").get<double>(), j["location"].at("lon").get<double>()};
    if (!GeoLocation::valid(loc.lat, loc.lon)) throw Error(ErrorCode::InvalidArgument, "location out of range");
    a.location = loc;
  }
  return a;
}

using RegistrySnapshot = std::array<std::optional<SampleAssignment>, kTrackCount>;

// One current sample per track. Replacement and snapshots are serialized by a
// single mutex, so readers always see a state some sequence of assigns produced.
class SampleRegistry {
 public:
  std::optional<SampleAssignment> assign(SampleAssignment assignment) {
    std::lock_guard lock(mutex_);
    auto& slot = slots_[track_index(assignment.instrument)];
    std::optional<SampleAssignment> previous = std::move(slot);
    slot = std::move(assignment);
    return previous;
  }

  RegistrySnapshot snapshot() const {
    std::lock_guard lock(mutex_);
    return slots_;
  }

  std::optional<SampleAssignment> get(InstrumentTrack track) const {
    std::lock_guard lock(mutex_);
    return slots_[track_index(track)];
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.has_value();
    return n;
  }

 private:
  mutable std::mutex mutex_;
  RegistrySnapshot slots_;
};

inline nlohmann::json snapshot_to_json(const RegistrySnapshot& snap) {
  auto list = nlohmann::json::array();
  for (const auto& slot : snap)
    if (slot) list.push_back(to_json(*slot));
  return list;
}

inline RegistrySnapshot snapshot_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("assignments") ? j["assignments"] : j;
  if (!list.is_array()) throw Error(ErrorCode::InvalidArgument, "assignments must be a JSON array");
  RegistrySnapshot snap;
  for (const auto& item : list) {
    auto a = assignment_from_json(item);
    snap[track_index(a.instrument)] = std::move(a);
  }
  return snap;
}

}  // namespace exsampling
