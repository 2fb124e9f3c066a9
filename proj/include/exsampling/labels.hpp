#pragma once

// The closed vocabularies: 41 sound classes and 8 instrument tracks.

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "exsampling/error.hpp"

namespace exsampling {

inline constexpr std::size_t kLabelCount = 41;
inline constexpr std::size_t kTrackCount = 8;

enum class InstrumentTrack { Bass, BD, Chorus, HH, Piano, Snare, TT, Wind };

inline constexpr std::array<InstrumentTrack, kTrackCount> kAllTracks = {
    InstrumentTrack::Bass,  InstrumentTrack::BD,    InstrumentTrack::Chorus, InstrumentTrack::HH,
    InstrumentTrack::Piano, InstrumentTrack::Snare, InstrumentTrack::TT,     InstrumentTrack::Wind};

inline constexpr std::string_view to_string(InstrumentTrack t) {
  constexpr std::array<std::string_view, kTrackCount> names = {"Bass",  "BD",    "Chorus", "HH",
                                                               "Piano", "Snare", "TT",     "Wind"};
  return names[static_cast<std::size_t>(t)];
}

inline InstrumentTrack parse_track(std::string_view name) {
  for (auto t : kAllTracks)
    if (to_string(t) == name) return t;
  throw Error(ErrorCode::UnknownInstrument, std::string(name));
}

inline constexpr std::size_t track_index(InstrumentTrack t) { return static_cast<std::size_t>(t); }

// Percussive tracks play samples at their recorded pitch; melodic tracks transpose.
inline constexpr bool is_percussive(InstrumentTrack t) {
  return t == InstrumentTrack::BD || t == InstrumentTrack::HH || t == InstrumentTrack::Snare ||
         t == InstrumentTrack::TT;
}

struct LabelDefault {
  std::string_view label;
  InstrumentTrack track;
};

// Default label -> track assignment, grouped by track.
inline constexpr std::array<LabelDefault, kLabelCount> kDefaultMapping = {{
    {"Bark", InstrumentTrack::Bass},
    {"Burping_or_eructation", InstrumentTrack::Bass},
    {"Bus", InstrumentTrack::Bass},
    {"Cello", InstrumentTrack::Bass},
    {"Double_bass", InstrumentTrack::Bass},
    {"Microwave_oven", InstrumentTrack::Bass},
    {"Bass_drum", InstrumentTrack::BD},
    {"Drawer_open_or_close", InstrumentTrack::BD},
    {"Fart", InstrumentTrack::BD},
    {"Gunshot_or_gunfire", InstrumentTrack::BD},
    {"Applause", InstrumentTrack::Chorus},
    {"Laughter", InstrumentTrack::Chorus},
    {"Meow", InstrumentTrack::Chorus},
    {"Squeak", InstrumentTrack::Chorus},
    {"Computer_keyboard", InstrumentTrack::HH},
    {"Finger_snapping", InstrumentTrack::HH},
    {"Hihat", InstrumentTrack::HH},
    {"Keys_jangling", InstrumentTrack::HH},
    {"Scissors", InstrumentTrack::HH},
    {"Writing", InstrumentTrack::HH},
    {"Acoustic_guitar", InstrumentTrack::Piano},
    {"Electric_piano", InstrumentTrack::Piano},
    {"Harmonica", InstrumentTrack::Piano},
    {"Telephone", InstrumentTrack::Piano},
    {"Violin_or_fiddle", InstrumentTrack::Piano},
    {"Cough", InstrumentTrack::Snare},
    {"Fireworks", InstrumentTrack::Snare},
    {"Knock", InstrumentTrack::Snare},
    {"Shatter", InstrumentTrack::Snare},
    {"Snare_drum", InstrumentTrack::Snare},
    {"Tambourine", InstrumentTrack::Snare},
    {"Tearing", InstrumentTrack::Snare},
    {"Chime", InstrumentTrack::TT},
    {"Cowbell", InstrumentTrack::TT},
    {"Glockenspiel", InstrumentTrack::TT},
    {"Gong", InstrumentTrack::TT},
    {"Clarinet", InstrumentTrack::Wind},
    {"Flute", InstrumentTrack::Wind},
    {"Oboe", InstrumentTrack::Wind},
    {"Saxophone", InstrumentTrack::Wind},
    {"Trumpet", InstrumentTrack::Wind},
}};

// Label names in lexicographic (byte) order; probability vectors use this indexing.
inline const std::array<std::string_view, kLabelCount>& label_names() {
  static const auto names = [] {
    std::array<std::string_view, kLabelCount> out{};
    for (std::size_t i = 0; i < kLabelCount; ++i) out[i] = kDefaultMapping[i].label;
    std::sort(out.begin(), out.end());
    return out;
  }();
  return names;
}

class ClassLabel {
 public:
  static ClassLabel from_index(std::size_t index) {
    if (index >= kLabelCount) throw Error(ErrorCode::UnknownLabel, "label index " + std::to_string(index));
    return ClassLabel(index);
  }

  static ClassLabel parse(std::string_view name) {
    const auto& names = label_names();
    const auto it = std::lower_bound(names.begin(), names.end(), name);
    if (it == names.end() || *it != name) throw Error(ErrorCode::UnknownLabel, std::string(name));
    return ClassLabel(static_cast<std::size_t>(it - names.begin()));
  }

  static bool is_valid(std::string_view name) {
    const auto& names = label_names();
    return std::binary_search(names.begin(), names.end(), name);
  }

  std::size_t index() const noexcept { return index_; }
  std::string_view name() const noexcept { return label_names()[index_]; }

  friend auto operator<=>(const ClassLabel&, const ClassLabel&) = default;

 private:
  explicit ClassLabel(std::size_t index) : index_(index) {}
  std::size_t index_;
};

inline InstrumentTrack default_track(ClassLabel label) {
  for (const auto& d : kDefaultMapping)
    if (d.label == label.name()) return d.track;
  throw Error(ErrorCode::UnknownLabel, std::string(label.name()));
}

}  // namespace exsampling
