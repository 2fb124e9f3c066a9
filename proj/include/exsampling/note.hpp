#pragma once

#include <cstdint>

#include "exsampling/error.hpp"
#include "exsampling/labels.hpp"

namespace exsampling {

struct NoteEvent {
  InstrumentTrack instrument = InstrumentTrack::Piano;
  int note = 60;         // MIDI 0-127
  int velocity = 127;    // 0-127
  int duration_ms = 500;  // > 0
  std::int64_t onset_ms = 0;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

inline void validate(const NoteEvent& ev) {
  if (ev.note < 0 || ev.note > 127) throw Error(ErrorCode::InvalidArgument, "note out of range");
  if (ev.velocity < 0 || ev.velocity > 127) throw Error(ErrorCode::InvalidArgument, "velocity out of range");
  if (ev.duration_ms <= 0) throw Error(ErrorCode::InvalidArgument, "duration must be positive");
  if (ev.onset_ms < 0) throw Error(ErrorCode::InvalidArgument, "onset must be non-negative");
}

}  // namespace exsampling
