#pragma once

// Audio clip value type, WAV container I/O, and the time-domain
// preprocessing stages (resampling, silence trimming, fixed segmentation).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "exsampling/error.hpp"

namespace exsampling {

inline constexpr int kInternalSampleRate = 22050;

// Mono PCM audio in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kInternalSampleRate;
  int source_channels = 1;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  double duration_seconds() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  friend bool operator==(const AudioClip&, const AudioClip&) = default;
};

// Half-open [start, end) range in samples.
struct SampleInterval {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  friend bool operator==(const SampleInterval&, const SampleInterval&) = default;
};

enum class WavEncoding { Pcm16, Float32 };

namespace detail {

inline std::uint16_t read_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_tag(std::vector<std::uint8_t>& out, const char (&tag)[5]) {
  out.insert(out.end(), tag, tag + 4);
}

inline bool tag_is(const std::uint8_t* p, const char (&tag)[5]) {
  return std::memcmp(p, tag, 4) == 0;
}

inline float clamp_unit(float x) {
  if (!std::isfinite(x)) return 0.0f;
  return std::clamp(x, -1.0f, 1.0f);
}

}  // namespace detail

// Cheap check used at ingest: does the payload start like a RIFF/WAVE file?
inline bool looks_like_wav(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 12 && detail::tag_is(bytes.data(), "RIFF") &&
         detail::tag_is(bytes.data() + 8, "WAVE");
}

// Decodes 16-bit PCM or 32-bit float WAV (1 or 2 channels) to a mono clip.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  using detail::read_u16le;
  using detail::read_u32le;
  if (!looks_like_wav(bytes)) throw Error(ErrorCode::MalformedContainer, "not a RIFF/WAVE container");

  const std::uint8_t* base = bytes.data();
  const std::size_t total = bytes.size();
  std::size_t pos = 12;

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  while (pos + 8 <= total) {
    const std::uint8_t* hdr = base + pos;
    const std::size_t declared = read_u32le(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = total - body;
    if (detail::tag_is(hdr, "fmt ")) {
      if (declared < 16 || available < 16) throw Error(ErrorCode::MalformedContainer, "short fmt chunk");
      format = read_u16le(base + body);
      channels = read_u16le(base + body + 2);
      rate = read_u32le(base + body + 4);
      bits = read_u16le(base + body + 14);
      if (format == 0xFFFE) {
        // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID begins with the real tag.
        if (declared < 40 || available < 40) throw Error(ErrorCode::MalformedContainer, "short extensible fmt chunk");
        format = read_u16le(base + body + 24);
      }
      have_fmt = true;
    } else if (detail::tag_is(hdr, "data")) {
      // Streaming writers sometimes leave the size unset; take what is there.
      data = base + body;
      data_size = std::min(declared, available);
      break;
    }
    if (declared > available) break;
    pos = body + declared + (declared & 1u);
  }

  if (!have_fmt) throw Error(ErrorCode::MalformedContainer, "missing fmt chunk");
  if (data == nullptr) throw Error(ErrorCode::MalformedContainer, "missing data chunk");
  if (rate == 0) throw Error(ErrorCode::MalformedContainer, "zero sample rate");
  if (channels != 1 && channels != 2)
    throw Error(ErrorCode::UnsupportedEncoding, std::to_string(channels) + " channels");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw Error(ErrorCode::UnsupportedEncoding,
                "format " + std::to_string(format) + " with " + std::to_string(bits) + " bits");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) throw Error(ErrorCode::EmptyAudio, "no sample frames");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.source_channels = channels;
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + f * frame_bytes + c * (bits / 8);
      float v;
      if (pcm16) {
        v = static_cast<float>(static_cast<std::int16_t>(read_u16le(p))) / 32768.0f;
      } else {
        v = std::bit_cast<float>(read_u32le(p));
      }
      acc += detail::clamp_unit(v);
    }
    clip.samples[f] = channels == 1 ? acc : acc * 0.5f;
  }
  return clip;
}

inline std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavEncoding encoding = WavEncoding::Pcm16) {
  using namespace detail;
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32le(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32le(out, 16);
  put_u16le(out, encoding == WavEncoding::Pcm16 ? 1 : 3);
  put_u16le(out, 1);
  put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  put_u16le(out, bits / 8);
  put_u16le(out, bits);
  put_tag(out, "data");
  put_u32le(out, data_bytes);
  for (float s : clip.samples) {
    const float x = clamp_unit(s);
    if (encoding == WavEncoding::Pcm16) {
      const long q = std::clamp(std::lround(static_cast<double>(x) * 32768.0), -32768L, 32767L);
      put_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      put_u32le(out, std::bit_cast<std::uint32_t>(x));
    }
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

inline AudioClip load_wav(const std::filesystem::path& path) {
  return decode_wav(read_file_bytes(path));
}

inline void save_wav(const std::filesystem::path& path, const AudioClip& clip,
                     WavEncoding encoding = WavEncoding::Pcm16) {
  write_file_bytes(path, encode_wav(clip, encoding));
}

// Linear interpolation at fractional position `pos`, holding the last sample
// past the end of the buffer.
inline float interpolate_linear(std::span<const float> x, double pos) {
  const auto last = x.size() - 1;
  if (pos <= 0.0) return x.front();
  const auto i = static_cast<std::size_t>(pos);
  if (i >= last) return x[last];
  const double frac = pos - static_cast<double>(i);
  if (frac == 0.0) return x[i];
  return static_cast<float>(x[i] + frac * (static_cast<double>(x[i + 1]) - x[i]));
}

inline AudioClip resample(const AudioClip& clip, int target_sr) {
  if (target_sr <= 0) throw Error(ErrorCode::InvalidArgument, "target sample rate must be positive");
  if (target_sr == clip.sample_rate || clip.empty()) {
    AudioClip out = clip;
    out.sample_rate = target_sr;
    return out;
  }
  const double ratio = static_cast<double>(clip.sample_rate) / target_sr;
  const auto n = static_cast<std::size_t>(
      std::llround(static_cast<double>(clip.size()) * target_sr / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_sr;
  out.source_channels = clip.source_channels;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.samples[i] = interpolate_linear(clip.samples, static_cast<double>(i) * ratio);
  return out;
}

struct TrimOptions {
  double top_db = 20.0;
  std::size_t frame_length = 2048;
  std::size_t hop_length = 512;
  // Frames at or below this absolute level never count as signal.
  double floor_db = -100.0;
};

inline double rms_db(std::span<const float> frame, std::size_t frame_length) {
  double energy = 0.0;
  for (float s : frame) energy += static_cast<double>(s) * s;
  const double rms = std::sqrt(energy / static_cast<double>(frame_length));
  return 20.0 * std::log10(rms + 1e-10);
}

// Kept (non-silent) intervals. A frame is kept when its RMS level lies within
// top_db of the loudest frame.
//
// Frames are uncentered: frame i covers [i*hop, i*hop + frame). A kept run
// [a, b] maps to [a*hop + frame - hop/2, b*hop + hop/2): frames that only
// graze a loud region overshoot it by nearly a full frame, so the boundary is
// placed where the run's outermost frames actually meet the content. Runs
// touching the first or last frame extend to the clip edges; runs too short
// for that mapping fall back to their frame centers +/- hop/2.
inline std::vector<SampleInterval> trim_silence(const AudioClip& clip, const TrimOptions& opt = {}) {
  if (clip.empty()) throw Error(ErrorCode::EmptyAudio, "cannot trim an empty clip");
  if (opt.frame_length == 0 || opt.hop_length == 0)
    throw Error(ErrorCode::InvalidArgument, "frame and hop must be positive");
  const std::span<const float> x = clip.samples;
  const std::size_t len = x.size();
  const std::size_t frame = opt.frame_length;
  const std::size_t hop = opt.hop_length;
  const std::size_t n_frames = len < frame ? 1 : 1 + (len - frame) / hop;

  std::vector<double> db(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    const std::size_t start = i * hop;
    db[i] = rms_db(x.subspan(start, std::min(frame, len - start)), frame);
  }
  const double peak = *std::max_element(db.begin(), db.end());
  const double threshold = std::max(peak - opt.top_db, opt.floor_db);

  std::vector<SampleInterval> out;
  std::size_t i = 0;
  while (i < n_frames) {
    if (!(db[i] > threshold)) {
      ++i;
      continue;
    }
    const std::size_t a = i;
    while (i + 1 < n_frames && db[i + 1] > threshold) ++i;
    const std::size_t b = i++;

    std::size_t start = a * hop + frame - hop / 2;
    std::size_t end = b * hop + hop / 2;
    if (start >= end) {
      start = a * hop + frame / 2 - hop / 2;
      end = b * hop + frame / 2 + hop / 2;
    }
    if (a == 0) start = 0;
    if (b == n_frames - 1) end = len;
    start = std::min(start, len);
    end = std::min(end, len);
    if (!out.empty() && start <= out.back().end) {
      out.back().end = std::max(out.back().end, end);
    } else if (start < end) {
      out.push_back({start, end});
    }
  }
  if (out.empty()) throw Error(ErrorCode::NoSignal, "every frame is below the silence threshold");
  return out;
}

inline AudioClip concat_intervals(const AudioClip& clip, std::span<const SampleInterval> intervals) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_channels = clip.source_channels;
  for (const auto& iv : intervals) {
    const auto end = std::min(iv.end, clip.size());
    if (iv.start < end)
      out.samples.insert(out.samples.end(), clip.samples.begin() + static_cast<std::ptrdiff_t>(iv.start),
                         clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Consecutive windows of `seconds`. A tail of at least half a second is
// zero-padded to a full window; a shorter tail is dropped.
inline std::vector<AudioClip> segment_fixed(const AudioClip& clip, double seconds = 5.0) {
  if (!(seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "segment length must be positive");
  const auto window = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate));
  const auto min_tail = static_cast<std::size_t>(std::llround(0.5 * clip.sample_rate));
  std::vector<AudioClip> out;
  if (window == 0) return out;
  for (std::size_t start = 0; start < clip.size(); start += window) {
    const std::size_t remain = clip.size() - start;
    if (remain < window && remain < min_tail) break;
    AudioClip seg;
    seg.sample_rate = clip.sample_rate;
    seg.source_channels = clip.source_channels;
    seg.samples.assign(window, 0.0f);
    std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(start), std::min(window, remain),
                seg.samples.begin());
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace exsampling
