#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "exsampling/audio.hpp"
#include "exsampling/error.hpp"

namespace exsampling {

struct PitchOptions {
  double min_hz = 50.0;
  double max_hz = 2000.0;
  double clarity_threshold = 0.5;
  double window_seconds = 1.0;
  // Earliest autocorrelation peak within this fraction of the best one wins,
  // which keeps period multiples from being chosen over the period itself.
  double first_peak_ratio = 0.9;
  std::size_t min_samples = 2048;
};

struct PitchEstimate {
  std::optional<double> f0_hz;
  double clarity = 0.0;

  bool present() const noexcept { return f0_hz.has_value(); }
  std::optional<double> midi() const;
};

inline double hz_to_midi(double hz) {
  if (!(hz > 0.0)) throw Error(ErrorCode::NonPositiveFrequency, std::to_string(hz));
  return 69.0 + 12.0 * std::log2(hz / 440.0);
}

inline double midi_to_hz(double midi) { return 440.0 * std::exp2((midi - 69.0) / 12.0); }

inline std::optional<double> PitchEstimate::midi() const {
  if (!f0_hz) return std::nullopt;
  return hz_to_midi(*f0_hz);
}

inline double normalized_autocorrelation(std::span<const float> x, std::size_t lag) {
  if (lag >= x.size()) return 0.0;
  const std::size_t n = x.size() - lag;
  double cross = 0.0, head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = x[i], b = x[i + lag];
    cross += a * b;
    head += a * a;
    tail += b * b;
  }
  const double denom = std::sqrt(head * tail);
  return denom > 0.0 ? cross / denom : 0.0;
}

// Dominant pitch from the normalized autocorrelation of the first second.
inline PitchEstimate estimate_pitch(const AudioClip& clip, const PitchOptions& opt = {}) {
  if (clip.size() < opt.min_samples)
    throw Error(ErrorCode::ClipTooShort, "pitch analysis needs " + std::to_string(opt.min_samples) + " samples");
  const auto window = std::min(clip.size(), static_cast<std::size_t>(opt.window_seconds * clip.sample_rate));
  const std::span<const float> x(clip.samples.data(), window);

  const auto lag_min = static_cast<std::size_t>(std::ceil(clip.sample_rate / opt.max_hz));
  const auto lag_max = std::min(window - 1, static_cast<std::size_t>(std::floor(clip.sample_rate / opt.min_hz)));
  if (lag_min + 2 > lag_max) return {};

  // One extra lag on each side so the range ends can be tested as local maxima.
  std::vector<double> r(lag_max + 2, 0.0);
  for (std::size_t lag = lag_min - 1; lag <= lag_max + 1; ++lag) r[lag] = normalized_autocorrelation(x, lag);

  double best = -1.0;
  for (std::size_t lag = lag_min; lag <= lag_max; ++lag) best = std::max(best, r[lag]);
  if (!(best > 0.0)) return {};

  std::size_t peak = 0;
  for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
    if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= opt.first_peak_ratio * best) {
      peak = lag;
      break;
    }
  }
  // No interior peak: nothing periodic inside the lag range.
  if (peak == 0) return {};

  const double clarity = std::clamp(r[peak], 0.0, 1.0);
  if (clarity < opt.clarity_threshold) return {std::nullopt, clarity};

  double refined = static_cast<double>(peak);
  const double ym = r[peak - 1], y0 = r[peak], yp = r[peak + 1];
  const double curvature = ym - 2.0 * y0 + yp;
  if (curvature < 0.0) refined += 0.5 * (ym - yp) / curvature;

  const double f0 = std::clamp(clip.sample_rate / refined, opt.min_hz, opt.max_hz);
  return {f0, clarity};
}

}  // namespace exsampling
