#pragma once

// Short-time spectra and the mel features fed to the classifiers.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "exsampling/audio.hpp"
#include "exsampling/error.hpp"

namespace exsampling {

// Row-major real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& values() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Spectrogram {
  Matrix magnitudes;  // [n_bins x n_frames]
  std::size_t n_fft = 2048;
  std::size_t hop = 512;
  int sample_rate = kInternalSampleRate;

  std::size_t n_bins() const noexcept { return magnitudes.rows(); }
  std::size_t n_frames() const noexcept { return magnitudes.cols(); }
};

struct FeatureImage {
  std::vector<float> data;  // [n_mels][n_frames][3], row-major
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;

  float at(std::size_t mel, std::size_t frame, std::size_t channel) const {
    return data[(mel * n_frames + frame) * 3 + channel];
  }
};

struct FeatureOptions {
  std::size_t n_fft = 2048;
  std::size_t hop = 512;
  std::size_t n_mels = 64;
};

namespace detail {

// FFTW planning is not thread-safe; execution of an existing plan is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() noexcept { return in_.get(); }
  const fftw_complex* output() const noexcept { return out_.get(); }
  void execute() noexcept { fftw_execute(plan_); }
  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

inline std::size_t stft_frame_count(std::size_t len, std::size_t n_fft, std::size_t hop) {
  return len < n_fft ? 0 : 1 + (len - n_fft) / hop;
}

// Magnitude STFT with a Hann window and no centering.
inline Spectrogram stft_magnitude(const AudioClip& clip, std::size_t n_fft = 2048, std::size_t hop = 512) {
  if (n_fft < 2 || hop == 0) throw Error(ErrorCode::InvalidArgument, "bad n_fft/hop");
  if (clip.size() < n_fft)
    throw Error(ErrorCode::ClipTooShort, "clip has " + std::to_string(clip.size()) + " samples, need " +
                                             std::to_string(n_fft));
  const std::size_t n_frames = stft_frame_count(clip.size(), n_fft, hop);
  const std::size_t n_bins = n_fft / 2 + 1;
  const auto window = hann_window(n_fft);

  Spectrogram spec;
  spec.n_fft = n_fft;
  spec.hop = hop;
  spec.sample_rate = clip.sample_rate;
  spec.magnitudes = Matrix(n_bins, n_frames);

  detail::RealFft fft(n_fft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const float* src = clip.samples.data() + t * hop;
    double* in = fft.input();
    for (std::size_t i = 0; i < n_fft; ++i) in[i] = src[i] * window[i];
    fft.execute();
    const fftw_complex* out = fft.output();
    for (std::size_t k = 0; k < n_bins; ++k) spec.magnitudes(k, t) = std::hypot(out[k][0], out[k][1]);
  }
  return spec;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequencies of the n_mels triangular filters (HTK scale).
inline std::vector<double> mel_band_centers(std::size_t n_mels, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> centers(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m)
    centers[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(n_mels + 1));
  return centers;
}

// [n_mels x n_bins] triangular filters, each scaled so its largest weight is 1.
inline Matrix mel_filterbank(int sample_rate, std::size_t n_fft, std::size_t n_mels, double fmin, double fmax) {
  const std::size_t n_bins = n_fft / 2 + 1;
  if (n_mels < 1 || n_mels > n_bins)
    throw Error(ErrorCode::BadBandCount, std::to_string(n_mels) + " bands for " + std::to_string(n_bins) + " bins");
  if (!(fmax > fmin) || fmin < 0.0) throw Error(ErrorCode::InvalidArgument, "bad mel frequency range");

  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  Matrix fb(n_mels, n_bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double peak = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb(m, k) = w;
      peak = std::max(peak, w);
    }
    if (peak > 0.0) {
      for (std::size_t k = 0; k < n_bins; ++k) fb(m, k) /= peak;
    } else {
      // Band narrower than a bin: pin it to the nearest bin.
      const auto k = std::min(n_bins - 1, static_cast<std::size_t>(std::lround(center / bin_hz)));
      fb(m, k) = 1.0;
    }
  }
  return fb;
}

// Log-power mel matrix [n_mels x n_frames] in dB, clamped to 80 dB below its maximum.
// fmax <= 0 means Nyquist.
inline Matrix log_mel(const Spectrogram& spec, std::size_t n_mels = 64, double fmin = 0.0, double fmax = 0.0) {
  if (fmax <= 0.0) fmax = spec.sample_rate / 2.0;
  if (n_mels < 1 || n_mels > spec.n_bins())
    throw Error(ErrorCode::BadBandCount, std::to_string(n_mels) + " bands");
  const Matrix fb = mel_filterbank(spec.sample_rate, spec.n_fft, n_mels, fmin, fmax);
  const std::size_t n_frames = spec.n_frames();
  Matrix mel(n_mels, n_frames);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < n_mels; ++m) {
    for (std::size_t t = 0; t < n_frames; ++t) {
      double power = 0.0;
      for (std::size_t k = 0; k < spec.n_bins(); ++k) {
        const double w = fb(m, k);
        if (w != 0.0) {
          const double mag = spec.magnitudes(k, t);
          power += w * mag * mag;
        }
      }
      mel(m, t) = 10.0 * std::log10(power + 1e-10);
      top = std::max(top, mel(m, t));
    }
  }
  const double floor = top - 80.0;
  for (double& v : mel.values()) v = std::clamp(v, floor, top);
  return mel;
}

// Min-max normalize to [0, 1] and replicate into three identical channels.
inline FeatureImage feature_image(const Matrix& mel) {
  if (mel.empty()) throw Error(ErrorCode::InvalidArgument, "empty mel matrix");
  const auto [lo_it, hi_it] = std::minmax_element(mel.values().begin(), mel.values().end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  FeatureImage img;
  img.n_mels = mel.rows();
  img.n_frames = mel.cols();
  img.data.resize(mel.rows() * mel.cols() * 3);
  for (std::size_t m = 0; m < mel.rows(); ++m) {
    for (std::size_t t = 0; t < mel.cols(); ++t) {
      const float v = range > 0.0 ? static_cast<float>(std::clamp((mel(m, t) - lo) / range, 0.0, 1.0)) : 0.0f;
      float* px = &img.data[(m * img.n_frames + t) * 3];
      px[0] = px[1] = px[2] = v;
    }
  }
  return img;
}

// Per-band mean followed by per-band (population) standard deviation over time.
inline std::vector<double> summary_features(const Matrix& mel) {
  const std::size_t bands = mel.rows();
  const std::size_t frames = mel.cols();
  std::vector<double> out(2 * bands, 0.0);
  if (frames == 0) return out;
  for (std::size_t m = 0; m < bands; ++m) {
    double sum = 0.0;
    for (std::size_t t = 0; t < frames; ++t) sum += mel(m, t);
    const double mean = sum / static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t t = 0; t < frames; ++t) var += (mel(m, t) - mean) * (mel(m, t) - mean);
    out[m] = mean;
    out[bands + m] = std::sqrt(var / static_cast<double>(frames));
  }
  return out;
}

inline Matrix segment_log_mel(const AudioClip& segment, const FeatureOptions& opt = {}) {
  return log_mel(stft_magnitude(segment, opt.n_fft, opt.hop), opt.n_mels);
}

}  // namespace exsampling
