#pragma once

// Segment-level classification over the 41 labels and clip-level aggregation.
//
// Two providers implement the same interface: a nearest-centroid baseline
// trained from a handful of clips, and a bridge that hands feature images to
// an external model process over stdin/stdout.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exsampling/audio.hpp"
#include "exsampling/error.hpp"
#include "exsampling/labels.hpp"
#include "exsampling/spectral.hpp"
#include "exsampling/subprocess.hpp"

namespace exsampling {

using ProbVector = std::array<double, kLabelCount>;

inline constexpr double kProbSumTolerance = 1e-6;

inline double prob_sum(const ProbVector& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

inline bool is_distribution(const ProbVector& p, double tolerance = kProbSumTolerance) {
  for (double v : p)
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
  return std::abs(prob_sum(p) - 1.0) <= tolerance;
}

// Index of the largest entry; ties go to the lexicographically smaller label.
inline ClassLabel argmax_label(const ProbVector& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return ClassLabel::from_index(best);
}

struct PreprocessOptions {
  int sample_rate = kInternalSampleRate;
  TrimOptions trim;
  double segment_seconds = 5.0;
};

struct Preprocessed {
  AudioClip trimmed;  // kept intervals, concatenated
  std::vector<AudioClip> segments;
};

// resample -> trim silence -> concatenate kept audio -> fixed segments.
// Throws NoSignal for silent input and TooShort when no segment survives.
inline Preprocessed preprocess(const AudioClip& clip, const PreprocessOptions& opt = {}) {
  if (clip.empty()) throw Error(ErrorCode::EmptyAudio, "empty clip");
  const AudioClip mono = resample(clip, opt.sample_rate);
  const auto kept = trim_silence(mono, opt.trim);
  Preprocessed out;
  out.trimmed = concat_intervals(mono, kept);
  out.segments = segment_fixed(out.trimmed, opt.segment_seconds);
  if (out.segments.empty())
    throw Error(ErrorCode::TooShort, "only " + std::to_string(out.trimmed.duration_seconds()) +
                                         " s of signal after trimming");
  return out;
}

inline std::vector<double> segment_features(const AudioClip& segment, const FeatureOptions& opt = {}) {
  return summary_features(segment_log_mel(segment, opt));
}

class ClassifierProvider {
 public:
  virtual ~ClassifierProvider() = default;
  virtual ProbVector predict_segment(const AudioClip& segment) const = 0;
};

// ---------------------------------------------------------------------------
// Baseline: nearest centroid on mel summary statistics.

struct BaselineModel {
  std::map<ClassLabel, std::vector<double>> centroids;
  FeatureOptions features;

  std::size_t dimension() const { return 2 * features.n_mels; }
};

inline void validate(const BaselineModel& model) {
  if (model.centroids.empty()) throw Error(ErrorCode::EmptyClass, "model has no labels");
  for (const auto& [label, c] : model.centroids) {
    if (c.size() != model.dimension())
      throw Error(ErrorCode::InvalidArgument, "centroid for " + std::string(label.name()) + " has wrong size");
    for (double v : c)
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite centroid value");
  }
}

// Features of a training clip: the first segment of its preprocessed audio.
inline std::vector<double> clip_features(const AudioClip& clip, const PreprocessOptions& pre = {},
                                         const FeatureOptions& feat = {}) {
  return segment_features(preprocess(clip, pre).segments.front(), feat);
}

inline BaselineModel train_baseline(const std::map<std::string, std::vector<AudioClip>>& dataset,
                                    const PreprocessOptions& pre = {}, const FeatureOptions& feat = {}) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyClass, "empty training set");
  BaselineModel model;
  model.features = feat;
  for (const auto& [name, clips] : dataset) {
    const auto label = ClassLabel::parse(name);
    if (clips.empty()) throw Error(ErrorCode::EmptyClass, name);
    std::vector<double> sum(model.dimension(), 0.0);
    for (const auto& clip : clips) {
      const auto f = clip_features(clip, pre, feat);
      for (std::size_t i = 0; i < f.size(); ++i) sum[i] += f[i];
    }
    for (double& v : sum) v /= static_cast<double>(clips.size());
    model.centroids[label] = std::move(sum);
  }
  return model;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

// Probabilities proportional to exp(-distance) over the trained labels.
inline ProbVector predict_baseline(const BaselineModel& model, const std::vector<double>& features) {
  if (model.centroids.empty()) throw Error(ErrorCode::EmptyClass, "model has no labels");
  if (features.size() != model.dimension())
    throw Error(ErrorCode::InvalidArgument, "feature vector has " + std::to_string(features.size()) + " values");
  std::vector<std::pair<std::size_t, double>> dist;
  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& [label, centroid] : model.centroids) {
    const double d = euclidean(features, centroid);
    dist.emplace_back(label.index(), d);
    nearest = std::min(nearest, d);
  }
  // Shifting by the nearest distance leaves the normalized result unchanged
  // and keeps exp() away from underflow.
  ProbVector p{};
  double total = 0.0;
  for (const auto& [index, d] : dist) {
    p[index] = std::exp(-(d - nearest));
    total += p[index];
  }
  for (double& v : p) v /= total;
  return p;
}

inline nlohmann::json to_json(const BaselineModel& model) {
  nlohmann::json centroids = nlohmann::json::object();
  for (const auto& [label, c] : model.centroids) centroids[std::string(label.name())] = c;
  return {{"format", "exsampling-baseline-v1"},
          {"n_fft", model.features.n_fft},
          {"hop", model.features.hop},
          {"n_mels", model.features.n_mels},
          {"centroids", centroids}};
}

inline BaselineModel baseline_from_json(const nlohmann::json& j) {
  BaselineModel model;
  model.features.n_fft = j.value("n_fft", std::size_t{2048});
  model.features.hop = j.value("hop", std::size_t{512});
  model.features.n_mels = j.value("n_mels", std::size_t{64});
  for (const auto& [name, values] : j.at("centroids").items())
    model.centroids[ClassLabel::parse(name)] = values.get<std::vector<double>>();
  validate(model);
  return model;
}

inline void save_model(const std::filesystem::path& path, const BaselineModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_json(model).dump() << '\n';
}

inline BaselineModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return baseline_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

class BaselineClassifier final : public ClassifierProvider {
 public:
  explicit BaselineClassifier(BaselineModel model) : model_(std::move(model)) { validate(model_); }

  ProbVector predict_segment(const AudioClip& segment) const override {
    return predict_baseline(model_, segment_features(segment, model_.features));
  }

  const BaselineModel& model() const noexcept { return model_; }

 private:
  BaselineModel model_;
};

// One subdirectory per label, each holding WAV files.
inline std::map<std::string, std::vector<AudioClip>> load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(ErrorCode::Io, root.string() + " is not a directory");
  std::map<std::string, std::vector<AudioClip>> out;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const auto name = dir.path().filename().string();
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      auto ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (f.is_regular_file() && ext == ".wav") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    auto& clips = out[name];
    for (const auto& f : files) clips.push_back(load_wav(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// External model bridge.

struct BridgeConfig {
  std::vector<std::string> command;  // argv; a single string runs through /bin/sh -c
  int timeout_ms = 30000;
  FeatureOptions features;
};

inline std::string bridge_request(const FeatureImage& img) {
  nlohmann::json req = {{"shape", {img.n_mels, img.n_frames, 3}}, {"data", img.data}};
  return req.dump();
}

inline ProbVector parse_bridge_reply(const std::string& line) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BridgeProtocol, std::string("unparseable reply: ") + e.what());
  }
  if (!reply.is_object() || !reply.contains("probs") || !reply["probs"].is_array())
    throw Error(ErrorCode::BridgeProtocol, "reply lacks a probs array");
  const auto& probs = reply["probs"];
  if (probs.size() != kLabelCount)
    throw Error(ErrorCode::BridgeProtocol, "expected 41 probabilities, got " + std::to_string(probs.size()));
  ProbVector p{};
  for (std::size_t i = 0; i < kLabelCount; ++i) {
    if (!probs[i].is_number()) throw Error(ErrorCode::BridgeProtocol, "non-numeric probability");
    p[i] = probs[i].get<double>();
    if (!std::isfinite(p[i]) || p[i] < 0.0) throw Error(ErrorCode::BridgeProtocol, "negative or non-finite probability");
  }
  const double total = prob_sum(p);
  if (std::abs(total - 1.0) > 1e-3)
    throw Error(ErrorCode::BridgeProtocol, "probabilities sum to " + std::to_string(total));
  for (double& v : p) v /= total;
  return p;
}

inline ProbVector predict_external(const BridgeConfig& config, const FeatureImage& features) {
  if (config.command.empty()) throw Error(ErrorCode::BridgeUnavailable, "no bridge command configured");
  std::vector<std::string> argv = config.command;
  if (argv.size() == 1) argv = {"/bin/sh", "-c", config.command.front()};
  const auto line = run_line_exchange(argv, bridge_request(features) + "\n", config.timeout_ms);
  return parse_bridge_reply(line);
}

class ExternalClassifier final : public ClassifierProvider {
 public:
  explicit ExternalClassifier(BridgeConfig config) : config_(std::move(config)) {}

  ProbVector predict_segment(const AudioClip& segment) const override {
    return predict_external(config_, feature_image(segment_log_mel(segment, config_.features)));
  }

 private:
  BridgeConfig config_;
};

// ---------------------------------------------------------------------------
// Clip-level result.

struct ClassificationResult {
  ClassLabel winner = ClassLabel::from_index(0);
  double confidence = 0.0;
  std::vector<ProbVector> per_segment;
  ProbVector aggregated{};
};

inline ProbVector mean_distribution(const std::vector<ProbVector>& rows) {
  ProbVector out{};
  for (const auto& r : rows)
    for (std::size_t i = 0; i < kLabelCount; ++i) out[i] += r[i];
  for (double& v : out) v /= static_cast<double>(rows.size());
  return out;
}

inline ClassificationResult classify_segments(const std::vector<AudioClip>& segments,
                                              const ClassifierProvider& provider) {
  if (segments.empty()) throw Error(ErrorCode::TooShort, "no segments to classify");
  ClassificationResult result;
  result.per_segment.reserve(segments.size());
  for (const auto& seg : segments) result.per_segment.push_back(provider.predict_segment(seg));
  result.aggregated = mean_distribution(result.per_segment);
  result.winner = argmax_label(result.aggregated);
  result.confidence = result.aggregated[result.winner.index()];
  return result;
}

inline ClassificationResult classify_clip(const AudioClip& clip, const ClassifierProvider& provider,
                                          const PreprocessOptions& opt = {}) {
  return classify_segments(preprocess(clip, opt).segments, provider);
}

}  // namespace exsampling
