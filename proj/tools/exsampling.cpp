// Command-line entry point: run the server, classify or render offline.

#include <ifaddrs.h>
#include <net/if.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <csignal>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "exsampling/exsampling.hpp"
#include "exsampling/http_api.hpp"

namespace {

using namespace exsampling;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return nlohmann::json::parse(in);
}

// First non-loopback IPv4 address, or loopback if there is none.
std::string lan_address() {
  ifaddrs* list = nullptr;
  std::string found = "127.0.0.1";
  if (::getifaddrs(&list) != 0) return found;
  for (ifaddrs* it = list; it != nullptr; it = it->ifa_next) {
    if (it->ifa_addr == nullptr || it->ifa_addr->sa_family != AF_INET) continue;
    if (it->ifa_flags & IFF_LOOPBACK) continue;
    char buf[INET_ADDRSTRLEN];
    const auto* in = reinterpret_cast<const sockaddr_in*>(it->ifa_addr);
    if (::inet_ntop(AF_INET, &in->sin_addr, buf, sizeof buf)) {
      found = buf;
      break;
    }
  }
  ::freeifaddrs(list);
  return found;
}

int cmd_serve(const std::string& config_path) {
  const ServiceConfig config = ServiceConfig::load(config_path);
  std::shared_ptr<const ClassifierProvider> classifier = make_classifier(config.classifier);
  Service service(config, classifier);
  HttpApi http(service);

  std::unique_ptr<LiveMixer> mixer;
  std::unique_ptr<osc::UdpListener> notes;
  if (config.note_listen) {
    mixer = std::make_unique<LiveMixer>(
        [&service] { return service.get_state(); },
        [](const NoteEvent& ev, const AudioClip& out) {
          std::clog << "[exsampling] note " << ev.note << " on " << to_string(ev.instrument) << ": " << out.size()
                    << " samples\n";
        },
        [](const NoteEvent& ev, const std::string& why) {
          std::clog << "[exsampling] note on " << to_string(ev.instrument) << " skipped: " << why << '\n';
        });
    notes = std::make_unique<osc::UdpListener>(*config.note_listen, [&mixer](const osc::Received& r) {
      if (!r.message) {
        std::clog << "[exsampling] dropped datagram: " << r.error << '\n';
        return;
      }
      try {
        mixer->enqueue(osc::parse_note(*r.message));
      } catch (const std::exception& e) {
        std::clog << "[exsampling] bad note message: " << e.what() << '\n';
      }
    });
    std::clog << "[exsampling] note input on udp port " << notes->port() << '\n';
  }

  const auto port = http.start(config.bind);
  std::clog << "[exsampling] listening on " << config.bind.host << ':' << port << ", samples in "
            << config.sample_dir.string() << '\n';
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http.stop();
  if (notes) notes->stop();
  service.shutdown();
  return 0;
}

int cmd_classify(const std::string& wav, const std::string& model_path, const std::string& config_path, bool as_json) {
  ServiceConfig config;
  if (!config_path.empty()) config = ServiceConfig::load(config_path);
  if (!model_path.empty()) {
    config.classifier.kind = "baseline";
    config.classifier.model_path = model_path;
  }
  const auto classifier = make_classifier(config.classifier);
  const AudioClip clip = load_wav(wav);
  const Preprocessed pre = preprocess(clip, config.preprocess_options());
  const ClassificationResult result = classify_segments(pre.segments, *classifier);
  const PitchEstimate pitch = estimate_pitch(pre.trimmed);
  const InstrumentTrack track = map_label(result.winner, config.mapping);

  if (as_json) {
    nlohmann::json j = {{"label", result.winner.name()},
                        {"instrument", to_string(track)},
                        {"confidence", result.confidence},
                        {"segments", result.per_segment.size()},
                        {"pitch_hz", pitch.f0_hz ? nlohmann::json(*pitch.f0_hz) : nlohmann::json(nullptr)},
                        {"midi", pitch.midi() ? nlohmann::json(*pitch.midi()) : nlohmann::json(nullptr)},
                        {"clarity", pitch.clarity}};
    std::cout << j.dump() << '\n';
  } else {
    std::cout << result.winner.name() << " -> " << to_string(track) << " (confidence " << result.confidence << ", "
              << result.per_segment.size() << " segment(s))\n";
    if (pitch.present())
      std::cout << "pitch " << *pitch.f0_hz << " Hz, MIDI " << *pitch.midi() << " (clarity " << pitch.clarity << ")\n";
    else
      std::cout << "no dominant pitch (clarity " << pitch.clarity << ")\n";
  }
  return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& out) {
  const auto dataset = load_dataset(dataset_dir);
  const auto model = train_baseline(dataset);
  save_model(out, model);
  std::size_t clips = 0;
  for (const auto& [_, v] : dataset) clips += v.size();
  std::cout << "trained " << model.centroids.size() << " label(s) from " << clips << " clip(s) -> " << out << '\n';
  return 0;
}

int cmd_render(const std::string& score_path, const std::string& state_path, const std::string& out) {
  const auto events = score_from_json(read_json(score_path));
  const auto voices = load_voices(snapshot_from_json(read_json(state_path)));
  const auto rendered = render_score(events, voices);
  for (const auto& s : rendered.skipped) std::clog << "skipped " << s << '\n';
  save_wav(out, rendered.mix, WavEncoding::Pcm16);
  std::cout << "wrote " << rendered.mix.duration_seconds() << " s to " << out << '\n';
  return 0;
}

int cmd_join_url(const std::string& config_path, const std::string& host_override) {
  ServiceConfig config;
  if (!config_path.empty()) config = ServiceConfig::load(config_path);
  std::string host = host_override;
  if (host.empty()) host = config.bind.host == "0.0.0.0" ? lan_address() : config.bind.host;
  std::cout << "http://" << host << ':' << config.bind.port << "/\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exsampling: field recordings to live sampler tracks"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "Run the ingestion server");
  serve->add_option("--config", config_path, "Server config JSON")->required()->check(CLI::ExistingFile);

  std::string wav, model_path;
  bool as_json = false;
  auto* classify = app.add_subcommand("classify", "Classify one WAV file");
  classify->add_option("wav", wav, "Input WAV")->required()->check(CLI::ExistingFile);
  classify->add_option("--model", model_path, "Baseline model JSON");
  classify->add_option("--config", config_path, "Server config JSON (classifier, mapping, trimming)");
  classify->add_flag("--json", as_json, "Print one JSON object");

  std::string dataset_dir, out_path;
  auto* train = app.add_subcommand("train-baseline", "Train the nearest-centroid model");
  train->add_option("dataset_dir", dataset_dir, "One subdirectory of WAV files per label")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", out_path, "Model output path")->required();

  std::string score_path, state_path;
  auto* render = app.add_subcommand("render", "Render a note score against sample assignments");
  render->add_option("--score", score_path, "Score JSON (list of note events)")->required()->check(CLI::ExistingFile);
  render->add_option("--state", state_path, "Assignments JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--out", out_path, "Output WAV")->required();

  std::string host;
  auto* join = app.add_subcommand("join-url", "Print the recorder URL for QR display");
  join->add_option("--config", config_path, "Server config JSON");
  join->add_option("--host", host, "Host name to advertise");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return cmd_serve(config_path);
    if (*classify) {
      if (model_path.empty() && config_path.empty()) {
        std::cerr << "classify: give --model or --config\n";
        return 2;
      }
      return cmd_classify(wav, model_path, config_path, as_json);
    }
    if (*train) return cmd_train(dataset_dir, out_path);
    if (*render) return cmd_render(score_path, state_path, out_path);
    if (*join) return cmd_join_url(config_path, host);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
