#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>

#include "exsampling/exsampling.hpp"
#include "exsampling/http_api.hpp"
#include "osc_support.hpp"
#include "signals.hpp"
#include "tempdir.hpp"

using namespace exsampling;
using namespace std::chrono_literals;

namespace {

std::shared_ptr<const ClassifierProvider> tone_noise_classifier() {
  static const auto model = [] {
    std::map<std::string, std::vector<AudioClip>> ds;
    for (int i = 0; i < 3; ++i) {
      ds["Flute"].push_back(testsig::sine(300.0 + 200.0 * i, 1.5, 22050, 0.6));
      ds["Applause"].push_back(testsig::white_noise(1.5, static_cast<std::uint32_t>(50 + i)));
    }
    return train_baseline(ds);
  }();
  return std::make_shared<BaselineClassifier>(model);
}

std::vector<std::uint8_t> wav_bytes(const AudioClip& c) { return encode_wav(c, WavEncoding::Pcm16); }

Submission submission(const AudioClip& c) {
  Submission s;
  s.audio = wav_bytes(c);
  return s;
}

ServiceConfig config_for(const testsig::TempDir& dir) {
  ServiceConfig cfg;
  cfg.sample_dir = dir.path;
  cfg.osc_target.reset();
  cfg.bind = {"127.0.0.1", 0};
  return cfg;
}

Service::Hooks quiet_hooks(Service::Announcer announce = {}) {
  Service::Hooks h;
  h.announce = std::move(announce);
  h.log = [](const std::string&) {};
  return h;
}

ErrorCode submit_error(Service& svc, Submission s) {
  try {
    svc.submit(std::move(s));
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("submit succeeded unexpectedly");
  return ErrorCode::Io;
}

SubmissionStatus wait_terminal(const Service& svc, const std::string& id, std::chrono::milliseconds timeout = 20s) {
  const auto until = std::chrono::steady_clock::now() + timeout;
  while (true) {
    auto s = svc.get_status(id);
    if (s.terminal() || std::chrono::steady_clock::now() > until) return s;
    std::this_thread::sleep_for(5ms);
  }
}

}  // namespace

TEST_CASE("config JSON fills in documented defaults", "[service]") {
  const auto c = ServiceConfig::from_json(nlohmann::json::parse(R"({
    "bind": "0.0.0.0:8080", "osc_target": "127.0.0.1:9000", "sample_dir": "./samples",
    "mapping_overrides": {"Bark": "Piano"}, "top_db": 20.0, "segment_seconds": 5.0, "workers": 2,
    "classifier": {"kind": "baseline", "model_path": "m.json"}})"));
  REQUIRE(c.bind.port == 8080);
  REQUIRE(c.osc_target->port == 9000);
  REQUIRE(map_label("Bark", c.mapping) == InstrumentTrack::Piano);
  REQUIRE(c.workers == 2);
  REQUIRE(c.queue_capacity == 64);
  REQUIRE(c.max_upload_bytes == 16u * 1024 * 1024);
  REQUIRE(c.classifier.model_path == "m.json");

  const auto ext = ServiceConfig::from_json({{"classifier", {{"kind", "external"}, {"command", "python3 m.py"}}}});
  REQUIRE(ext.classifier.command == std::vector<std::string>{"python3 m.py"});
  REQUIRE_THROWS_AS(ServiceConfig::from_json({{"workers", 0}}), Error);
  REQUIRE_THROWS_AS(make_classifier(ClassifierConfig{"mystery", "", {}, 1}), Error);
}

TEST_CASE("rejection reasons", "[service]") {
  REQUIRE(rejection_reason(ErrorCode::NoSignal) == "no_signal");
  REQUIRE(rejection_reason(ErrorCode::TooShort) == "too_short");
  REQUIRE(rejection_reason(ErrorCode::MalformedContainer) == "malformed_audio");
  REQUIRE(rejection_reason(ErrorCode::UnsupportedEncoding) == "malformed_audio");
  REQUIRE(rejection_reason(ErrorCode::TooLarge) == "too_large");
}

TEST_CASE("status transitions only move forward", "[service]") {
  StatusStore store;
  SubmissionStatus fresh;
  fresh.id = "x";
  store.insert(fresh);
  store.update("x", [](SubmissionStatus& s) { s.state = SubmissionState::Processing; });
  REQUIRE_THROWS_AS(store.update("x", [](SubmissionStatus& s) { s.state = SubmissionState::Queued; }), Error);
  store.update("x", [](SubmissionStatus& s) { s.state = SubmissionState::Rejected; });
  REQUIRE_THROWS_AS(store.update("x", [](SubmissionStatus& s) { s.state = SubmissionState::Done; }), Error);
  REQUIRE_THROWS_AS(store.update("y", [](SubmissionStatus&) {}), Error);
}

TEST_CASE("ids are 128-bit hex and unique", "[service]") {
  std::set<std::string> ids;
  for (int i = 0; i < 1000; ++i) {
    const auto id = random_id();
    REQUIRE(id.size() == 32);
    REQUIRE(id.find_first_not_of("0123456789abcdef") == std::string::npos);
    ids.insert(id);
  }
  REQUIRE(ids.size() == 1000);
}

TEST_CASE("submit rejects oversized and non-WAV payloads", "[service]") {
  testsig::TempDir dir("svc");
  Service svc(config_for(dir), tone_noise_classifier(), quiet_hooks());
  Submission big;
  big.audio.assign(20u << 20, 0);
  REQUIRE(submit_error(svc, std::move(big)) == ErrorCode::TooLarge);
  Submission text;
  const std::string body = "hello, this is not audio at all";
  text.audio.assign(body.begin(), body.end());
  REQUIRE(submit_error(svc, std::move(text)) == ErrorCode::MalformedAudio);
  auto bad_loc = submission(testsig::sine(440.0, 1.0));
  bad_loc.location = GeoLocation{91.0, 0.0};
  REQUIRE(submit_error(svc, std::move(bad_loc)) == ErrorCode::InvalidArgument);
  REQUIRE(std::filesystem::is_empty(dir.path));
}

TEST_CASE("a tone is classified, stored, assigned and announced once", "[service]") {
  testsig::TempDir dir("svc");
  testosc::Capture cap;
  auto cfg = config_for(dir);
  cfg.osc_target = cap.endpoint();
  Service svc(cfg, tone_noise_classifier(), quiet_hooks());

  auto sub = submission(testsig::concat({testsig::silence(0.5), testsig::sine(440.0, 3.0, 22050, 0.5),
                                         testsig::silence(0.5)}));
  sub.location = GeoLocation{35.39, 139.43};
  const auto id = svc.submit(std::move(sub));
  REQUIRE(std::filesystem::exists(svc.upload_path(id)));
  const auto first = svc.get_status(id).state;
  REQUIRE((first == SubmissionState::Queued || first == SubmissionState::Processing || first == SubmissionState::Done));

  const auto status = wait_terminal(svc, id);
  REQUIRE(status.state == SubmissionState::Done);
  REQUIRE(status.label == ClassLabel::parse("Flute"));
  REQUIRE(status.instrument == InstrumentTrack::Wind);
  REQUIRE(status.pitch_detected);
  REQUIRE(std::abs(status.original_midi - 69.0) < 0.5);

  const auto got = cap.wait_for(1, 2s);
  std::this_thread::sleep_for(100ms);
  REQUIRE(cap.all().size() == 1);
  const auto& msg = *got.at(0).message;
  REQUIRE(msg.address == "/exsampling/sample");
  REQUIRE(std::get<std::string>(msg.args[0]) == id);
  REQUIRE(std::get<std::string>(msg.args[2]) == "Flute");
  REQUIRE(std::get<std::string>(msg.args[3]) == "Wind");
  REQUIRE(std::get<std::int32_t>(msg.args[7]) == 1);

  const auto state = svc.get_state();
  for (auto t : kAllTracks) REQUIRE(state[track_index(t)].has_value() == (t == InstrumentTrack::Wind));
  REQUIRE(state[track_index(InstrumentTrack::Wind)]->location == GeoLocation{35.39, 139.43});

  // The stored sample is the trimmed audio, playable and lossless.
  const auto stored = load_wav(std::get<std::string>(msg.args[1]));
  REQUIRE(stored.sample_rate == 22050);
  const auto trimmed = preprocess(decode_wav(wav_bytes(testsig::concat(
                                      {testsig::silence(0.5), testsig::sine(440.0, 3.0, 22050, 0.5), testsig::silence(0.5)}))))
                           .trimmed;
  REQUIRE(stored.samples == trimmed.samples);

  const auto saved = snapshot_from_json(nlohmann::json::parse(std::ifstream(dir.path / "assignments.json")));
  REQUIRE(saved[track_index(InstrumentTrack::Wind)]->sample_id == id);
}

TEST_CASE("silent and short recordings are rejected without side effects", "[service]") {
  testsig::TempDir dir("svc");
  std::atomic<int> announced{0};
  Service svc(config_for(dir), tone_noise_classifier(), quiet_hooks([&](const osc::Message&) { ++announced; }));

  const auto silent = svc.submit(submission(testsig::silence(3.0)));
  const auto short_id =
      svc.submit(submission(testsig::concat({testsig::silence(1.0), testsig::sine(440.0, 0.3), testsig::silence(1.0)})));
  Submission garbled;
  garbled.audio = wav_bytes(testsig::sine(440.0, 1.0));
  garbled.audio[20] = 9;  // unknown format code
  const auto garbled_id = svc.submit(std::move(garbled));
  svc.wait_idle();

  const auto s1 = svc.get_status(silent);
  REQUIRE(s1.state == SubmissionState::Rejected);
  REQUIRE(s1.reason == "no_signal");
  const auto s2 = svc.get_status(short_id);
  REQUIRE(s2.state == SubmissionState::Rejected);
  REQUIRE(s2.reason == "too_short");
  REQUIRE(svc.get_status(garbled_id).reason == "malformed_audio");
  REQUIRE(to_json(s2)["reason"] == "too_short");

  REQUIRE(announced == 0);
  REQUIRE(svc.registry().size() == 0);
}

TEST_CASE("unknown ids are not found", "[service]") {
  testsig::TempDir dir("svc");
  Service svc(config_for(dir), tone_noise_classifier(), quiet_hooks());
  REQUIRE_FALSE(svc.find_status("nope").has_value());
  try {
    svc.get_status("nope");
    FAIL("expected NotFound");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::NotFound);
  }
}

TEST_CASE("fresh state is empty", "[service]") {
  testsig::TempDir dir("svc");
  Service svc(config_for(dir), tone_noise_classifier(), quiet_hooks());
  const auto j = state_to_json(svc.get_state());
  REQUIRE(j["tracks"].size() == 8);
  for (const auto& [name, v] : j["tracks"].items()) REQUIRE(v.is_null());
}

TEST_CASE("the later submission wins a track", "[service]") {
  testsig::TempDir dir("svc");
  auto cfg = config_for(dir);
  cfg.workers = 4;
  std::atomic<std::int64_t> tick{1000};
  auto hooks = quiet_hooks();
  hooks.clock = [&] { return tick.fetch_add(1); };
  Service svc(cfg, tone_noise_classifier(), hooks);

  // The first clip is long, so it finishes after the second when run in parallel.
  const auto a = svc.submit(submission(testsig::sine(523.0, 15.0, 22050, 0.5)));
  const auto b = svc.submit(submission(testsig::sine(330.0, 2.0, 22050, 0.5)));
  svc.wait_idle();
  REQUIRE(svc.get_status(a).state == SubmissionState::Done);
  REQUIRE(svc.get_status(b).state == SubmissionState::Done);
  const auto wind = svc.get_state()[track_index(InstrumentTrack::Wind)];
  REQUIRE(wind->sample_id == b);
  REQUIRE(wind->received_at_ms == 1001);
}

TEST_CASE("fifty concurrent submissions all finish", "[service]") {
  testsig::TempDir dir("svc");
  std::atomic<int> announced{0};
  Service svc(config_for(dir), tone_noise_classifier(), quiet_hooks([&](const osc::Message&) { ++announced; }));

  std::vector<std::thread> clients;
  std::mutex m;
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) {
    clients.emplace_back([&, i] {
      const auto clip = i % 5 == 0 ? testsig::silence(1.0) : testsig::sine(200.0 + 10.0 * i, 1.0, 22050, 0.4);
      const auto id = svc.submit(submission(clip));
      std::lock_guard lock(m);
      ids.push_back(id);
    });
  }
  for (auto& t : clients) t.join();
  REQUIRE(ids.size() == 50);
  svc.wait_idle();
  int done = 0;
  for (const auto& id : ids) {
    const auto s = svc.get_status(id);
    REQUIRE(s.terminal());
    done += s.state == SubmissionState::Done;
  }
  REQUIRE(done == 40);
  REQUIRE(announced == 40);
}

TEST_CASE("a full queue answers too busy", "[service]") {
  testsig::TempDir dir("svc");
  auto cfg = config_for(dir);
  cfg.workers = 1;
  cfg.queue_capacity = 2;
  Service svc(cfg, tone_noise_classifier(), quiet_hooks());
  int busy = 0;
  for (int i = 0; i < 8; ++i) {
    try {
      svc.submit(submission(testsig::sine(440.0, 10.0, 22050, 0.5)));
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::TooBusy);
      ++busy;
    }
  }
  REQUIRE(busy >= 5);
  svc.wait_idle();
}

// ---------------------------------------------------------------------------
// HTTP front end.

TEST_CASE("HTTP API end to end", "[service]") {
  testsig::TempDir dir("http");
  testosc::Capture cap;
  auto cfg = config_for(dir);
  cfg.osc_target = cap.endpoint();
  cfg.max_upload_bytes = 1u << 20;
  Service svc(cfg, tone_noise_classifier(), quiet_hooks());
  HttpApi api(svc);
  const auto port = api.start({"127.0.0.1", 0});
  httplib::Client cli("127.0.0.1", port);

  SECTION("labels and state") {
    auto res = cli.Get("/api/labels");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto labels = nlohmann::json::parse(res->body)["labels"];
    REQUIRE(labels.size() == 41);
    REQUIRE(labels[0]["label"] == "Acoustic_guitar");
    res = cli.Get("/api/state");
    REQUIRE(res->status == 200);
    REQUIRE(nlohmann::json::parse(res->body)["tracks"].size() == 8);
  }

  SECTION("upload and poll") {
    const auto body = wav_bytes(testsig::sine(440.0, 5.0, 22050, 0.5));
    auto res = cli.Post("/api/recordings?lat=35.39&lon=139.43&participant=p1",
                        std::string(body.begin(), body.end()), "audio/wav");
    REQUIRE(res);
    REQUIRE(res->status == 202);
    const auto accepted = nlohmann::json::parse(res->body);
    REQUIRE(accepted["state"] == "queued");
    const std::string id = accepted["id"];

    nlohmann::json status;
    for (int i = 0; i < 400; ++i) {
      res = cli.Get("/api/recordings/" + id);
      REQUIRE(res->status == 200);
      status = nlohmann::json::parse(res->body);
      if (status["state"] == "done" || status["state"] == "rejected") break;
      std::this_thread::sleep_for(25ms);
    }
    REQUIRE(status["state"] == "done");
    REQUIRE(status["label"] == "Flute");
    REQUIRE(status["instrument"] == "Wind");
    REQUIRE(cap.wait_for(1, 2s).size() == 1);

    const auto state = nlohmann::json::parse(cli.Get("/api/state")->body);
    REQUIRE(state["tracks"]["Wind"]["id"] == id);
    REQUIRE(state["tracks"]["Wind"]["location"]["lat"] == 35.39);
  }

  SECTION("errors") {
    auto res = cli.Get("/api/recordings/unknown");
    REQUIRE(res->status == 404);
    res = cli.Post("/api/recordings", "plain text", "text/plain");
    REQUIRE(res->status == 400);
    REQUIRE(nlohmann::json::parse(res->body)["error"] == "malformed_audio");
    const auto body = wav_bytes(testsig::sine(440.0, 1.0));
    res = cli.Post("/api/recordings?lat=95&lon=0", std::string(body.begin(), body.end()), "audio/wav");
    REQUIRE(res->status == 400);
    REQUIRE(nlohmann::json::parse(res->body)["error"] == "bad_location");
    res = cli.Post("/api/recordings?lat=1", std::string(body.begin(), body.end()), "audio/wav");
    REQUIRE(res->status == 400);
    res = cli.Post("/api/recordings", std::string((1u << 20) + 10, 'R'), "audio/wav");
    REQUIRE(res->status == 413);
  }

  SECTION("recorder pages") {
    auto res = cli.Get("/");
    REQUIRE(res->status == 200);
    REQUIRE(res->get_header_value("Content-Type").find("text/html") == 0);
    res = cli.Get("/join");
    REQUIRE(res->status == 200);
    REQUIRE(res->body.find("http://127.0.0.1:" + std::to_string(port) + "/") != std::string::npos);
  }
  api.stop();
}

TEST_CASE("static recorder assets are served when configured", "[service]") {
  testsig::TempDir dir("http");
  testsig::TempDir assets("assets");
  std::ofstream(assets.path / "index.html") << "<html>recorder</html>";
  std::ofstream(assets.path / "app.js") << "console.log(1)";
  auto cfg = config_for(dir);
  cfg.static_dir = assets.path;
  Service svc(cfg, tone_noise_classifier(), quiet_hooks());
  HttpApi api(svc);
  httplib::Client cli("127.0.0.1", api.start({"127.0.0.1", 0}));
  REQUIRE(cli.Get("/")->body == "<html>recorder</html>");
  REQUIRE(cli.Get("/static/app.js")->body == "console.log(1)");
}

// ---------------------------------------------------------------------------
// Command-line tool.

namespace {

std::pair<int, std::string> run(const std::string& cmd) {
  std::string out;
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  const int rc = ::pclose(p);
  return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, out};
}

}  // namespace

TEST_CASE("CLI trains, classifies and renders", "[service]") {
  testsig::TempDir dir("cli");
  const std::string cli = EXSAMPLING_CLI_PATH;
  for (int i = 0; i < 3; ++i) {
    std::filesystem::create_directories(dir.path / "data" / "Flute");
    std::filesystem::create_directories(dir.path / "data" / "Applause");
    save_wav(dir.path / "data" / "Flute" / (std::to_string(i) + ".wav"), testsig::sine(300.0 + 200.0 * i, 1.5, 22050, 0.6));
    save_wav(dir.path / "data" / "Applause" / (std::to_string(i) + ".wav"),
             testsig::white_noise(1.5, static_cast<std::uint32_t>(50 + i)));
  }
  const auto model = (dir.path / "model.json").string();
  auto [rc, out] = run(cli + " train-baseline " + (dir.path / "data").string() + " --out " + model);
  REQUIRE(rc == 0);
  REQUIRE(load_model(model).centroids.size() == 2);

  const auto wav = (dir.path / "tone.wav").string();
  save_wav(wav, testsig::sine(440.0, 3.0, 44100, 0.5));
  std::tie(rc, out) = run(cli + " classify " + wav + " --model " + model + " --json");
  REQUIRE(rc == 0);
  const auto j = nlohmann::json::parse(out);
  REQUIRE(j["label"] == "Flute");
  REQUIRE(j["instrument"] == "Wind");
  REQUIRE(std::abs(j["midi"].get<double>() - 69.0) < 0.5);

  // Render against a saved assignment file.
  SampleAssignment a;
  a.sample_id = "s";
  a.file_path = wav;
  a.label = ClassLabel::parse("Flute");
  a.instrument = InstrumentTrack::Wind;
  a.detected_midi = 69.0;
  RegistrySnapshot snap;
  snap[track_index(InstrumentTrack::Wind)] = a;
  std::ofstream(dir.path / "assignments.json") << snapshot_to_json(snap).dump();
  std::ofstream(dir.path / "score.json")
      << R"([{"instrument":"Wind","note":81,"velocity":100,"duration_ms":500},{"instrument":"BD","note":36,"duration_ms":100}])";
  const auto out_wav = (dir.path / "out.wav").string();
  std::tie(rc, out) = run(cli + " render --score " + (dir.path / "score.json").string() + " --state " +
                          (dir.path / "assignments.json").string() + " --out " + out_wav);
  REQUIRE(rc == 0);
  REQUIRE(out.find("skipped") != std::string::npos);
  const auto rendered = load_wav(out_wav);
  REQUIRE(rendered.size() == 500 * 22050 / 1000);
  REQUIRE(std::abs(testsig::dominant_frequency(rendered, 600.0, 1200.0) - 880.0) < 8.8);

  std::tie(rc, out) = run(cli + " join-url --host example.local");
  REQUIRE(rc == 0);
  REQUIRE(out == "http://example.local:8080/\n");

  std::tie(rc, out) = run(cli + " classify " + wav);
  REQUIRE(rc != 0);
  std::tie(rc, out) = run(cli + " bogus");
  REQUIRE(rc != 0);
}
