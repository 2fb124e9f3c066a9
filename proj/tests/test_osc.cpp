#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "osc_support.hpp"

using namespace exsampling;
using namespace exsampling::osc;
using Bytes = std::vector<std::uint8_t>;

namespace {

ErrorCode decode_error(const Bytes& bytes) {
  try {
    decode(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("decode succeeded unexpectedly");
  return ErrorCode::Io;
}

SampleAssignment flute_assignment() {
  SampleAssignment a;
  a.sample_id = "abc123";
  a.file_path = "/srv/samples/abc123.wav";
  a.label = ClassLabel::parse("Flute");
  a.instrument = InstrumentTrack::Wind;
  a.detected_midi = 69.25;
  return a;
}

}  // namespace

TEST_CASE("golden bytes for hand-encoded messages", "[osc]") {
  REQUIRE(encode({"/t", {std::int32_t{1}}}) == Bytes{0x2F, 0x74, 0, 0, 0x2C, 0x69, 0, 0, 0, 0, 0, 1});
  REQUIRE(encode({"/a", {}}) == Bytes{0x2F, 0x61, 0, 0, 0x2C, 0, 0, 0});
  const auto f = encode({"/x", {1.0f}});
  REQUIRE(f.size() == 12);
  REQUIRE(Bytes(f.end() - 4, f.end()) == Bytes{0x3F, 0x80, 0, 0});
}

TEST_CASE("strings and blobs are padded to four bytes", "[osc]") {
  // "/abc" needs a full word of NULs after it.
  REQUIRE(encode({"/abc", {}}) == Bytes{'/', 'a', 'b', 'c', 0, 0, 0, 0, ',', 0, 0, 0});
  REQUIRE(encode({"/b", {Blob{{9, 8, 7, 6, 5}}}}) ==
          Bytes{'/', 'b', 0, 0, ',', 'b', 0, 0, 0, 0, 0, 5, 9, 8, 7, 6, 5, 0, 0, 0});
  REQUIRE(encode({"/s", {std::string{}}}) == Bytes{'/', 's', 0, 0, ',', 's', 0, 0, 0, 0, 0, 0});
}

TEST_CASE("examples round trip", "[osc]") {
  for (const Message& m : {Message{"/t", {std::int32_t{1}}}, Message{"/a", {}}, Message{"/x", {1.0f}}})
    REQUIRE(decode(encode(m)) == m);
}

TEST_CASE("encode rejects bad addresses", "[osc]") {
  for (const char* bad : {"", "t", "no/slash"}) {
    try {
      encode({bad, {}});
      FAIL("expected InvalidAddress");
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::InvalidAddress);
    }
  }
}

TEST_CASE("decode rejects malformed packets", "[osc]") {
  REQUIRE(decode_error(Bytes(11, 0x2F)) == ErrorCode::Malformed);
  REQUIRE(decode_error({}) == ErrorCode::Malformed);
  REQUIRE(decode_error({'/', 'q', 0, 0, ',', 'q', 0, 0}) == ErrorCode::UnsupportedType);
  // Address with no terminator inside the packet.
  REQUIRE(decode_error({'/', 'a', 'b', 'c'}) == ErrorCode::Malformed);
  // Missing type tag string.
  REQUIRE(decode_error({'/', 'a', 0, 0}) == ErrorCode::Malformed);
  // Non-zero padding.
  REQUIRE(decode_error({'/', 'a', 0, 1, ',', 0, 0, 0}) == ErrorCode::Malformed);
  // Int argument missing.
  REQUIRE(decode_error({'/', 'a', 0, 0, ',', 'i', 0, 0}) == ErrorCode::Malformed);
  // Trailing word.
  REQUIRE(decode_error({'/', 'a', 0, 0, ',', 0, 0, 0, 0, 0, 0, 0}) == ErrorCode::Malformed);
  // Blob length past the end.
  REQUIRE(decode_error({'/', 'a', 0, 0, ',', 'b', 0, 0, 0, 0, 0, 9, 1, 2, 3, 4}) == ErrorCode::Malformed);
}

TEST_CASE("random messages round trip with aligned encodings", "[osc]") {
  std::mt19937 rng(20240601);
  for (int i = 0; i < 2000; ++i) {
    const auto m = testosc::random_message(rng);
    const auto bytes = encode(m);
    REQUIRE(bytes.size() % 4 == 0);
    REQUIRE(decode(bytes) == m);
  }
}

TEST_CASE("decode never crashes on random bytes", "[osc]") {
  std::mt19937 rng(3);
  for (int i = 0; i < 2000; ++i) {
    Bytes b(4 * (rng() % 12));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    if (!b.empty() && rng() % 2) b[0] = '/';
    try {
      const auto m = decode(b);
      REQUIRE(encode(m) == b);
    } catch (const Error& e) {
      REQUIRE((e.code() == ErrorCode::Malformed || e.code() == ErrorCode::UnsupportedType));
    }
  }
}

TEST_CASE("sample announcement layout", "[osc]") {
  const auto m = sample_announce(flute_assignment());
  REQUIRE(m.address == "/exsampling/sample");
  REQUIRE(m.args.size() == 8);
  REQUIRE(std::get<std::string>(m.args[0]) == "abc123");
  REQUIRE(std::get<std::string>(m.args[1]) == "/srv/samples/abc123.wav");
  REQUIRE(std::get<std::string>(m.args[2]) == "Flute");
  REQUIRE(std::get<std::string>(m.args[3]) == "Wind");
  REQUIRE(std::get<float>(m.args[4]) == 69.25f);
  REQUIRE(std::get<float>(m.args[5]) == 0.0f);
  REQUIRE(std::get<float>(m.args[6]) == 0.0f);
  REQUIRE(std::get<std::int32_t>(m.args[7]) == 0);
  const auto bytes = encode(m);
  REQUIRE(std::string(reinterpret_cast<const char*>(bytes.data()) + 20, 10) == std::string(",ssssfffi\0", 10));
}

TEST_CASE("sample announcement with location", "[osc]") {
  auto a = flute_assignment();
  a.location = GeoLocation{35.39, 139.43};
  a.detected_midi.reset();
  const auto m = decode(encode(sample_announce(a)));
  REQUIRE(std::get<float>(m.args[4]) == 60.0f);
  REQUIRE(std::get<float>(m.args[5]) == static_cast<float>(35.39));
  REQUIRE(std::get<float>(m.args[6]) == static_cast<float>(139.43));
  REQUIRE(std::abs(std::get<float>(m.args[5]) - 35.39) < 1e-5);
  REQUIRE(std::get<std::int32_t>(m.args[7]) == 1);
}

TEST_CASE("note messages parse into events", "[osc]") {
  const auto ev = parse_note(Message{"/exsampling/note", {std::string("Piano"), std::int32_t{64}, std::int32_t{100},
                                                          std::int32_t{250}}});
  REQUIRE(ev.instrument == InstrumentTrack::Piano);
  REQUIRE(ev.note == 64);
  REQUIRE(ev.velocity == 100);
  REQUIRE(ev.duration_ms == 250);
  REQUIRE(ev.onset_ms == 0);
  REQUIRE(parse_note(decode(encode(note_message(ev)))).note == 64);

  REQUIRE_THROWS_AS(parse_note(Message{"/other", {}}), Error);
  REQUIRE_THROWS_AS(parse_note(Message{"/exsampling/note", {std::string("Piano"), 1.0f, std::int32_t{1},
                                                            std::int32_t{1}}}),
                    Error);
  REQUIRE_THROWS_AS(parse_note(Message{"/exsampling/note", {std::string("Kazoo"), std::int32_t{60},
                                                            std::int32_t{1}, std::int32_t{1}}}),
                    Error);
  REQUIRE_THROWS_AS(parse_note(Message{"/exsampling/note", {std::string("Piano"), std::int32_t{128},
                                                            std::int32_t{1}, std::int32_t{1}}}),
                    Error);
}

TEST_CASE("endpoints parse host:port", "[osc]") {
  const auto ep = Endpoint::parse("127.0.0.1:9000");
  REQUIRE(ep.host == "127.0.0.1");
  REQUIRE(ep.port == 9000);
  REQUIRE(Endpoint::parse(":8080").host == "0.0.0.0");
  REQUIRE_THROWS_AS(Endpoint::parse("localhost"), Error);
  REQUIRE_THROWS_AS(Endpoint::parse("h:99999"), Error);
  REQUIRE_THROWS_AS(Endpoint::parse("h:12x"), Error);
}

TEST_CASE("loopback send and receive", "[osc]") {
  testosc::Capture cap;
  UdpSender sender(cap.endpoint());
  const Message m{"/exsampling/test", {std::int32_t{7}, 2.5f, std::string("hi"), Blob{{1, 2, 3}}}};
  sender.send(m);
  const auto got = cap.wait_for(1, std::chrono::seconds(2));
  REQUIRE(got.size() == 1);
  REQUIRE(got[0].message.has_value());
  REQUIRE(*got[0].message == m);
}

TEST_CASE("garbage datagrams are reported and the listener keeps going", "[osc]") {
  testosc::Capture cap;
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(cap.endpoint().port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  const char junk[] = "hello there";
  ::sendto(fd, junk, 11, 0, reinterpret_cast<const sockaddr*>(&addr), sizeof addr);
  ::close(fd);

  UdpSender(cap.endpoint()).send({"/after", {}});
  const auto got = cap.wait_for(2, std::chrono::seconds(2));
  REQUIRE(got.size() == 2);
  REQUIRE_FALSE(got[0].message.has_value());
  REQUIRE_FALSE(got[0].error.empty());
  REQUIRE(got[0].raw.size() == 11);
  REQUIRE(got[1].message->address == "/after");
}

TEST_CASE("a hundred datagrams all arrive intact", "[osc]") {
  testosc::Capture cap;
  UdpSender sender(cap.endpoint());
  std::set<std::int32_t> sent;
  for (std::int32_t i = 0; i < 100; ++i) {
    sender.send({"/n", {i, std::string(static_cast<std::size_t>(i), 'x')}});
    sent.insert(i);
  }
  const auto got = cap.wait_for(100, std::chrono::seconds(5));
  REQUIRE(got.size() == 100);
  std::set<std::int32_t> seen;
  for (const auto& r : got) {
    REQUIRE(r.message.has_value());
    const auto i = std::get<std::int32_t>(r.message->args[0]);
    REQUIRE(std::get<std::string>(r.message->args[1]) == std::string(static_cast<std::size_t>(i), 'x'));
    seen.insert(i);
  }
  REQUIRE(seen == sent);
}
