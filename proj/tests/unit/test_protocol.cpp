#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "sec/codec.hpp"
#include "sec/error.hpp"
#include "sec/learner.hpp"
#include "sec/protocol.hpp"
#include "sec/transport.hpp"

using namespace sec;

namespace {
const Registry& test_registry() {
  static const Registry reg = [] {
    Scenario sc = load_scenario("single-task-3lvl");
    sc.pool_size = 12;
    return build_registry(sc.training_problems());
  }();
  return reg;
}

BanditConfig test_config() {
  BanditConfig cfg;
  cfg.batch_size = 6;
  cfg.seed = 21;
  return cfg;
}

std::string line_of(const Message& m) { return serialize(m); }

// Deterministic stand-in for a trainer: a value per slot from the id and step.
std::vector<std::pair<std::string, double>> positional_values(const Message& batch) {
  std::vector<std::pair<std::string, double>> values;
  const auto& entries = std::get<BatchBody>(batch.body).entries;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    values.emplace_back(entries[i].first, 0.05 * static_cast<double>((batch.step * 3 + i) % 11));
  }
  return values;
}

struct Session {
  SidecarServer& server;
  std::vector<std::string> transcript;

  Message send(const Message& m) { return send_line(serialize(m)); }
  Message send_line(const std::string& line) {
    transcript.push_back(line);
    const auto reply = server.handle_line(line);
    REQUIRE(reply.lines.size() == 1);
    transcript.push_back(reply.lines[0]);
    return parse_message(reply.lines[0]);
  }
  SidecarServer::Reply raw(const std::string& line) { return server.handle_line(line); }

  Message step() {
    const std::uint64_t t = server.engine().step_index();
    const Message batch = send(proto::get_batch(t));
    REQUIRE(batch.kind == MessageKind::Batch);
    return send(proto::report(batch.step, positional_values(batch)));
  }
};

std::string error_code(const SidecarServer::Reply& reply) {
  REQUIRE(reply.lines.size() == 1);
  const Message m = parse_message(reply.lines[0]);
  REQUIRE(m.kind == MessageKind::Error);
  CHECK(reply.close);
  return std::get<ErrorBody>(m.body).code;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::Io;
}

std::filesystem::path scratch(const std::string& name) {
  const auto path = std::filesystem::temp_directory_path() / ("sec-proto-" + name);
  std::filesystem::remove(path);
  return path;
}
}  // namespace

TEST_CASE("messages round-trip through the wire format") {
  const CategoryKey key({{"task", "a b,c"}, {"difficulty", "L2"}});
  const std::vector<Message> messages{
      proto::hello(0),
      proto::hello(7, ServerInfo{3, 64, 0.5, 0.25}),
      proto::get_batch(12),
      {MessageKind::Batch, 3, BatchBody{{{"id with space", key}, {"x:y,z%", CategoryKey("difficulty", "L1")}}}},
      {MessageKind::Batch, 4, BatchBody{}},
      proto::report(3, {{"id with space", 0.1}, {"x:y,z%", 1.0 / 3.0}}),
      {MessageKind::Ack, 3, AckBody{{{key, 0.1 + 0.2}}}},
      proto::snapshot(9),
      {MessageKind::SnapshotReply, 9, SnapshotReplyBody{{{key, -0.0}, {CategoryKey("difficulty", "L3"), 1e-300}}}},
      proto::error(2, "step-mismatch", "report for 5, batch was issued for 4\nüñí"),
  };
  for (const auto& m : messages) {
    const std::string line = serialize(m);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(parse_message(line) == m);
    CHECK(serialize(parse_message(line)) == line);
  }
}

TEST_CASE("random report bodies round-trip exactly") {
  RandomStream rng(77, StreamId::Learner);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, double>> values;
    const auto n = rng.below(6);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string id;
      const auto len = 1 + rng.below(8);
      for (std::uint64_t c = 0; c < len; ++c) id.push_back(static_cast<char>(1 + rng.below(255)));
      values.emplace_back(id, rng.uniform() * std::pow(10.0, static_cast<double>(rng.below(20)) - 10.0));
    }
    const Message m = proto::report(rng.below(1000), values);
    CHECK(parse_message(serialize(m)) == m);
  }
}

TEST_CASE("malformed lines are rejected") {
  for (const char* line : {"", "bogus step=1", "get-batch", "get-batch step=x", "get-batch step=1 extra=2",
                           "batch step=1 size=2 entries=a:difficulty=L1", "report step=1 values=a",
                           "hello step=0", "report step=1 values=a:notanumber", "ack step=1 rewards=%zz:1"}) {
    CAPTURE(line);
    CHECK(code_of([&] { parse_message(line); }) == Errc::Parse);
  }
  CHECK(parse_message("get-batch step=4\r") == proto::get_batch(4));
  CHECK(code_of([] { serialize(Message{MessageKind::Ack, 0, std::monostate{}}); }) == Errc::BadConfig);
}

TEST_CASE("happy path matches an in-process engine") {
  SidecarServer server(test_registry(), test_config());
  Session s{server};
  const Message hello = s.send(proto::hello(0));
  REQUIRE(hello.kind == MessageKind::Hello);
  const auto info = *std::get<HelloBody>(hello.body).server;
  CHECK(info.batch_size == 6);
  CHECK(info.categories == 3);
  CHECK(hello.step == 0);

  CurriculumEngine reference(test_registry(), test_config());
  const Message batch = s.send(proto::get_batch(0));
  REQUIRE(batch.kind == MessageKind::Batch);
  CHECK(std::get<BatchBody>(batch.body).entries.size() == 6);
  CHECK(batch == proto::batch(reference.propose()));

  const auto values = positional_values(batch);
  const Message ack = s.send(proto::report(0, values));
  REQUIRE(ack.kind == MessageKind::Ack);
  std::vector<double> plain;
  for (const auto& v : values) plain.push_back(v.second);
  const StepResult expected = reference.commit(reference.propose(), plain);
  CHECK(ack == proto::ack(0, expected.rewards));

  const Message snap = s.send(proto::snapshot(1));
  CHECK(snap == proto::snapshot_reply(reference.q()));
  CHECK(snap.step == 1);
}

TEST_CASE("protocol errors") {
  SidecarServer server(test_registry(), test_config());
  Session s{server};

  SUBCASE("request before hello") { CHECK(error_code(s.raw(line_of(proto::get_batch(0)))) == errcode::kUnexpected); }
  SUBCASE("version mismatch") {
    const Message bad{MessageKind::Hello, 0, HelloBody{"sec/0", std::nullopt}};
    CHECK(error_code(s.raw(serialize(bad))) == errcode::kVersion);
  }
  SUBCASE("malformed line") {
    s.send(proto::hello(0));
    CHECK(error_code(s.raw("get-batch step=")) == errcode::kMalformed);
  }
  SUBCASE("double fetch") {
    s.send(proto::hello(0));
    s.send(proto::get_batch(0));
    CHECK(error_code(s.raw(line_of(proto::get_batch(0)))) == errcode::kOutstanding);
  }
  SUBCASE("report without batch") {
    s.send(proto::hello(0));
    CHECK(error_code(s.raw(line_of(proto::report(0, {})))) == errcode::kNoBatch);
  }
  SUBCASE("step mismatch on report") {
    s.send(proto::hello(0));
    for (int i = 0; i < 4; ++i) s.step();
    const Message batch = s.send(proto::get_batch(4));
    CHECK(batch.step == 4);
    CHECK(error_code(s.raw(line_of(proto::report(5, positional_values(batch))))) == errcode::kStepMismatch);
    CHECK(server.engine().step_index() == 4);
  }
  SUBCASE("step mismatch on get-batch") {
    s.send(proto::hello(0));
    CHECK(error_code(s.raw(line_of(proto::get_batch(3)))) == errcode::kStepMismatch);
  }
  SUBCASE("partial report") {
    s.send(proto::hello(0));
    const Message batch = s.send(proto::get_batch(0));
    std::map<std::string, double> unique;
    for (const auto& [id, value] : positional_values(batch)) unique[id] = value;
    unique.erase(unique.begin());
    const std::vector<std::pair<std::string, double>> values(unique.begin(), unique.end());
    CHECK(error_code(s.raw(line_of(proto::report(0, values)))) == errcode::kMissing);
    CHECK(server.engine().step_index() == 0);
  }
  SUBCASE("unknown id") {
    s.send(proto::hello(0));
    const Message batch = s.send(proto::get_batch(0));
    auto values = positional_values(batch);
    values[0].first = "not-in-batch";
    CHECK(error_code(s.raw(line_of(proto::report(0, values)))) == errcode::kUnknownId);
  }
  SUBCASE("negative value") {
    s.send(proto::hello(0));
    const Message batch = s.send(proto::get_batch(0));
    auto values = positional_values(batch);
    values[1].second = -0.5;
    CHECK(error_code(s.raw(line_of(proto::report(0, values)))) == errcode::kBadValue);
  }
  SUBCASE("responses are not requests") {
    s.send(proto::hello(0));
    CHECK(error_code(s.raw(line_of(proto::ack(0, {})))) == errcode::kUnexpected);
  }
}

TEST_CASE("keyed reports share one value across repeated ids") {
  BanditConfig cfg = test_config();
  cfg.batch_size = 40;  // more slots than the 36 problems, so ids repeat
  SidecarServer server(test_registry(), cfg);
  Session s{server};
  s.send(proto::hello(0));
  const Message batch = s.send(proto::get_batch(0));
  std::map<std::string, double> unique;
  for (const auto& [id, key] : std::get<BatchBody>(batch.body).entries) unique[id] = 0.01 * static_cast<double>(id.size() + unique.size());
  REQUIRE(unique.size() < 40);
  std::vector<std::pair<std::string, double>> keyed(unique.rbegin(), unique.rend());
  const Message ack = s.send(proto::report(0, keyed));
  REQUIRE(ack.kind == MessageKind::Ack);

  CurriculumEngine reference(test_registry(), cfg);
  const Batch b = reference.propose();
  const auto rewards = aggregate_rewards(b, unique);
  CHECK(ack == proto::ack(0, rewards));
}

TEST_CASE("an abandoned batch is re-issued after reconnecting") {
  SidecarServer server(test_registry(), test_config());
  Session s{server};
  s.send(proto::hello(0));
  s.step();
  const Message first = s.send(proto::get_batch(1));
  server.disconnect();
  s.send(proto::hello(1));
  CHECK(s.send(proto::get_batch(1)) == first);
}

TEST_CASE("byte replay of a recorded session") {
  std::vector<std::string> requests, replies;
  {
    SidecarServer server(test_registry(), test_config());
    Session s{server};
    s.send(proto::hello(0));
    for (int i = 0; i < 5; ++i) s.step();
    s.send(proto::snapshot(5));
    for (std::size_t i = 0; i < s.transcript.size(); i += 2) {
      requests.push_back(s.transcript[i]);
      replies.push_back(s.transcript[i + 1]);
    }
  }
  SidecarServer replay(test_registry(), test_config());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto reply = replay.handle_line(requests[i]);
    REQUIRE(reply.lines.size() == 1);
    CHECK(reply.lines[0] == replies[i]);
  }
}

TEST_CASE("step log lines match in-process step records") {
  std::ostringstream log;
  SidecarServer server(test_registry(), test_config(), ServerOptions{std::nullopt, &log});
  Session s{server};
  s.send(proto::hello(0));
  std::vector<Message> batches;
  for (int i = 0; i < 3; ++i) {
    batches.push_back(s.send(proto::get_batch(static_cast<std::uint64_t>(i))));
    s.send(proto::report(static_cast<std::uint64_t>(i), positional_values(batches.back())));
  }
  CurriculumEngine reference(test_registry(), test_config());
  std::string expected;
  for (const auto& batch : batches) {
    std::vector<double> values;
    for (const auto& v : positional_values(batch)) values.push_back(v.second);
    const StepResult r = reference.commit(reference.propose(), values);
    expected += make_step_record(r.batch, test_registry().categories(), r.rewards, r.q.values).to_json() + "\n";
  }
  CHECK(log.str() == expected);
}

TEST_CASE("checkpoint round-trip and failure modes") {
  const Registry& reg = test_registry();
  CurriculumEngine engine(reg, test_config());
  SUBCASE("zero steps gives an all-zero Q") {
    const EngineState restored = parse_checkpoint(serialize_checkpoint(engine.state(), reg), reg);
    CHECK(restored.q.values.isZero(0.0));
    CHECK(restored.q.step == 0);
    CHECK(restored.config == test_config());
  }
  for (int i = 0; i < 7; ++i) {
    std::vector<double> values(6, 0.1 * i);
    engine.commit(engine.propose(), values);
  }
  const std::string text = serialize_checkpoint(engine.state(), reg);
  SUBCASE("exact restore") {
    const EngineState restored = parse_checkpoint(text, reg);
    CHECK(restored.q.values == engine.q().values);
    CHECK(restored.q.step == 7);
    CHECK(restored.streams == engine.state().streams);
    CHECK(CurriculumEngine(reg, restored).propose() == engine.propose());
  }
  SUBCASE("truncated") {
    for (std::size_t cut : {std::size_t{0}, std::size_t{20}, text.size() / 2, text.size() - 1}) {
      CAPTURE(cut);
      CHECK(code_of([&] { parse_checkpoint(text.substr(0, cut), reg); }) == Errc::CorruptFile);
    }
  }
  SUBCASE("flipped byte") {
    std::string bad = text;
    bad[bad.find("step ") + 5] ^= 1;
    CHECK(code_of([&] { parse_checkpoint(bad, reg); }) == Errc::CorruptFile);
  }
  SUBCASE("version") {
    std::string bad = text;
    bad.replace(0, std::string("sec-checkpoint/1").size(), "sec-checkpoint/9");
    CHECK(code_of([&] { parse_checkpoint(bad, reg); }) == Errc::VersionMismatch);
  }
  SUBCASE("other registry") {
    const Registry other = build_registry(load_scenario("reverse-failure").training_problems());
    CHECK(code_of([&] { parse_checkpoint(text, other); }) == Errc::RegistryMismatch);
  }
  SUBCASE("file save and load") {
    const auto path = scratch("ckpt");
    save_checkpoint(engine.state(), reg, path);
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    CHECK(load_checkpoint(path, reg).q.values == engine.q().values);
    std::filesystem::remove(path);
    CHECK(code_of([&] { load_checkpoint(path, reg); }) == Errc::Io);
  }
}

TEST_CASE("server restart resumes from its checkpoint") {
  const auto path = scratch("restart");
  std::string before;
  {
    SidecarServer server(test_registry(), test_config(), ServerOptions{path, nullptr});
    Session s{server};
    s.send(proto::hello(0));
    for (int i = 0; i < 3; ++i) s.step();
    before = serialize(s.send(proto::get_batch(3)));
    // No disconnect: the checkpoint written at the last ack must suffice.
  }
  SidecarServer restarted(test_registry(), load_checkpoint(path, test_registry()), ServerOptions{path, nullptr});
  Session s{restarted};
  CHECK(s.send(proto::hello(0)).step == 3);
  CHECK(serialize(s.send(proto::get_batch(3))) == before);
  std::filesystem::remove(path);
}

TEST_CASE("stream transport serves one session") {
  SidecarServer server(test_registry(), test_config());
  std::istringstream in(line_of(proto::hello(0)) + "\n" + line_of(proto::get_batch(0)) + "\n" +
                        line_of(proto::get_batch(0)) + "\n" + line_of(proto::snapshot(0)) + "\n");
  std::ostringstream out;
  serve_stream(server, in, out);
  std::istringstream replies(out.str());
  std::vector<std::string> lines;
  for (std::string l; std::getline(replies, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(parse_message(lines[1]).kind == MessageKind::Batch);
  CHECK(std::get<ErrorBody>(parse_message(lines[2]).body).code == errcode::kOutstanding);
}

TEST_CASE("transport spec parsing") {
  CHECK(TransportSpec::parse("stdio").kind == TransportSpec::Kind::Stdio);
  const auto tcp = TransportSpec::parse("tcp:8123");
  CHECK(tcp.kind == TransportSpec::Kind::Tcp);
  CHECK(tcp.port == 8123);
  CHECK_THROWS_AS(TransportSpec::parse("tcp:99999"), Error);
  CHECK_THROWS_AS(TransportSpec::parse("udp:1"), Error);
}

TEST_CASE("tcp transport on an ephemeral port") {
  SidecarServer server(test_registry(), test_config());
  std::promise<std::uint16_t> bound;
  std::thread thread([&] { serve_tcp(server, 0, [&](std::uint16_t p) { bound.set_value(p); }, 1); });
  const std::uint16_t port = bound.get_future().get();

  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  const std::string request = line_of(proto::hello(0)) + "\n" + line_of(proto::snapshot(0)) + "\n";
  REQUIRE(::send(fd, request.data(), request.size(), 0) == static_cast<ssize_t>(request.size()));
  ::shutdown(fd, SHUT_WR);
  std::string received;
  char buf[1024];
  for (ssize_t n; (n = ::recv(fd, buf, sizeof buf, 0)) > 0;) received.append(buf, static_cast<std::size_t>(n));
  ::close(fd);
  thread.join();

  std::istringstream lines(received);
  std::string hello, snap;
  std::getline(lines, hello);
  std::getline(lines, snap);
  CHECK(parse_message(hello).kind == MessageKind::Hello);
  CHECK(parse_message(snap) == proto::snapshot_reply(server.engine().q()));
}
