#include "sec/protocol.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "sec/codec.hpp"

namespace sec {
namespace {

struct KindName {
  MessageKind kind;
  std::string_view name;
};

constexpr KindName kKinds[] = {
    {MessageKind::Hello, "hello"},         {MessageKind::GetBatch, "get-batch"},
    {MessageKind::Batch, "batch"},         {MessageKind::Report, "report"},
    {MessageKind::Ack, "ack"},             {MessageKind::Snapshot, "snapshot"},
    {MessageKind::SnapshotReply, "snapshot-reply"}, {MessageKind::Error, "error"},
};

[[noreturn]] void malformed(const std::string& what) { throw Error(Errc::Parse, what); }

template <typename Body>
const Body& body_as(const Message& m) {
  const auto* body = std::get_if<Body>(&m.body);
  if (body == nullptr) {
    throw Error(Errc::BadConfig, "body does not match message kind " + std::string(to_string(m.kind)));
  }
  return *body;
}

std::string keyed_reals(const std::vector<std::pair<CategoryKey, double>>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out.push_back(',');
    out += items[i].first.str();
    out.push_back(':');
    out += codec::format_real(items[i].second);
  }
  return out;
}

std::vector<std::string_view> list_items(std::string_view value) {
  if (value.empty()) return {};
  return codec::split(value, ',');
}

std::pair<std::string_view, std::string_view> split_pair(std::string_view item) {
  const auto colon = item.find(':');
  if (colon == std::string_view::npos) malformed("list item without ':'");
  return {item.substr(0, colon), item.substr(colon + 1)};
}

std::vector<std::pair<CategoryKey, double>> parse_keyed_reals(std::string_view value) {
  std::vector<std::pair<CategoryKey, double>> out;
  for (auto item : list_items(value)) {
    const auto [key, real] = split_pair(item);
    out.emplace_back(CategoryKey::parse(key), codec::parse_real(real));
  }
  return out;
}

class FieldReader {
 public:
  FieldReader(std::vector<std::pair<std::string_view, std::string_view>> fields)
      : fields_(std::move(fields)) {}

  std::string_view take(std::string_view name) {
    if (next_ >= fields_.size() || fields_[next_].first != name) {
      malformed("expected field '" + std::string(name) + "'");
    }
    return fields_[next_++].second;
  }
  bool has(std::string_view name) const {
    return next_ < fields_.size() && fields_[next_].first == name;
  }
  void finish() const {
    if (next_ != fields_.size()) {
      malformed("unexpected field '" + std::string(fields_[next_].first) + "'");
    }
  }

 private:
  std::vector<std::pair<std::string_view, std::string_view>> fields_;
  std::size_t next_ = 0;
};

}  // namespace

std::string_view to_string(MessageKind kind) noexcept {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  return "?";
}

std::string serialize(const Message& m) {
  std::string out(to_string(m.kind));
  out += " step=" + std::to_string(m.step);
  auto field = [&](std::string_view name, const std::string& value) {
    out.push_back(' ');
    out += name;
    out.push_back('=');
    out += value;
  };
  switch (m.kind) {
    case MessageKind::Hello: {
      const auto& b = body_as<HelloBody>(m);
      field("version", codec::escape(b.version));
      if (b.server) {
        field("categories", std::to_string(b.server->categories));
        field("batch-size", std::to_string(b.server->batch_size));
        field("alpha", codec::format_real(b.server->alpha));
        field("tau", codec::format_real(b.server->tau));
      }
      break;
    }
    case MessageKind::GetBatch:
    case MessageKind::Snapshot:
      body_as<std::monostate>(m);
      break;
    case MessageKind::Batch: {
      const auto& b = body_as<BatchBody>(m);
      std::string entries;
      for (std::size_t i = 0; i < b.entries.size(); ++i) {
        if (i > 0) entries.push_back(',');
        entries += codec::escape(b.entries[i].first) + ":" + b.entries[i].second.str();
      }
      field("size", std::to_string(b.entries.size()));
      field("entries", entries);
      break;
    }
    case MessageKind::Report: {
      const auto& b = body_as<ReportBody>(m);
      std::string values;
      for (std::size_t i = 0; i < b.values.size(); ++i) {
        if (i > 0) values.push_back(',');
        values += codec::escape(b.values[i].first) + ":" + codec::format_real(b.values[i].second);
      }
      field("values", values);
      break;
    }
    case MessageKind::Ack:
      field("rewards", keyed_reals(body_as<AckBody>(m).rewards));
      break;
    case MessageKind::SnapshotReply:
      field("q", keyed_reals(body_as<SnapshotReplyBody>(m).q));
      break;
    case MessageKind::Error: {
      const auto& b = body_as<ErrorBody>(m);
      field("code", codec::escape(b.code));
      field("message", codec::escape(b.message));
      break;
    }
  }
  return out;
}

static Message parse_message_fields(std::string_view line);

Message parse_message(std::string_view line) {
  try {
    return parse_message_fields(line);
  } catch (const Error& e) {
    if (e.code() == Errc::Parse) throw;
    throw Error(Errc::Parse, e.what());
  }
}

static Message parse_message_fields(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.empty()) malformed("empty line");
  const auto tokens = codec::split(line, ' ');
  Message m;
  bool known = false;
  for (const auto& k : kKinds) {
    if (k.name == tokens[0]) {
      m.kind = k.kind;
      known = true;
    }
  }
  if (!known) malformed("unknown message kind '" + std::string(tokens[0]) + "'");
  std::vector<std::pair<std::string_view, std::string_view>> fields;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos || eq == 0) malformed("field without name=value");
    fields.emplace_back(tokens[i].substr(0, eq), tokens[i].substr(eq + 1));
  }
  FieldReader reader(std::move(fields));
  m.step = codec::parse_u64(reader.take("step"));
  switch (m.kind) {
    case MessageKind::Hello: {
      HelloBody b;
      b.version = codec::unescape(reader.take("version"));
      if (reader.has("categories")) {
        ServerInfo info;
        info.categories = codec::parse_u64(reader.take("categories"));
        info.batch_size = codec::parse_u64(reader.take("batch-size"));
        info.alpha = codec::parse_real(reader.take("alpha"));
        info.tau = codec::parse_real(reader.take("tau"));
        b.server = info;
      }
      m.body = std::move(b);
      break;
    }
    case MessageKind::GetBatch:
    case MessageKind::Snapshot:
      m.body = std::monostate{};
      break;
    case MessageKind::Batch: {
      BatchBody b;
      const auto size = codec::parse_u64(reader.take("size"));
      for (auto item : list_items(reader.take("entries"))) {
        const auto [id, key] = split_pair(item);
        b.entries.emplace_back(codec::unescape(id), CategoryKey::parse(key));
      }
      if (size != b.entries.size()) malformed("batch size does not match entry count");
      m.body = std::move(b);
      break;
    }
    case MessageKind::Report: {
      ReportBody b;
      for (auto item : list_items(reader.take("values"))) {
        const auto [id, real] = split_pair(item);
        b.values.emplace_back(codec::unescape(id), codec::parse_real(real));
      }
      m.body = std::move(b);
      break;
    }
    case MessageKind::Ack:
      m.body = AckBody{parse_keyed_reals(reader.take("rewards"))};
      break;
    case MessageKind::SnapshotReply:
      m.body = SnapshotReplyBody{parse_keyed_reals(reader.take("q"))};
      break;
    case MessageKind::Error: {
      ErrorBody b;
      b.code = codec::unescape(reader.take("code"));
      b.message = codec::unescape(reader.take("message"));
      m.body = std::move(b);
      break;
    }
  }
  reader.finish();
  return m;
}

namespace proto {

Message hello(std::uint64_t step, std::optional<ServerInfo> server) {
  return {MessageKind::Hello, step, HelloBody{std::string(kProtocolVersion), server}};
}

Message get_batch(std::uint64_t step) { return {MessageKind::GetBatch, step, std::monostate{}}; }

Message batch(const Batch& batch) {
  BatchBody body;
  for (const auto& entry : batch.entries) body.entries.emplace_back(entry.problem_id, entry.category);
  return {MessageKind::Batch, batch.step, std::move(body)};
}

Message report(std::uint64_t step, std::vector<std::pair<std::string, double>> values) {
  return {MessageKind::Report, step, ReportBody{std::move(values)}};
}

Message ack(std::uint64_t step, std::span<const CategoryReward> rewards) {
  AckBody body;
  for (const auto& r : rewards) body.rewards.emplace_back(r.category, r.reward);
  return {MessageKind::Ack, step, std::move(body)};
}

Message snapshot(std::uint64_t step) { return {MessageKind::Snapshot, step, std::monostate{}}; }

Message snapshot_reply(const QTable& q) {
  SnapshotReplyBody body;
  for (std::size_t i = 0; i < q.keys.size(); ++i) {
    body.q.emplace_back(q.keys[i], q.values(static_cast<Eigen::Index>(i)));
  }
  return {MessageKind::SnapshotReply, q.step, std::move(body)};
}

Message error(std::uint64_t step, std::string code, std::string message) {
  return {MessageKind::Error, step, ErrorBody{std::move(code), std::move(message)}};
}

}  // namespace proto

std::string serialize_checkpoint(const EngineState& state, const Registry& registry) {
  std::ostringstream out;
  out << kCheckpointMagic << kCheckpointVersion << '\n';
  out << "registry " << registry.fingerprint() << '\n';
  out << "alpha " << codec::format_real(state.config.alpha) << '\n';
  out << "tau " << codec::format_real(state.config.tau) << '\n';
  out << "batch-size " << state.config.batch_size << '\n';
  out << "seed " << state.config.seed << '\n';
  out << "dedupe " << (state.config.dedupe_within_batch ? 1 : 0) << '\n';
  out << "step " << state.q.step << '\n';
  out << "stream category " << state.streams.category.position() << '\n';
  out << "stream problem " << state.streams.problem.position() << '\n';
  for (std::size_t i = 0; i < state.q.keys.size(); ++i) {
    out << "q " << state.q.keys[i].str() << ' '
        << codec::format_real(state.q.values(static_cast<Eigen::Index>(i))) << '\n';
  }
  std::string body = out.str();
  char crc[32];
  std::snprintf(crc, sizeof crc, "crc32 %08x\n", codec::crc32(body));
  return body + crc;
}

EngineState parse_checkpoint(std::string_view text, const Registry& registry) {
  const auto first_nl = text.find('\n');
  const std::string_view magic_line = text.substr(0, first_nl);
  if (magic_line.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error(Errc::CorruptFile, "not a checkpoint file");
  }
  try {
    if (codec::parse_u64(magic_line.substr(kCheckpointMagic.size())) !=
        static_cast<std::uint64_t>(kCheckpointVersion)) {
      throw Error(Errc::VersionMismatch, "checkpoint version " +
                                             std::string(magic_line.substr(kCheckpointMagic.size())) +
                                             " is not supported");
    }
  } catch (const Error& e) {
    if (e.code() == Errc::VersionMismatch) throw;
    throw Error(Errc::CorruptFile, "bad checkpoint header");
  }

  const auto crc_pos = text.rfind("crc32 ");
  if (crc_pos == std::string_view::npos || crc_pos == 0 || text[crc_pos - 1] != '\n' ||
      text.back() != '\n') {
    throw Error(Errc::CorruptFile, "checkpoint is truncated");
  }
  char expected[16];
  std::snprintf(expected, sizeof expected, "%08x", codec::crc32(text.substr(0, crc_pos)));
  if (text.substr(crc_pos + 6, text.size() - crc_pos - 7) != expected) {
    throw Error(Errc::CorruptFile, "checkpoint checksum mismatch");
  }

  std::map<std::string, std::string> scalars;
  std::vector<std::pair<std::string, std::string>> q_lines;
  std::istringstream in{std::string(text.substr(first_nl + 1, crc_pos - first_nl - 1))};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::string tag, a, b;
    words >> tag >> a;
    if (tag == "q" || tag == "stream") {
      words >> b;
      if (tag == "q") {
        q_lines.emplace_back(a, b);
      } else {
        scalars["stream-" + a] = b;
      }
    } else {
      scalars[tag] = a;
    }
  }
  auto need = [&](const std::string& name) -> const std::string& {
    const auto it = scalars.find(name);
    if (it == scalars.end()) throw Error(Errc::CorruptFile, "checkpoint lacks '" + name + "'");
    return it->second;
  };
  if (need("registry") != registry.fingerprint()) {
    throw Error(Errc::RegistryMismatch, "checkpoint was written for a different registry");
  }
  try {
    EngineState state;
    state.config.alpha = codec::parse_real(need("alpha"));
    state.config.tau = codec::parse_real(need("tau"));
    state.config.batch_size = codec::parse_u64(need("batch-size"));
    state.config.seed = codec::parse_u64(need("seed"));
    state.config.dedupe_within_batch = need("dedupe") == "1";
    state.streams.category = RandomStream(state.config.seed, StreamId::Category,
                                          codec::parse_u64(need("stream-category")));
    state.streams.problem = RandomStream(state.config.seed, StreamId::Problem,
                                         codec::parse_u64(need("stream-problem")));
    state.q = init_qtable(registry.categories());
    state.q.step = codec::parse_u64(need("step"));
    if (q_lines.size() != registry.size()) throw Error(Errc::CorruptFile, "Q vector size mismatch");
    for (std::size_t i = 0; i < q_lines.size(); ++i) {
      if (CategoryKey::parse(q_lines[i].first) != registry.category(i)) {
        throw Error(Errc::RegistryMismatch, "checkpoint arm order differs from registry");
      }
      state.q.values(static_cast<Eigen::Index>(i)) = codec::parse_real(q_lines[i].second);
    }
    state.config.validate();
    return state;
  } catch (const Error& e) {
    if (e.code() == Errc::RegistryMismatch || e.code() == Errc::CorruptFile) throw;
    throw Error(Errc::CorruptFile, e.what());
  }
}

void save_checkpoint(const EngineState& state, const Registry& registry,
                     const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
    out << serialize_checkpoint(state, registry);
    if (!out.flush()) throw Error(Errc::Io, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

EngineState load_checkpoint(const std::filesystem::path& path, const Registry& registry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), registry);
}

SidecarServer::SidecarServer(const Registry& registry, BanditConfig config, ServerOptions options)
    : registry_(&registry), engine_(registry, config), options_(std::move(options)) {}

SidecarServer::SidecarServer(const Registry& registry, EngineState state, ServerOptions options)
    : registry_(&registry), engine_(registry, std::move(state)), options_(std::move(options)) {}

SidecarServer::Reply SidecarServer::fail(std::string_view code, const std::string& message) {
  return {{serialize(proto::error(engine_.step_index(), std::string(code), message))}, true};
}

SidecarServer::Reply SidecarServer::handle_line(std::string_view line) {
  Message message;
  try {
    message = parse_message(line);
  } catch (const Error& e) {
    return fail(errcode::kMalformed, e.what());
  }
  const std::uint64_t step = engine_.step_index();

  if (phase_ == Phase::AwaitHello) {
    if (message.kind != MessageKind::Hello) {
      return fail(errcode::kUnexpected, "expected hello, got " + std::string(to_string(message.kind)));
    }
    const auto& hello = std::get<HelloBody>(message.body);
    if (hello.version != kProtocolVersion) {
      return fail(errcode::kVersion, "server speaks " + std::string(kProtocolVersion) +
                                         ", client asked for " + hello.version);
    }
    phase_ = Phase::Ready;
    const auto& cfg = engine_.config();
    return {{serialize(proto::hello(step, ServerInfo{registry_->size(), cfg.batch_size,
                                                     cfg.alpha, cfg.tau}))}};
  }

  switch (message.kind) {
    case MessageKind::GetBatch: {
      if (phase_ == Phase::BatchOutstanding) {
        return fail(errcode::kOutstanding, "batch for step " + std::to_string(step) + " not yet reported");
      }
      if (message.step != step) {
        return fail(errcode::kStepMismatch, "step mismatch: requested " + std::to_string(message.step) +
                                                ", engine is at " + std::to_string(step));
      }
      outstanding_ = engine_.propose();
      phase_ = Phase::BatchOutstanding;
      return {{serialize(proto::batch(*outstanding_))}};
    }
    case MessageKind::Report:
      return on_report(message);
    case MessageKind::Snapshot:
      if (message.step != step) {
        return fail(errcode::kStepMismatch, "step mismatch: snapshot for " + std::to_string(message.step) +
                                                ", engine is at " + std::to_string(step));
      }
      return {{serialize(proto::snapshot_reply(engine_.q()))}};
    default:
      return fail(errcode::kUnexpected, std::string(to_string(message.kind)) + " is not a request");
  }
}

SidecarServer::Reply SidecarServer::on_report(const Message& message) {
  const std::uint64_t step = engine_.step_index();
  if (phase_ != Phase::BatchOutstanding) {
    return fail(errcode::kNoBatch, "report without an outstanding batch");
  }
  if (message.step != outstanding_->step) {
    return fail(errcode::kStepMismatch, "step mismatch: report for " + std::to_string(message.step) +
                                            ", batch was issued for " + std::to_string(outstanding_->step));
  }
  const auto& pairs = std::get<ReportBody>(message.body).values;
  const auto& entries = outstanding_->entries;
  for (const auto& [id, value] : pairs) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      return fail(errcode::kBadValue, "advantage for '" + id + "' must be finite and non-negative");
    }
  }

  std::vector<double> values;
  bool positional = pairs.size() == entries.size();
  for (std::size_t i = 0; positional && i < entries.size(); ++i) {
    positional = pairs[i].first == entries[i].problem_id;
  }
  if (positional) {
    for (const auto& pair : pairs) values.push_back(pair.second);
  } else {
    std::set<std::string> batch_ids;
    for (const auto& entry : entries) batch_ids.insert(entry.problem_id);
    std::map<std::string, double> by_id;
    for (const auto& [id, value] : pairs) {
      if (batch_ids.count(id) == 0) return fail(errcode::kUnknownId, "problem '" + id + "' is not in the batch");
      if (!by_id.emplace(id, value).second) {
        return fail(errcode::kMalformed, "problem '" + id + "' reported twice");
      }
    }
    for (const auto& entry : entries) {
      const auto it = by_id.find(entry.problem_id);
      if (it == by_id.end()) {
        return fail(errcode::kMissing, "no advantage for problem '" + entry.problem_id + "'");
      }
      values.push_back(it->second);
    }
  }

  const auto result = engine_.commit(*outstanding_, values);
  if (options_.step_log != nullptr) {
    *options_.step_log << make_step_record(result.batch, registry_->categories(), result.rewards,
                                           result.q.values)
                              .to_json()
                       << '\n';
    options_.step_log->flush();
  }
  if (options_.checkpoint_path) save_checkpoint(engine_.state(), *registry_, *options_.checkpoint_path);
  outstanding_.reset();
  phase_ = Phase::Ready;
  return {{serialize(proto::ack(step, result.rewards))}};
}

void SidecarServer::disconnect() {
  outstanding_.reset();
  phase_ = Phase::AwaitHello;
  if (options_.checkpoint_path) save_checkpoint(engine_.state(), *registry_, *options_.checkpoint_path);
}

}  // namespace sec
