#pragma once

// Line-delimited sidecar protocol (version "sec/1") that lets an external
// trainer drive the curriculum engine, plus engine checkpoints. The wire
// grammar is documented in PROTOCOL.md.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "sec/bandit.hpp"
#include "sec/category.hpp"

namespace sec {

inline constexpr std::string_view kProtocolVersion = "sec/1";
inline constexpr std::string_view kCheckpointMagic = "sec-checkpoint/";
inline constexpr int kCheckpointVersion = 1;

enum class MessageKind { Hello, GetBatch, Batch, Report, Ack, Snapshot, SnapshotReply, Error };

std::string_view to_string(MessageKind kind) noexcept;

struct ServerInfo {
  std::size_t categories = 0;
  std::size_t batch_size = 0;
  double alpha = 0.0;
  double tau = 0.0;
  friend bool operator==(const ServerInfo&, const ServerInfo&) = default;
};

struct HelloBody {
  std::string version;
  std::optional<ServerInfo> server;  // present in the server's reply
  friend bool operator==(const HelloBody&, const HelloBody&) = default;
};

struct BatchBody {
  std::vector<std::pair<std::string, CategoryKey>> entries;
  friend bool operator==(const BatchBody&, const BatchBody&) = default;
};

struct ReportBody {
  std::vector<std::pair<std::string, double>> values;
  friend bool operator==(const ReportBody&, const ReportBody&) = default;
};

struct AckBody {
  std::vector<std::pair<CategoryKey, double>> rewards;
  friend bool operator==(const AckBody&, const AckBody&) = default;
};

struct SnapshotReplyBody {
  std::vector<std::pair<CategoryKey, double>> q;
  friend bool operator==(const SnapshotReplyBody&, const SnapshotReplyBody&) = default;
};

struct ErrorBody {
  std::string code;
  std::string message;
  friend bool operator==(const ErrorBody&, const ErrorBody&) = default;
};

using MessageBody = std::variant<std::monostate, HelloBody, BatchBody, ReportBody, AckBody,
                                 SnapshotReplyBody, ErrorBody>;

struct Message {
  MessageKind kind = MessageKind::Hello;
  std::uint64_t step = 0;
  MessageBody body;

  friend bool operator==(const Message&, const Message&) = default;
};

/// Throws Error(BadConfig) if the body does not match the kind.
std::string serialize(const Message& message);
/// Throws Error(Parse) on anything that is not exactly one valid message.
Message parse_message(std::string_view line);

namespace proto {
Message hello(std::uint64_t step, std::optional<ServerInfo> server = std::nullopt);
Message get_batch(std::uint64_t step);
Message batch(const Batch& batch);
Message report(std::uint64_t step, std::vector<std::pair<std::string, double>> values);
Message ack(std::uint64_t step, std::span<const CategoryReward> rewards);
Message snapshot(std::uint64_t step);
Message snapshot_reply(const QTable& q);
Message error(std::uint64_t step, std::string code, std::string message);
}  // namespace proto

/// Error codes carried in `error` messages.
namespace errcode {
inline constexpr std::string_view kMalformed = "malformed";
inline constexpr std::string_view kVersion = "version-mismatch";
inline constexpr std::string_view kUnexpected = "unexpected-message";
inline constexpr std::string_view kStepMismatch = "step-mismatch";
inline constexpr std::string_view kOutstanding = "batch-outstanding";
inline constexpr std::string_view kNoBatch = "no-batch";
inline constexpr std::string_view kUnknownId = "unknown-problem-id";
inline constexpr std::string_view kMissing = "missing-advantage";
inline constexpr std::string_view kBadValue = "bad-value";
}  // namespace errcode

std::string serialize_checkpoint(const EngineState& state, const Registry& registry);
/// Throws VersionMismatch, CorruptFile or RegistryMismatch.
EngineState parse_checkpoint(std::string_view text, const Registry& registry);
void save_checkpoint(const EngineState& state, const Registry& registry,
                     const std::filesystem::path& path);
EngineState load_checkpoint(const std::filesystem::path& path, const Registry& registry);

struct ServerOptions {
  std::optional<std::filesystem::path> checkpoint_path;  // rewritten after every ack
  std::ostream* step_log = nullptr;  // one StepRecord JSON line per acknowledged step
};

/// Transport-independent protocol state machine. One connection at a time;
/// engine state from acknowledged steps survives disconnects and errors.
class SidecarServer {
 public:
  SidecarServer(const Registry& registry, BanditConfig config, ServerOptions options = {});
  SidecarServer(const Registry& registry, EngineState state, ServerOptions options = {});

  struct Reply {
    std::vector<std::string> lines;
    bool close = false;
  };

  Reply handle_line(std::string_view line);
  /// End of connection: drops any outstanding batch and rewrites the
  /// checkpoint if a path is configured.
  void disconnect();

  const CurriculumEngine& engine() const noexcept { return engine_; }

 private:
  enum class Phase { AwaitHello, Ready, BatchOutstanding };

  Reply fail(std::string_view code, const std::string& message);
  Reply on_report(const Message& message);

  const Registry* registry_;
  CurriculumEngine engine_;
  ServerOptions options_;
  Phase phase_ = Phase::AwaitHello;
  std::optional<Batch> outstanding_;
};

}  // namespace sec
